#ifndef PEST_ENCODER_HPP_
#define PEST_ENCODER_HPP_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pest/error.hpp"
#include "pest/linalg.hpp"
#include "pest/rng.hpp"

namespace pest {

enum class EncoderRole : std::uint8_t { image = 0, text = 1 };

/// Affine map followed by L2 normalization: z = normalize(W x + b).
struct LinearEncoder {
  Matrix weight;  // out_dim x in_dim
  Vec bias;       // out_dim
  EncoderRole role = EncoderRole::image;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  std::size_t num_params() const { return weight.rows() * weight.cols() + bias.dim(); }

  friend bool operator==(const LinearEncoder&, const LinearEncoder&) = default;
};

struct EncoderGradient {
  Matrix d_weight;
  Vec d_bias;

  static EncoderGradient zeros_like(const LinearEncoder& enc) {
    return {Matrix(enc.out_dim(), enc.in_dim()), Vec(enc.out_dim())};
  }

  EncoderGradient& operator+=(const EncoderGradient& other) {
    require(d_weight.rows() == other.d_weight.rows() && d_weight.cols() == other.d_weight.cols(),
            ErrorCode::DimMismatch, "gradient shape mismatch");
    axpy(1.0, other.d_weight.span(), d_weight.span());
    axpy(1.0, other.d_bias.span(), d_bias.span());
    return *this;
  }

  void scale(double s) {
    for (double& x : d_weight.span()) x *= s;
    for (double& x : d_bias.span()) x *= s;
  }
};

/// Fan-in uniform initialization in [-1/sqrt(in), 1/sqrt(in)], zero bias.
inline LinearEncoder init_encoder(EncoderRole role, std::size_t in_dim, std::size_t out_dim,
                                  Rng& rng) {
  require(in_dim >= 1, ErrorCode::ConfigError, "encoder in_dim must be >= 1");
  require(out_dim >= 2, ErrorCode::ConfigError, "encoder out_dim must be >= 2");
  LinearEncoder enc{Matrix(out_dim, in_dim), Vec(out_dim), role};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (double& w : enc.weight.span()) w = rng.uniform(-bound, bound);
  return enc;
}

inline Vec encode_affine(const LinearEncoder& enc, const Vec& x) {
  Vec u = matvec(enc.weight, x.span());
  axpy(1.0, enc.bias.span(), u.span());
  return u;
}

inline FeatureVec encode(const LinearEncoder& enc, const Vec& x) {
  return l2_normalize(encode_affine(enc, x));
}

/// Backpropagates d loss / d z through the normalization and the affine map.
/// With u = W x + b, n = ‖u‖ and û = u / n:  d loss / d u = (I - û ûᵀ) g / n.
inline EncoderGradient encode_backward(const LinearEncoder& enc, const Vec& x,
                                       std::span<const double> upstream) {
  require(x.dim() == enc.in_dim(), ErrorCode::DimMismatch, "input dim does not match encoder");
  require(upstream.size() == enc.out_dim(), ErrorCode::DimMismatch,
          "upstream gradient dim does not match encoder output");
  const Vec u = encode_affine(enc, x);
  const double n = norm(u.span());
  if (!(n > kZeroNormThreshold)) fail(ErrorCode::ZeroNorm, "encoder pre-activation has zero norm");

  const double radial = dot(u.span(), upstream) / n;  // ûᵀ g
  EncoderGradient g = EncoderGradient::zeros_like(enc);
  for (std::size_t r = 0; r < enc.out_dim(); ++r) {
    const double du = (upstream[r] - radial * (u[r] / n)) / n;
    g.d_bias[r] = du;
    auto row = g.d_weight.row(r);
    for (std::size_t c = 0; c < enc.in_dim(); ++c) row[c] = du * x[c];
  }
  return g;
}

/// EMA copy of an online encoder.
struct MomentumEncoder {
  LinearEncoder shadow;
  double momentum = 0.99;
};

inline MomentumEncoder make_momentum(const LinearEncoder& online, double momentum) {
  require(momentum >= 0.0 && momentum < 1.0, ErrorCode::ConfigError,
          "momentum must be in [0, 1)");
  return {online, momentum};
}

/// shadow <- rho * shadow + (1 - rho) * online, for every parameter.
inline MomentumEncoder momentum_update(MomentumEncoder m, const LinearEncoder& online) {
  require(m.shadow.in_dim() == online.in_dim() && m.shadow.out_dim() == online.out_dim(),
          ErrorCode::DimMismatch, "momentum encoder shape does not match online encoder");
  const double rho = m.momentum;
  auto blend = [rho](std::span<double> shadow, std::span<const double> live) {
    for (std::size_t i = 0; i < shadow.size(); ++i) {
      shadow[i] = rho * shadow[i] + (1.0 - rho) * live[i];
    }
  };
  blend(m.shadow.weight.span(), online.weight.span());
  blend(m.shadow.bias.span(), online.bias.span());
  return m;
}

// Flat parameter views for the optimizer: weight (row-major) then bias.

inline std::vector<double> flatten(const LinearEncoder& enc) {
  std::vector<double> out(enc.weight.span().begin(), enc.weight.span().end());
  out.insert(out.end(), enc.bias.span().begin(), enc.bias.span().end());
  return out;
}

inline std::vector<double> flatten(const EncoderGradient& g) {
  std::vector<double> out(g.d_weight.span().begin(), g.d_weight.span().end());
  out.insert(out.end(), g.d_bias.span().begin(), g.d_bias.span().end());
  return out;
}

inline void assign_flat(LinearEncoder& enc, std::span<const double> flat) {
  require(flat.size() == enc.num_params(), ErrorCode::ShapeMismatch,
          "flat parameter length does not match encoder");
  auto w = enc.weight.span();
  std::copy(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(w.size()), w.begin());
  std::copy(flat.begin() + static_cast<std::ptrdiff_t>(w.size()), flat.end(),
            enc.bias.span().begin());
}

/// FNV-1a over the raw parameter bytes; equal hashes mean bitwise-equal parameters
/// for all practical purposes.
inline std::uint64_t parameter_hash(const LinearEncoder& enc) {
  auto bytes = [](std::span<const double> v) {
    return std::span(reinterpret_cast<const unsigned char*>(v.data()), v.size() * sizeof(double));
  };
  std::uint64_t h = fnv1a(bytes(enc.weight.span()));
  h = fnv1a(bytes(enc.bias.span()), h);
  const auto role = static_cast<unsigned char>(enc.role);
  return fnv1a(std::span(&role, 1), h);
}

// Checkpoint file:
//   "PESTENC1" | u32 version | u8 role | u64 in_dim | u64 out_dim |
//   f64[out*in] weight | f64[out] bias
// Little-endian host byte order; doubles stored as raw IEEE-754 bits.

inline constexpr char kEncoderMagic[8] = {'P', 'E', 'S', 'T', 'E', 'N', 'C', '1'};
inline constexpr std::uint32_t kEncoderFormatVersion = 1;

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) fail(ErrorCode::CorruptFile, std::string("truncated while reading ") + what);
  return v;
}

inline void read_doubles(std::istream& is, std::span<double> out, const char* what) {
  is.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(out.size() * sizeof(double)));
  if (!is) fail(ErrorCode::CorruptFile, std::string("truncated while reading ") + what);
}

}  // namespace detail

inline void write_encoder(std::ostream& os, const LinearEncoder& enc) {
  os.write(kEncoderMagic, sizeof(kEncoderMagic));
  detail::write_pod(os, kEncoderFormatVersion);
  detail::write_pod(os, static_cast<std::uint8_t>(enc.role));
  detail::write_pod(os, static_cast<std::uint64_t>(enc.in_dim()));
  detail::write_pod(os, static_cast<std::uint64_t>(enc.out_dim()));
  const auto w = enc.weight.span();
  const auto b = enc.bias.span();
  os.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size_bytes()));
  os.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size_bytes()));
}

inline LinearEncoder read_encoder(std::istream& is) {
  char magic[sizeof(kEncoderMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kEncoderMagic, sizeof(magic)) != 0) {
    fail(ErrorCode::CorruptFile, "not an encoder checkpoint");
  }
  const auto version = detail::read_pod<std::uint32_t>(is, "version");
  if (version != kEncoderFormatVersion) {
    fail(ErrorCode::FormatVersionMismatch,
         "encoder checkpoint version " + std::to_string(version) + ", expected " +
             std::to_string(kEncoderFormatVersion));
  }
  const auto role = detail::read_pod<std::uint8_t>(is, "role");
  if (role > 1) fail(ErrorCode::CorruptFile, "unknown encoder role");
  const auto in_dim = detail::read_pod<std::uint64_t>(is, "in_dim");
  const auto out_dim = detail::read_pod<std::uint64_t>(is, "out_dim");
  if (in_dim == 0 || out_dim < 2 || in_dim > (1u << 20) || out_dim > (1u << 20)) {
    fail(ErrorCode::CorruptFile, "implausible encoder dimensions");
  }
  LinearEncoder enc{Matrix(out_dim, in_dim), Vec(out_dim), static_cast<EncoderRole>(role)};
  detail::read_doubles(is, enc.weight.span(), "weight");
  detail::read_doubles(is, enc.bias.span(), "bias");
  if (is.peek() != std::char_traits<char>::eof()) {
    fail(ErrorCode::CorruptFile, "trailing bytes after encoder checkpoint");
  }
  return enc;
}

inline std::string encoder_bytes(const LinearEncoder& enc) {
  std::ostringstream os(std::ios::binary);
  write_encoder(os, enc);
  return std::move(os).str();
}

inline void save_encoder(const LinearEncoder& enc, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  write_encoder(os, enc);
  if (!os) fail(ErrorCode::IoError, "failed writing " + path.string());
}

inline LinearEncoder load_encoder(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  return read_encoder(is);
}

}  // namespace pest

#endif  // PEST_ENCODER_HPP_
