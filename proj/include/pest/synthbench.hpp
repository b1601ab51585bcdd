#ifndef PEST_SYNTHBENCH_HPP_
#define PEST_SYNTHBENCH_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pest/error.hpp"
#include "pest/linalg.hpp"
#include "pest/rng.hpp"

namespace pest {

/// Generator parameters for one synthetic open-vocabulary adaptation task.
struct TaskSpec {
  std::size_t num_classes = 10;
  std::size_t concept_dim = 16;
  std::size_t input_dim = 32;
  std::size_t source_pairs_per_class = 50;
  std::size_t target_images_per_class = 50;
  std::size_t k_text_prompts = 8;
  double text_noise_sigma = 0.1;
  double image_noise_sigma = 0.25;
  double shift_strength = 0.5;
  double prompt_failure_rate = 0.1;
  std::uint64_t seed = 42;

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) fail(ErrorCode::SpecError, what);
    };
    check(num_classes >= 2, "num_classes must be >= 2");
    check(concept_dim >= 2, "concept_dim must be >= 2");
    check(input_dim >= 2, "input_dim must be >= 2");
    check(source_pairs_per_class >= 1, "source_pairs_per_class must be >= 1");
    check(target_images_per_class >= 1, "target_images_per_class must be >= 1");
    check(k_text_prompts >= 1, "k_text_prompts must be >= 1");
    check(std::isfinite(text_noise_sigma) && text_noise_sigma >= 0.0,
          "text_noise_sigma must be >= 0");
    check(std::isfinite(image_noise_sigma) && image_noise_sigma >= 0.0,
          "image_noise_sigma must be >= 0");
    check(std::isfinite(shift_strength) && shift_strength >= 0.0, "shift_strength must be >= 0");
    check(prompt_failure_rate >= 0.0 && prompt_failure_rate < 1.0,
          "prompt_failure_rate must be in [0, 1)");
  }

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

/// K raw text renders of one class. `failed[k]` marks injected failure prompts;
/// it is generator bookkeeping and never reaches the adaptation loop.
struct PromptSet {
  std::size_t class_index = 0;
  std::vector<Vec> prompts;
  std::vector<std::uint8_t> failed;

  friend bool operator==(const PromptSet&, const PromptSet&) = default;
};

struct SyntheticTask {
  TaskSpec spec;
  std::vector<Vec> concepts;  // unit class concept vectors
  Matrix source_render;       // A_s: input_dim x concept_dim
  Matrix text_render;         // B_s: input_dim x concept_dim
  Matrix rotation;            // R(shift_strength): input_dim x input_dim
  Matrix offset;              // input_dim x concept_dim
  std::vector<Vec> source_images;
  std::vector<Vec> source_texts;
  std::vector<std::size_t> source_labels;
  std::vector<Vec> target_images;
  std::vector<std::size_t> target_labels;  // hidden; evaluation only
  std::vector<Vec> class_names;            // canonical single prompt per class
  std::vector<PromptSet> prompt_sets;

  Matrix target_render() const;

  friend bool operator==(const SyntheticTask&, const SyntheticTask&) = default;
};

enum class AugmentKind : std::uint8_t { jitter, random_mask, random_scale };

/// Embedding-space stand-in for an image augmentation.
///   jitter:        x + N(0, a^2)
///   random_mask:   zero round(a * dim) coordinates
///   random_scale:  x * U(a, b)
struct AugmentOp {
  AugmentKind kind = AugmentKind::jitter;
  double a = 0.0;
  double b = 0.0;

  static AugmentOp jitter(double sigma) { return {AugmentKind::jitter, sigma, 0.0}; }
  static AugmentOp random_mask(double fraction) { return {AugmentKind::random_mask, fraction, 0.0}; }
  static AugmentOp random_scale(double lo, double hi) { return {AugmentKind::random_scale, lo, hi}; }
};

inline Vec augment(const Vec& x, const AugmentOp& op, Rng& rng) {
  Vec out = x;
  switch (op.kind) {
    case AugmentKind::jitter:
      if (op.a == 0.0) return out;
      for (double& v : out.span()) v += rng.normal(0.0, op.a);
      break;
    case AugmentKind::random_mask: {
      const std::size_t dim = out.dim();
      const auto count = static_cast<std::size_t>(
          std::llround(std::clamp(op.a, 0.0, 1.0) * static_cast<double>(dim)));
      std::vector<std::size_t> idx(dim);
      for (std::size_t i = 0; i < dim; ++i) idx[i] = i;
      // Partial Fisher-Yates: the first `count` slots are the masked coordinates.
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(idx[i], idx[i + rng.index(dim - i)]);
        out[idx[i]] = 0.0;
      }
      break;
    }
    case AugmentKind::random_scale: {
      const double s = rng.uniform(op.a, op.b);
      for (double& v : out.span()) v *= s;
      break;
    }
  }
  return out;
}

/// Composition used to generate image prompts (views): scale, then mask, then jitter.
struct ViewPolicy {
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double mask_fraction = 0.1;
  double jitter_sigma = 0.1;

  Vec apply(const Vec& x, Rng& rng) const {
    Vec v = augment(x, AugmentOp::random_scale(scale_lo, scale_hi), rng);
    v = augment(v, AugmentOp::random_mask(mask_fraction), rng);
    return augment(v, AugmentOp::jitter(jitter_sigma), rng);
  }
};

namespace detail {

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double sigma, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.span()) v = rng.normal(0.0, sigma);
  return m;
}

inline Vec gaussian_vec(std::size_t dim, Rng& rng) {
  Vec v(dim);
  for (double& x : v.span()) x = rng.normal();
  return v;
}

/// Orthogonal map built from Givens rotations on disjoint random coordinate
/// planes. Each plane turns by strength * U(pi/8, pi/4); strength 0 is identity.
inline Matrix plane_rotation(std::size_t dim, double strength, Rng& rng) {
  std::vector<std::size_t> perm(dim);
  for (std::size_t i = 0; i < dim; ++i) perm[i] = i;
  rng.shuffle(std::span(perm));
  Matrix r = Matrix::identity(dim);
  for (std::size_t p = 0; p + 1 < dim; p += 2) {
    const double angle = strength * rng.uniform(std::numbers::pi / 8, std::numbers::pi / 4);
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const std::size_t i = perm[p];
    const std::size_t j = perm[p + 1];
    r(i, i) = c;
    r(i, j) = -s;
    r(j, i) = s;
    r(j, j) = c;
  }
  return r;
}

inline Vec render(const Matrix& map, const Vec& class_concept, double noise_sigma, Rng& rng) {
  Vec x = matvec(map, class_concept.span());
  if (noise_sigma > 0.0) {
    for (double& v : x.span()) v += rng.normal(0.0, noise_sigma);
  }
  return x;
}

}  // namespace detail

inline Matrix SyntheticTask::target_render() const {
  Matrix a = matmul(rotation, source_render);
  axpy(spec.shift_strength, offset.span(), a.span());
  return a;
}

inline constexpr int kConceptResampleLimit = 1000;
inline constexpr double kConceptMaxCosine = 0.3;

/// Deterministically generates a task from its spec. Every consumer draws from
/// its own named stream of the spec seed.
inline SyntheticTask generate_task(const TaskSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  Rng concept_rng = root.stream("concepts");
  Rng render_rng = root.stream("render");
  Rng shift_rng = root.stream("shift");
  Rng source_rng = root.stream("source");
  Rng target_rng = root.stream("target");
  Rng prompt_rng = root.stream("prompts");

  SyntheticTask task;
  task.spec = spec;

  const std::size_t m_classes = spec.num_classes;
  for (std::size_t m = 0; m < m_classes; ++m) {
    bool accepted = false;
    for (int attempt = 0; attempt < kConceptResampleLimit && !accepted; ++attempt) {
      const FeatureVec candidate = l2_normalize(detail::gaussian_vec(spec.concept_dim, concept_rng));
      accepted = std::all_of(task.concepts.begin(), task.concepts.end(), [&](const Vec& c) {
        return std::abs(dot(c.span(), candidate.span())) <= kConceptMaxCosine;
      });
      if (accepted) task.concepts.push_back(candidate.to_vec());
    }
    if (!accepted) {
      fail(ErrorCode::ResampleExhausted,
           "could not place concept " + std::to_string(m) + " with |cos| <= 0.3 in " +
               std::to_string(kConceptResampleLimit) + " tries");
    }
  }

  const double render_sigma = 1.0 / std::sqrt(static_cast<double>(spec.concept_dim));
  task.source_render =
      detail::gaussian_matrix(spec.input_dim, spec.concept_dim, render_sigma, render_rng);
  task.text_render =
      detail::gaussian_matrix(spec.input_dim, spec.concept_dim, render_sigma, render_rng);
  task.rotation = detail::plane_rotation(spec.input_dim, spec.shift_strength, shift_rng);
  task.offset = detail::gaussian_matrix(spec.input_dim, spec.concept_dim, render_sigma, shift_rng);

  for (std::size_t m = 0; m < m_classes; ++m) {
    for (std::size_t i = 0; i < spec.source_pairs_per_class; ++i) {
      task.source_images.push_back(
          detail::render(task.source_render, task.concepts[m], spec.image_noise_sigma, source_rng));
      task.source_texts.push_back(
          detail::render(task.text_render, task.concepts[m], spec.text_noise_sigma, source_rng));
      task.source_labels.push_back(m);
    }
  }

  const Matrix target_map = task.target_render();
  for (std::size_t m = 0; m < m_classes; ++m) {
    for (std::size_t i = 0; i < spec.target_images_per_class; ++i) {
      task.target_images.push_back(
          detail::render(target_map, task.concepts[m], spec.image_noise_sigma, target_rng));
      task.target_labels.push_back(m);
    }
  }

  for (std::size_t m = 0; m < m_classes; ++m) {
    task.class_names.push_back(
        detail::render(task.text_render, task.concepts[m], spec.text_noise_sigma, prompt_rng));
    PromptSet set;
    set.class_index = m;
    for (std::size_t k = 0; k < spec.k_text_prompts; ++k) {
      Vec prompt =
          detail::render(task.text_render, task.concepts[m], spec.text_noise_sigma, prompt_rng);
      const bool failed = prompt_rng.uniform() < spec.prompt_failure_rate;
      Vec junk = detail::gaussian_vec(spec.input_dim, prompt_rng);
      if (failed) prompt = l2_normalize(junk).to_vec();
      set.prompts.push_back(std::move(prompt));
      set.failed.push_back(failed ? 1 : 0);
    }
    task.prompt_sets.push_back(std::move(set));
  }
  return task;
}

/// What the adaptation loop is allowed to see: images and class prompts, no labels.
struct UnlabelledTarget {
  std::span<const Vec> images;
  std::span<const Vec> class_names;
  std::span<const PromptSet> prompt_sets;
  std::size_t num_classes = 0;
};

inline UnlabelledTarget unlabelled_view(const SyntheticTask& task) {
  return {task.target_images, task.class_names, task.prompt_sets, task.spec.num_classes};
}

/// Scores predictions against hidden labels without exposing them.
class AccuracyProbe {
 public:
  explicit AccuracyProbe(std::vector<std::size_t> labels) : labels_(std::move(labels)) {}

  std::size_t size() const { return labels_.size(); }

  double accuracy(std::span<const std::size_t> predictions) const {
    require(predictions.size() == labels_.size(), ErrorCode::DimMismatch,
            "prediction count does not match probe size");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels_.size(); ++i) hits += predictions[i] == labels_[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels_.size());
  }

  /// Number of correct predictions over a subset; `indices[i]` names the
  /// sample predicted by `predictions[i]`.
  std::size_t correct(std::span<const std::size_t> indices,
                      std::span<const std::size_t> predictions) const {
    require(indices.size() == predictions.size(), ErrorCode::DimMismatch,
            "index and prediction counts differ");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      require(indices[i] < labels_.size(), ErrorCode::BadLabel, "sample index out of range");
      hits += predictions[i] == labels_[indices[i]] ? 1 : 0;
    }
    return hits;
  }

 private:
  std::vector<std::size_t> labels_;
};

// Task file:
//   "PESTTASK" | u32 version | u64 payload_bytes | payload | u64 fnv1a(payload)
// The payload starts with the TaskSpec and then every generated array.

inline constexpr char kTaskMagic[8] = {'P', 'E', 'S', 'T', 'T', 'A', 'S', 'K'};
inline constexpr std::uint32_t kTaskFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void size(std::size_t n) { pod(static_cast<std::uint64_t>(n)); }
  void doubles(std::span<const double> v) {
    size(v.size());
    const auto* p = reinterpret_cast<const unsigned char*>(v.data());
    bytes_.insert(bytes_.end(), p, p + v.size_bytes());
  }
  void vec(const Vec& v) { doubles(v.span()); }
  void vecs(const std::vector<Vec>& vs) {
    size(vs.size());
    for (const auto& v : vs) vec(v);
  }
  void matrix(const Matrix& m) {
    size(m.rows());
    size(m.cols());
    doubles(m.span());
  }
  void labels(const std::vector<std::size_t>& ls) {
    size(ls.size());
    for (auto l : ls) size(l);
  }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t size() {
    const auto n = pod<std::uint64_t>();
    if (n > bytes_.size()) fail(ErrorCode::CorruptFile, "implausible length field");
    return static_cast<std::size_t>(n);
  }
  std::vector<double> doubles() {
    const std::size_t n = size();
    need(n * sizeof(double));
    std::vector<double> v(n);
    std::memcpy(v.data(), bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return v;
  }
  Vec vec() { return Vec(doubles()); }
  std::vector<Vec> vecs() {
    const std::size_t n = size();
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(vec());
    return out;
  }
  Matrix matrix() {
    const std::size_t r = size();
    const std::size_t c = size();
    auto data = doubles();
    if (data.size() != r * c) fail(ErrorCode::CorruptFile, "matrix shape does not match payload");
    return Matrix(r, c, std::move(data));
  }
  std::vector<std::size_t> labels() {
    const std::size_t n = size();
    std::vector<std::size_t> out(n);
    for (auto& l : out) l = size();
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::CorruptFile, "payload ends early");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

inline void write_spec(ByteWriter& w, const TaskSpec& s) {
  w.size(s.num_classes);
  w.size(s.concept_dim);
  w.size(s.input_dim);
  w.size(s.source_pairs_per_class);
  w.size(s.target_images_per_class);
  w.size(s.k_text_prompts);
  w.pod(s.text_noise_sigma);
  w.pod(s.image_noise_sigma);
  w.pod(s.shift_strength);
  w.pod(s.prompt_failure_rate);
  w.pod(s.seed);
}

inline TaskSpec read_spec(ByteReader& r) {
  TaskSpec s;
  s.num_classes = r.size();
  s.concept_dim = r.size();
  s.input_dim = r.size();
  s.source_pairs_per_class = r.size();
  s.target_images_per_class = r.size();
  s.k_text_prompts = r.size();
  s.text_noise_sigma = r.pod<double>();
  s.image_noise_sigma = r.pod<double>();
  s.shift_strength = r.pod<double>();
  s.prompt_failure_rate = r.pod<double>();
  s.seed = r.pod<std::uint64_t>();
  return s;
}

}  // namespace detail

inline std::vector<unsigned char> serialize_task(const SyntheticTask& task) {
  detail::ByteWriter payload;
  detail::write_spec(payload, task.spec);
  payload.vecs(task.concepts);
  payload.matrix(task.source_render);
  payload.matrix(task.text_render);
  payload.matrix(task.rotation);
  payload.matrix(task.offset);
  payload.vecs(task.source_images);
  payload.vecs(task.source_texts);
  payload.labels(task.source_labels);
  payload.vecs(task.target_images);
  payload.labels(task.target_labels);
  payload.vecs(task.class_names);
  payload.size(task.prompt_sets.size());
  for (const auto& set : task.prompt_sets) {
    payload.size(set.class_index);
    payload.vecs(set.prompts);
    payload.size(set.failed.size());
    for (auto f : set.failed) payload.pod(f);
  }

  detail::ByteWriter file;
  for (char c : kTaskMagic) file.pod(c);
  file.pod(kTaskFormatVersion);
  file.size(payload.bytes().size());
  std::vector<unsigned char> out = file.bytes();
  out.insert(out.end(), payload.bytes().begin(), payload.bytes().end());
  const std::uint64_t checksum = fnv1a(payload.bytes());
  const auto* p = reinterpret_cast<const unsigned char*>(&checksum);
  out.insert(out.end(), p, p + sizeof(checksum));
  return out;
}

inline SyntheticTask deserialize_task(std::span<const unsigned char> bytes) {
  constexpr std::size_t kHeader = sizeof(kTaskMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kHeader || std::memcmp(bytes.data(), kTaskMagic, sizeof(kTaskMagic)) != 0) {
    fail(ErrorCode::CorruptFile, "not a task file");
  }
  detail::ByteReader header(bytes.subspan(sizeof(kTaskMagic), kHeader - sizeof(kTaskMagic)));
  const auto version = header.pod<std::uint32_t>();
  if (version != kTaskFormatVersion) {
    fail(ErrorCode::FormatVersionMismatch, "task file version " + std::to_string(version) +
                                               ", expected " +
                                               std::to_string(kTaskFormatVersion));
  }
  const auto payload_size = header.pod<std::uint64_t>();
  if (bytes.size() != kHeader + payload_size + sizeof(std::uint64_t)) {
    fail(ErrorCode::CorruptFile, "task file length does not match header");
  }
  const auto payload = bytes.subspan(kHeader, payload_size);
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + kHeader + payload_size, sizeof(stored));
  if (stored != fnv1a(payload)) fail(ErrorCode::CorruptFile, "task payload checksum mismatch");

  detail::ByteReader r(payload);
  SyntheticTask task;
  task.spec = detail::read_spec(r);
  task.concepts = r.vecs();
  task.source_render = r.matrix();
  task.text_render = r.matrix();
  task.rotation = r.matrix();
  task.offset = r.matrix();
  task.source_images = r.vecs();
  task.source_texts = r.vecs();
  task.source_labels = r.labels();
  task.target_images = r.vecs();
  task.target_labels = r.labels();
  task.class_names = r.vecs();
  const std::size_t num_sets = r.size();
  for (std::size_t i = 0; i < num_sets; ++i) {
    PromptSet set;
    set.class_index = r.size();
    set.prompts = r.vecs();
    const std::size_t nf = r.size();
    for (std::size_t k = 0; k < nf; ++k) set.failed.push_back(r.pod<std::uint8_t>());
    task.prompt_sets.push_back(std::move(set));
  }
  if (!r.done()) fail(ErrorCode::CorruptFile, "trailing bytes in task payload");
  return task;
}

inline void save_task(const SyntheticTask& task, const std::filesystem::path& path) {
  const auto bytes = serialize_task(task);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorCode::IoError, "failed writing " + path.string());
}

inline SyntheticTask load_task(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  return deserialize_task(bytes);
}

}  // namespace pest

#endif  // PEST_SYNTHBENCH_HPP_
