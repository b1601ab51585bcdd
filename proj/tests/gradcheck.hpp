// Randomized gradient checks. Each function draws one small instance from
// `rng`, evaluates the analytic gradient and returns its relative error
// against central finite differences.

#ifndef PEST_TESTS_GRADCHECK_HPP_
#define PEST_TESTS_GRADCHECK_HPP_

#include <vector>

#include "oracles.hpp"
#include "pest/encoder.hpp"
#include "pest/linalg.hpp"
#include "pest/pretrain.hpp"
#include "pest/rng.hpp"
#include "pest/selftrain.hpp"

namespace pest::gradcheck {

inline LinearEncoder random_encoder(EncoderRole role, std::size_t out, std::size_t in, Rng& rng) {
  LinearEncoder enc = init_encoder(role, in, out, rng);
  for (double& b : enc.bias.span()) b = rng.normal(0.0, 0.3);
  return enc;
}

inline double cross_entropy(Rng& rng) {
  const std::size_t n = 2 + rng.index(7);
  std::vector<double> logits(n);
  for (double& l : logits) l = rng.normal();
  const std::size_t label = rng.index(n);
  const double tau = rng.uniform(0.5, 2.0);
  return oracle::relative_error(
      softmax_cross_entropy(logits, label, tau).grad,
      oracle::central_difference(
          [&](const oracle::Dense& x) { return softmax_cross_entropy(x, label, tau).loss; },
          logits));
}

inline double encoder(Rng& rng) {
  const auto enc = random_encoder(EncoderRole::image, 2 + rng.index(7), 1 + rng.index(8), rng);
  const Vec x = oracle::random_vec(enc.in_dim(), rng);
  const Vec up = oracle::random_vec(enc.out_dim(), rng);
  auto loss = [&](const oracle::Dense& flat) {
    LinearEncoder e = enc;
    assign_flat(e, flat);
    return dot(encode(e, x).span(), up.span());
  };
  return oracle::relative_error(flatten(encode_backward(enc, x, up.span())),
                                oracle::central_difference(loss, flatten(enc)));
}

/// Contrastive loss through a pair of random encoders, differentiated with
/// respect to every image and text encoder parameter.
inline double contrastive(Rng& rng) {
  const std::size_t n = 2 + rng.index(3);
  const std::size_t dim = 2 + rng.index(5);
  const std::size_t in = 1 + rng.index(6);
  const double tau = rng.uniform(0.3, 1.5);
  const auto img = random_encoder(EncoderRole::image, dim, in, rng);
  const auto txt = random_encoder(EncoderRole::text, dim, in, rng);
  std::vector<Vec> xs, ts;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back(oracle::random_vec(in, rng));
    ts.push_back(oracle::random_vec(in, rng));
  }

  auto forward = [&](const LinearEncoder& a, const LinearEncoder& b) {
    std::vector<FeatureVec> zi, zt;
    for (std::size_t i = 0; i < n; ++i) {
      zi.push_back(encode(a, xs[i]));
      zt.push_back(encode(b, ts[i]));
    }
    return contrastive_loss(zi, zt, tau);
  };

  const auto res = forward(img, txt);
  auto gi = EncoderGradient::zeros_like(img);
  auto gt = EncoderGradient::zeros_like(txt);
  for (std::size_t i = 0; i < n; ++i) {
    gi += encode_backward(img, xs[i], res.d_image[i].span());
    gt += encode_backward(txt, ts[i], res.d_text[i].span());
  }
  auto analytic = flatten(gi);
  const auto at = flatten(gt);
  analytic.insert(analytic.end(), at.begin(), at.end());

  const std::size_t split = img.num_params();
  auto loss = [&](const oracle::Dense& flat) {
    LinearEncoder a = img, b = txt;
    assign_flat(a, std::span(flat).first(split));
    assign_flat(b, std::span(flat).subspan(split));
    return forward(a, b).loss;
  };
  auto params = flatten(img);
  const auto pt = flatten(txt);
  params.insert(params.end(), pt.begin(), pt.end());
  return oracle::relative_error(analytic, oracle::central_difference(loss, params));
}

/// Self-training loss through a random image encoder against fixed text
/// centroids, differentiated with respect to the image encoder parameters.
inline double self_training(Rng& rng) {
  const std::size_t n = 1 + rng.index(4);
  const std::size_t dim = 2 + rng.index(7);
  const std::size_t in = 1 + rng.index(6);
  const std::size_t classes = 2 + rng.index(4);
  const double tau = rng.uniform(0.3, 1.5);
  const auto img = random_encoder(EncoderRole::image, dim, in, rng);
  std::vector<FeatureVec> text;
  for (std::size_t m = 0; m < classes; ++m) text.push_back(oracle::random_unit(dim, rng));
  std::vector<Vec> xs;
  std::vector<PseudoLabel> labels;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back(oracle::random_vec(in, rng));
    labels.push_back({i, rng.index(classes), 0.0});
  }

  auto forward = [&](const LinearEncoder& e) {
    std::vector<FeatureVec> z;
    for (const auto& x : xs) z.push_back(encode(e, x));
    return pest_loss(z, text, labels, tau);
  };
  const auto res = forward(img);
  auto g = EncoderGradient::zeros_like(img);
  for (std::size_t i = 0; i < n; ++i) g += encode_backward(img, xs[i], res.d_images[i].span());

  auto loss = [&](const oracle::Dense& flat) {
    LinearEncoder e = img;
    assign_flat(e, flat);
    return forward(e).loss;
  };
  return oracle::relative_error(flatten(g), oracle::central_difference(loss, flatten(img)));
}

}  // namespace pest::gradcheck

#endif  // PEST_TESTS_GRADCHECK_HPP_
