#ifndef PEST_PRETRAIN_HPP_
#define PEST_PRETRAIN_HPP_

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pest/encoder.hpp"
#include "pest/error.hpp"
#include "pest/linalg.hpp"
#include "pest/optim.hpp"
#include "pest/rng.hpp"
#include "pest/synthbench.hpp"

namespace pest {

struct ContrastiveResult {
  double loss = 0.0;
  std::vector<Vec> d_image;  // d loss / d zI_i
  std::vector<Vec> d_text;   // d loss / d zT_j
};

/// Bidirectional image-text contrastive loss, averaged over the batch:
///   (1/N) sum_i [ CE(S_i. / tau, i) + CE(S_.i / tau, i) ],  S_ij = zI_i . zT_j
inline ContrastiveResult contrastive_loss(std::span<const FeatureVec> images,
                                          std::span<const FeatureVec> texts, double tau) {
  const std::size_t n = images.size();
  require(texts.size() == n, ErrorCode::DimMismatch, "image and text batches differ in length");
  require(n >= 2, ErrorCode::DimMismatch, "contrastive loss needs at least two pairs");
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "temperature must be > 0");
  const std::size_t dim = images[0].dim();

  Matrix sim(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    require(images[i].dim() == dim && texts[i].dim() == dim, ErrorCode::DimMismatch,
            "feature dims differ within batch");
    for (std::size_t j = 0; j < n; ++j) sim(i, j) = dot(images[i], texts[j]);
  }

  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix d_sim(n, n);
  ContrastiveResult out;
  std::vector<double> column(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = softmax_cross_entropy(sim.row(i), i, tau);
    out.loss += row.loss;
    for (std::size_t j = 0; j < n; ++j) d_sim(i, j) += inv_n * row.grad[j];
  }
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = sim(i, j);
    const auto col = softmax_cross_entropy(column, j, tau);
    out.loss += col.loss;
    for (std::size_t i = 0; i < n; ++i) d_sim(i, j) += inv_n * col.grad[i];
  }
  out.loss *= inv_n;

  out.d_image.assign(n, Vec(dim));
  out.d_text.assign(n, Vec(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      axpy(d_sim(i, j), texts[j].span(), out.d_image[i].span());
      axpy(d_sim(i, j), images[i].span(), out.d_text[j].span());
    }
  }
  return out;
}

struct PretrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::size_t embed_dim = 16;
  double base_lr = 5e-3;
  double weight_decay = 0.05;
  double tau = 0.07;
  std::uint64_t seed = 42;

  void validate() const {
    require(epochs >= 1, ErrorCode::ConfigError, "pretrain epochs must be >= 1");
    require(batch_size >= 2, ErrorCode::ConfigError, "pretrain batch_size must be >= 2");
    require(embed_dim >= 2, ErrorCode::ConfigError, "embed_dim must be >= 2");
    require(base_lr > 0.0, ErrorCode::ConfigError, "pretrain base_lr must be > 0");
    require(weight_decay >= 0.0, ErrorCode::ConfigError, "weight_decay must be >= 0");
    require(tau > 0.0, ErrorCode::ConfigError, "pretrain tau must be > 0");
  }
};

struct PretrainRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double source_zero_shot_acc = 0.0;
};

struct PretrainResult {
  LinearEncoder image;
  LinearEncoder text;
  std::vector<PretrainRow> rows;
};

/// Consecutive index ranges covering [0, n); a trailing range shorter than 2 is
/// folded into its predecessor so every batch has at least two pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n,
                                                                     std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch) {
    out.emplace_back(start, std::min(n, start + batch));
  }
  if (out.size() > 1 && out.back().second - out.back().first < 2) {
    const auto last = out.back();
    out.pop_back();
    out.back().second = last.second;
  }
  return out;
}

/// Accuracy of nearest-text classification of `images` against `class_texts`.
inline double zero_shot_accuracy(const LinearEncoder& image_enc, const LinearEncoder& text_enc,
                                 std::span<const Vec> images,
                                 std::span<const std::size_t> labels,
                                 std::span<const Vec> class_texts) {
  std::vector<FeatureVec> text_feats;
  for (const auto& t : class_texts) text_feats.push_back(encode(text_enc, t));
  std::size_t hits = 0;
  std::vector<double> sims(text_feats.size());
  for (std::size_t n = 0; n < images.size(); ++n) {
    const FeatureVec z = encode(image_enc, images[n]);
    for (std::size_t m = 0; m < text_feats.size(); ++m) sims[m] = dot(z, text_feats[m]);
    hits += argmax(sims) == labels[n] ? 1 : 0;
  }
  return images.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(images.size());
}

inline PretrainResult pretrain_vlm(const SyntheticTask& task, const PretrainConfig& cfg) {
  cfg.validate();
  const std::size_t n = task.source_images.size();
  require(n >= 2 && task.source_texts.size() == n, ErrorCode::ConfigError,
          "source split needs at least two image-text pairs");

  const Rng root(cfg.seed);
  Rng init_rng = root.stream("pretrain/init");
  Rng order_rng = root.stream("pretrain/order");

  PretrainResult result;
  result.image = init_encoder(EncoderRole::image, task.spec.input_dim, cfg.embed_dim, init_rng);
  result.text = init_encoder(EncoderRole::text, task.spec.input_dim, cfg.embed_dim, init_rng);

  const AdamWConfig opt_cfg{.weight_decay = cfg.weight_decay};
  AdamWState image_opt(result.image.num_params(), opt_cfg);
  AdamWState text_opt(result.text.num_params(), opt_cfg);

  const auto batches_per_epoch = batch_ranges(n, cfg.batch_size).size();
  const CosineSchedule schedule(cfg.base_lr, cfg.epochs * batches_per_epoch);
  std::size_t step = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<FeatureVec> zi, zt;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& [begin, end] : batch_ranges(n, cfg.batch_size)) {
      zi.clear();
      zt.clear();
      for (std::size_t b = begin; b < end; ++b) {
        zi.push_back(encode(result.image, task.source_images[order[b]]));
        zt.push_back(encode(result.text, task.source_texts[order[b]]));
      }
      const auto loss = contrastive_loss(zi, zt, cfg.tau);
      auto g_image = EncoderGradient::zeros_like(result.image);
      auto g_text = EncoderGradient::zeros_like(result.text);
      for (std::size_t b = begin; b < end; ++b) {
        g_image += encode_backward(result.image, task.source_images[order[b]],
                                   loss.d_image[b - begin].span());
        g_text += encode_backward(result.text, task.source_texts[order[b]],
                                  loss.d_text[b - begin].span());
      }
      const double lr = schedule.lr_at(step++);
      auto p_image = flatten(result.image);
      auto p_text = flatten(result.text);
      adamw_apply(image_opt, p_image, flatten(g_image), lr);
      adamw_apply(text_opt, p_text, flatten(g_text), lr);
      assign_flat(result.image, p_image);
      assign_flat(result.text, p_text);
      loss_sum += loss.loss;
      ++batches;
    }
    result.rows.push_back(
        {epoch, loss_sum / static_cast<double>(batches),
         zero_shot_accuracy(result.image, result.text, task.source_images, task.source_labels,
                            task.class_names)});
  }
  return result;
}

}  // namespace pest

#endif  // PEST_PRETRAIN_HPP_
