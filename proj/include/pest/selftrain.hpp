#ifndef PEST_SELFTRAIN_HPP_
#define PEST_SELFTRAIN_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pest/encoder.hpp"
#include "pest/ensemble.hpp"
#include "pest/error.hpp"
#include "pest/linalg.hpp"
#include "pest/optim.hpp"
#include "pest/pretrain.hpp"
#include "pest/rng.hpp"
#include "pest/synthbench.hpp"

namespace pest {

enum class AdaptMode {
  zero_shot,
  st,
  st_vpe,
  st_lpe,
  st_vpe_lpe,
  pest,
  baseline_uniform,
  baseline_weighted,
  baseline_vote,
};

inline constexpr AdaptMode kAllModes[] = {
    AdaptMode::zero_shot,         AdaptMode::st,          AdaptMode::st_vpe,
    AdaptMode::st_lpe,            AdaptMode::st_vpe_lpe,  AdaptMode::pest,
    AdaptMode::baseline_uniform,  AdaptMode::baseline_weighted, AdaptMode::baseline_vote,
};

inline std::string_view to_string(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::zero_shot: return "zero_shot";
    case AdaptMode::st: return "st";
    case AdaptMode::st_vpe: return "st_vpe";
    case AdaptMode::st_lpe: return "st_lpe";
    case AdaptMode::st_vpe_lpe: return "st_vpe_lpe";
    case AdaptMode::pest: return "pest";
    case AdaptMode::baseline_uniform: return "baseline_uniform";
    case AdaptMode::baseline_weighted: return "baseline_weighted";
    case AdaptMode::baseline_vote: return "baseline_vote";
  }
  return "unknown";
}

inline AdaptMode parse_mode(std::string_view name) {
  for (AdaptMode m : kAllModes) {
    if (to_string(m) == name) return m;
  }
  fail(ErrorCode::ConfigError, "unknown adaptation mode '" + std::string(name) + "'");
}

/// How a mode builds its per-class text feature.
enum class TextSource { canonical, language_ensemble, uniform, weighted };

struct ModeTraits {
  bool trains = true;
  bool vision_ensemble = false;
  bool temporal = false;
  bool vote = false;
  TextSource text = TextSource::canonical;
};

inline ModeTraits traits(AdaptMode mode) {
  switch (mode) {
    case AdaptMode::zero_shot: return {.trains = false};
    case AdaptMode::st: return {};
    case AdaptMode::st_vpe: return {.vision_ensemble = true};
    case AdaptMode::st_lpe: return {.text = TextSource::language_ensemble};
    case AdaptMode::st_vpe_lpe:
      return {.vision_ensemble = true, .text = TextSource::language_ensemble};
    case AdaptMode::pest:
      return {.vision_ensemble = true, .temporal = true, .text = TextSource::language_ensemble};
    case AdaptMode::baseline_uniform: return {.text = TextSource::uniform};
    case AdaptMode::baseline_weighted: return {.text = TextSource::weighted};
    case AdaptMode::baseline_vote: return {.vote = true, .text = TextSource::uniform};
  }
  return {};
}

inline std::string_view to_string(TextSource s) {
  switch (s) {
    case TextSource::canonical: return "canonical";
    case TextSource::language_ensemble: return "language_ensemble";
    case TextSource::uniform: return "uniform";
    case TextSource::weighted: return "weighted";
  }
  return "unknown";
}

struct AdaptConfig {
  AdaptMode mode = AdaptMode::pest;
  double tau = 0.01;
  double lambda = 0.99;
  double momentum = 0.99;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::size_t k_views = 4;
  double base_lr = 1e-5;
  double weight_decay = 0.05;
  ViewPolicy views;
  bool eq4_raw_weights = false;
  bool eq7_raw_product = false;
  std::uint64_t seed = 42;

  void validate() const {
    require(tau > 0.0, ErrorCode::ConfigError, "tau must be > 0");
    require(lambda >= 0.0 && lambda <= 1.0, ErrorCode::ConfigError, "lambda must be in [0, 1]");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::ConfigError,
            "momentum must be in [0, 1)");
    require(epochs >= 1, ErrorCode::ConfigError, "epochs must be >= 1");
    require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be >= 1");
    require(k_views >= 1, ErrorCode::ConfigError, "k_views must be >= 1");
    require(base_lr > 0.0, ErrorCode::ConfigError, "base_lr must be > 0");
    require(weight_decay >= 0.0, ErrorCode::ConfigError, "weight_decay must be >= 0");
    require(views.scale_lo > 0.0 && views.scale_lo <= views.scale_hi, ErrorCode::ConfigError,
            "view scale range must satisfy 0 < lo <= hi");
    require(views.mask_fraction >= 0.0 && views.mask_fraction < 1.0, ErrorCode::ConfigError,
            "view mask_fraction must be in [0, 1)");
    require(views.jitter_sigma >= 0.0, ErrorCode::ConfigError, "view jitter_sigma must be >= 0");
  }
};

struct PseudoLabel {
  std::size_t sample_index = 0;
  std::size_t label = 0;
  double score = 0.0;
};

/// score_m = z . text_m
inline std::vector<double> zero_shot_scores(const FeatureVec& z,
                                            std::span<const FeatureVec> text_feats) {
  std::vector<double> scores(text_feats.size());
  for (std::size_t m = 0; m < text_feats.size(); ++m) scores[m] = dot(z, text_feats[m]);
  return scores;
}

/// argmax_m z . text_m, lowest index on ties.
inline PseudoLabel st_pseudo_label(const FeatureVec& z, std::span<const FeatureVec> text_feats,
                                   std::size_t sample_index = 0) {
  const auto scores = zero_shot_scores(z, text_feats);
  const std::size_t best = argmax(scores);
  return {sample_index, best, scores[best]};
}

/// argmax_m max(0, z . text_m) * max(0, z . fused_m). Ties go to the larger
/// text similarity, then the lower index. `raw_product` multiplies the signed
/// similarities instead.
inline PseudoLabel pest_pseudo_label(const FeatureVec& z, std::span<const FeatureVec> text_feats,
                                     std::span<const FeatureVec> fused,
                                     bool raw_product = false, std::size_t sample_index = 0) {
  require(text_feats.size() == fused.size(), ErrorCode::DimMismatch,
          "text and fused centroid counts differ");
  require(!text_feats.empty(), ErrorCode::DimMismatch, "no classes");
  std::size_t best = 0;
  double best_score = 0.0;
  double best_text = 0.0;
  for (std::size_t m = 0; m < text_feats.size(); ++m) {
    double t = dot(z, text_feats[m]);
    double f = dot(z, fused[m]);
    const double text_sim = t;
    if (!raw_product) {
      t = std::max(0.0, t);
      f = std::max(0.0, f);
    }
    const double score = t * f;
    if (m == 0 || score > best_score || (score == best_score && text_sim > best_text)) {
      best = m;
      best_score = score;
      best_text = text_sim;
    }
  }
  return {sample_index, best, best_score};
}

struct SelfTrainLoss {
  double loss = 0.0;
  std::vector<Vec> d_images;  // d loss / d z_n
};

/// Mean over the batch of CE(z_n . text_m / tau, label_n). Text features are
/// constants; only image features receive gradients.
inline SelfTrainLoss pest_loss(std::span<const FeatureVec> images,
                               std::span<const FeatureVec> text_feats,
                               std::span<const PseudoLabel> labels, double tau) {
  require(images.size() == labels.size(), ErrorCode::DimMismatch,
          "image and label counts differ");
  require(!images.empty(), ErrorCode::DimMismatch, "empty batch");
  const double inv_n = 1.0 / static_cast<double>(images.size());
  SelfTrainLoss out;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto logits = zero_shot_scores(images[n], text_feats);
    const auto ce = softmax_cross_entropy(logits, labels[n].label, tau);
    out.loss += ce.loss * inv_n;
    Vec d(images[n].dim());
    for (std::size_t m = 0; m < text_feats.size(); ++m) {
      axpy(ce.grad[m] * inv_n, text_feats[m].span(), d.span());
    }
    out.d_images.push_back(std::move(d));
  }
  return out;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double target_accuracy = 0.0;
  double pseudo_label_accuracy = 0.0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct RunMetrics {
  std::string run_name;
  AdaptMode mode = AdaptMode::zero_shot;
  TextSource text_source = TextSource::canonical;
  std::vector<EpochMetrics> rows;

  const EpochMetrics& final_row() const {
    require(!rows.empty(), ErrorCode::NumericError, "run has no metrics");
    return rows.back();
  }
};

struct AdaptResult {
  LinearEncoder image;
  RunMetrics metrics;
  CentroidBank bank;
};

/// Per-class text features for a mode, encoded with the frozen text encoder.
inline std::vector<FeatureVec> class_text_features(const UnlabelledTarget& target,
                                                   const LinearEncoder& text_enc,
                                                   TextSource source, bool eq4_raw_weights) {
  std::vector<FeatureVec> out;
  for (std::size_t m = 0; m < target.num_classes; ++m) {
    if (source == TextSource::canonical) {
      out.push_back(encode(text_enc, target.class_names[m]));
      continue;
    }
    std::vector<FeatureVec> prompts;
    for (const auto& p : target.prompt_sets[m].prompts) prompts.push_back(encode(text_enc, p));
    switch (source) {
      case TextSource::language_ensemble:
        out.push_back(language_ensemble(prompts, eq4_raw_weights));
        break;
      case TextSource::uniform: out.push_back(baseline_uniform(prompts)); break;
      case TextSource::weighted: out.push_back(baseline_weighted(prompts)); break;
      case TextSource::canonical: break;
    }
  }
  return out;
}

namespace detail {

/// One zero-shot classifier per prompt index k, voted over.
class PromptVote {
 public:
  PromptVote(const UnlabelledTarget& target, const LinearEncoder& text_enc)
      : num_classes_(target.num_classes) {
    std::size_t k_prompts = target.prompt_sets[0].prompts.size();
    for (const auto& set : target.prompt_sets) k_prompts = std::min(k_prompts, set.prompts.size());
    per_prompt_.resize(k_prompts);
    for (std::size_t k = 0; k < k_prompts; ++k) {
      for (std::size_t m = 0; m < num_classes_; ++m) {
        per_prompt_[k].push_back(encode(text_enc, target.prompt_sets[m].prompts[k]));
      }
    }
  }

  PseudoLabel label(const FeatureVec& z, std::size_t sample_index) const {
    std::vector<std::size_t> labels;
    std::vector<double> scores;
    for (const auto& classifier : per_prompt_) {
      const auto pl = st_pseudo_label(z, classifier);
      labels.push_back(pl.label);
      scores.push_back(pl.score);
    }
    const std::size_t winner = baseline_majority_vote(labels, scores, num_classes_);
    double score = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == winner) score += scores[i];
    }
    return {sample_index, winner, score};
  }

 private:
  std::size_t num_classes_;
  std::vector<std::vector<FeatureVec>> per_prompt_;
};

inline Error with_context(const Error& e, std::size_t epoch, std::size_t batch) {
  return Error(e.code(), std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(batch) + ")");
}

}  // namespace detail

/// Adapts the image encoder to the unlabelled target. The text encoder is
/// taken by const reference and never modified. Ground-truth labels are only
/// reachable through `probe`, which reports accuracies.
inline AdaptResult adapt(const UnlabelledTarget& target, const LinearEncoder& image_enc,
                         const LinearEncoder& text_enc, const AdaptConfig& cfg,
                         const AccuracyProbe& probe) {
  cfg.validate();
  require(target.num_classes >= 2, ErrorCode::ConfigError, "target needs at least two classes");
  require(target.class_names.size() == target.num_classes &&
              target.prompt_sets.size() == target.num_classes,
          ErrorCode::ConfigError, "class prompts do not cover every class");
  require(!target.images.empty(), ErrorCode::ConfigError, "target has no images");
  require(probe.size() == target.images.size(), ErrorCode::ConfigError,
          "accuracy probe does not match target size");

  const ModeTraits mode = traits(cfg.mode);
  const std::size_t num_classes = target.num_classes;
  const std::size_t n_images = target.images.size();

  AdaptResult result;
  result.image = image_enc;
  result.metrics.mode = cfg.mode;
  result.metrics.text_source = mode.text;

  const auto text_feats = class_text_features(target, text_enc, mode.text, cfg.eq4_raw_weights);
  std::optional<detail::PromptVote> vote;
  if (mode.vote) vote.emplace(target, text_enc);

  auto predict = [&](const FeatureVec& z, std::size_t n) {
    return vote ? vote->label(z, n) : st_pseudo_label(z, text_feats, n);
  };

  // Evaluation always uses the un-augmented image through the online encoder.
  auto evaluate = [&](const LinearEncoder& enc, double* mean_loss) {
    std::vector<std::size_t> predictions(n_images);
    double loss = 0.0;
    for (std::size_t n = 0; n < n_images; ++n) {
      const FeatureVec z = encode(enc, target.images[n]);
      const auto pl = predict(z, n);
      predictions[n] = pl.label;
      if (mean_loss) {
        loss += softmax_cross_entropy(zero_shot_scores(z, text_feats), pl.label, cfg.tau).loss;
      }
    }
    if (mean_loss) *mean_loss = loss / static_cast<double>(n_images);
    return probe.accuracy(predictions);
  };

  const auto batches = batch_ranges(n_images, cfg.batch_size);
  const CosineSchedule schedule(cfg.base_lr, cfg.epochs * batches.size());

  {
    EpochMetrics start;
    start.target_accuracy = evaluate(result.image, &start.mean_loss);
    start.pseudo_label_accuracy = start.target_accuracy;
    start.lr = schedule.lr_at(0);
    result.metrics.rows.push_back(start);
  }
  if (!mode.trains) return result;

  MomentumEncoder momentum = make_momentum(result.image, cfg.momentum);
  CentroidBank& bank = result.bank;
  bank.text = text_feats;
  bank.lambda = cfg.lambda;
  bank.image.assign(num_classes, std::nullopt);

  if (mode.temporal) {
    // Cold start: un-augmented pass through the momentum encoder.
    std::vector<FeatureVec> feats;
    std::vector<std::size_t> labels;
    for (std::size_t n = 0; n < n_images; ++n) {
      feats.push_back(encode(momentum.shadow, target.images[n]));
      labels.push_back(st_pseudo_label(feats.back(), text_feats).label);
    }
    bank.image = vision_ensemble(feats, labels, num_classes);
    bank = init_fused_or_text(std::move(bank));
  }

  const Rng root(cfg.seed);
  Rng order_rng = root.stream("adapt/order");
  Rng view_rng = root.stream("adapt/views");
  AdamWState opt(result.image.num_params(), AdamWConfig{.weight_decay = cfg.weight_decay});

  std::vector<std::size_t> order(n_images);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(std::span(order));
    double loss_sum = 0.0;
    double lr = 0.0;
    std::size_t pseudo_hits = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      try {
        const auto [begin, end] = batches[b];
        std::vector<FeatureVec> fused;
        if (mode.vision_ensemble) {
          std::vector<FeatureVec> view_feats;
          std::vector<std::size_t> view_labels;
          for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t k = 0; k < cfg.k_views; ++k) {
              view_feats.push_back(
                  encode(momentum.shadow, cfg.views.apply(target.images[order[i]], view_rng)));
              view_labels.push_back(st_pseudo_label(view_feats.back(), text_feats).label);
            }
          }
          auto fresh = vision_ensemble(view_feats, view_labels, num_classes);
          if (mode.temporal) {
            bank = temporal_update(std::move(bank), fresh);
          } else {
            bank.image = std::move(fresh);
            bank = init_fused_or_text(std::move(bank));
          }
          fused = bank.fused;
        }

        std::vector<FeatureVec> feats;
        std::vector<PseudoLabel> labels;
        std::vector<std::size_t> indices, predicted;
        for (std::size_t i = begin; i < end; ++i) {
          const std::size_t n = order[i];
          feats.push_back(encode(result.image, target.images[n]));
          labels.push_back(mode.vision_ensemble
                               ? pest_pseudo_label(feats.back(), text_feats, fused,
                                                   cfg.eq7_raw_product, n)
                               : predict(feats.back(), n));
          indices.push_back(n);
          predicted.push_back(labels.back().label);
        }
        pseudo_hits += probe.correct(indices, predicted);

        const auto loss = pest_loss(feats, text_feats, labels, cfg.tau);
        auto grad = EncoderGradient::zeros_like(result.image);
        for (std::size_t i = begin; i < end; ++i) {
          grad += encode_backward(result.image, target.images[order[i]],
                                  loss.d_images[i - begin].span());
        }
        lr = schedule.lr_at(step++);
        auto params = flatten(result.image);
        adamw_apply(opt, params, flatten(grad), lr);
        require(all_finite(params), ErrorCode::NumericError, "non-finite encoder parameter");
        assign_flat(result.image, params);
        momentum = momentum_update(std::move(momentum), result.image);
        loss_sum += loss.loss;
      } catch (const Error& e) {
        throw detail::with_context(e, epoch, b);
      }
    }
    EpochMetrics row;
    row.epoch = epoch;
    row.target_accuracy = evaluate(result.image, nullptr);
    row.pseudo_label_accuracy =
        static_cast<double>(pseudo_hits) / static_cast<double>(n_images);
    row.mean_loss = loss_sum / static_cast<double>(batches.size());
    row.lr = lr;
    result.metrics.rows.push_back(row);
  }
  return result;
}

}  // namespace pest

#endif  // PEST_SELFTRAIN_HPP_
