#ifndef PEST_ENSEMBLE_HPP_
#define PEST_ENSEMBLE_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pest/error.hpp"
#include "pest/linalg.hpp"

namespace pest {

using OptionalCentroids = std::vector<std::optional<FeatureVec>>;

namespace detail {

inline Vec mean_of(std::span<const FeatureVec> features) {
  require(!features.empty(), ErrorCode::DimMismatch, "ensemble needs at least one feature");
  const std::size_t dim = features[0].dim();
  Vec mean(dim);
  for (const auto& f : features) {
    require(f.dim() == dim, ErrorCode::DimMismatch, "ensemble features differ in dim");
    axpy(1.0, f.span(), mean.span());
  }
  const double inv_k = 1.0 / static_cast<double>(features.size());
  for (double& x : mean.span()) x *= inv_k;
  return mean;
}

}  // namespace detail

/// Two-step text prompt fusion. The initial centroid is the plain mean; each
/// prompt is then re-weighted by its agreement with it, w_k = max(0, z_k . mean).
/// `raw_weights` drops the clamp and uses the signed agreement.
/// Falls back to the normalized mean when every weight vanishes.
inline FeatureVec language_ensemble(std::span<const FeatureVec> features,
                                    bool raw_weights = false) {
  const Vec initial = detail::mean_of(features);
  Vec fused(initial.dim());
  bool any_weight = false;
  for (const auto& z : features) {
    double w = dot(z.span(), initial.span());
    if (!raw_weights) w = std::max(0.0, w);
    if (w != 0.0) any_weight = true;
    axpy(w, z.span(), fused.span());
  }
  if (!any_weight || !(norm(fused.span()) > kZeroNormThreshold)) return l2_normalize(initial);
  return l2_normalize(fused);
}

/// Class-wise mean of features grouped by pseudo label, then normalized.
/// Classes without any assigned feature come back empty.
inline OptionalCentroids vision_ensemble(std::span<const FeatureVec> features,
                                         std::span<const std::size_t> pseudo_labels,
                                         std::size_t num_classes) {
  require(features.size() == pseudo_labels.size(), ErrorCode::DimMismatch,
          "feature and label counts differ");
  std::vector<Vec> sums(num_classes);
  std::vector<std::size_t> counts(num_classes, 0);
  for (std::size_t i = 0; i < features.size(); ++i) {
    const std::size_t m = pseudo_labels[i];
    require(m < num_classes, ErrorCode::BadLabel, "pseudo label out of range");
    if (counts[m] == 0) sums[m] = Vec(features[i].dim());
    require(sums[m].dim() == features[i].dim(), ErrorCode::DimMismatch,
            "vision features differ in dim");
    axpy(1.0, features[i].span(), sums[m].span());
    ++counts[m];
  }
  OptionalCentroids out(num_classes);
  for (std::size_t m = 0; m < num_classes; ++m) {
    if (counts[m] == 0) continue;
    for (double& x : sums[m].span()) x /= static_cast<double>(counts[m]);
    out[m] = l2_normalize(sums[m]);
  }
  return out;
}

/// Per-class text, image and fused image-text centroids.
struct CentroidBank {
  std::vector<FeatureVec> text;
  OptionalCentroids image;
  std::vector<FeatureVec> fused;
  double lambda = 0.99;

  std::size_t num_classes() const { return text.size(); }
  bool initialized() const { return !fused.empty(); }
};

/// fused_m = normalize(image_m + text_m); classes without an image centroid
/// take fused_m = text_m.
inline CentroidBank init_fused_or_text(CentroidBank bank) {
  require(bank.image.size() == bank.text.size(), ErrorCode::DimMismatch,
          "image and text centroid counts differ");
  bank.fused.clear();
  for (std::size_t m = 0; m < bank.text.size(); ++m) {
    if (bank.image[m]) {
      Vec sum = bank.image[m]->to_vec();
      axpy(1.0, bank.text[m].span(), sum.span());
      bank.fused.push_back(l2_normalize(sum));
    } else {
      bank.fused.push_back(bank.text[m]);
    }
  }
  return bank;
}

/// fused_m = normalize(image_m + text_m) for every class; all image centroids required.
inline CentroidBank init_fused(CentroidBank bank) {
  require(bank.image.size() == bank.text.size(), ErrorCode::MissingCentroid,
          "image centroid list does not cover every class");
  for (std::size_t m = 0; m < bank.image.size(); ++m) {
    if (!bank.image[m]) {
      fail(ErrorCode::MissingCentroid, "no image centroid for class " + std::to_string(m));
    }
  }
  return init_fused_or_text(std::move(bank));
}

/// fused_m <- normalize(lambda * fused_m + (1 - lambda) * image_m) for classes
/// with a fresh image centroid; other classes keep their fused centroid.
inline CentroidBank temporal_update(CentroidBank bank, const OptionalCentroids& fresh) {
  require(bank.initialized(), ErrorCode::MissingCentroid, "centroid bank not initialized");
  require(fresh.size() == bank.fused.size(), ErrorCode::DimMismatch,
          "fresh centroid count does not match bank");
  const double lambda = bank.lambda;
  for (std::size_t m = 0; m < fresh.size(); ++m) {
    if (!fresh[m]) continue;
    Vec blended(fresh[m]->dim());
    axpy(lambda, bank.fused[m].span(), blended.span());
    axpy(1.0 - lambda, fresh[m]->span(), blended.span());
    bank.fused[m] = l2_normalize(blended);
    bank.image[m] = fresh[m];
  }
  return bank;
}

inline FeatureVec baseline_uniform(std::span<const FeatureVec> features) {
  return l2_normalize(detail::mean_of(features));
}

/// Softmax(z_k . mean) weighted average.
inline FeatureVec baseline_weighted(std::span<const FeatureVec> features) {
  const Vec initial = detail::mean_of(features);
  std::vector<double> scores;
  for (const auto& z : features) scores.push_back(dot(z.span(), initial.span()));
  const double top = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double& s : scores) {
    s = std::exp(s - top);
    total += s;
  }
  Vec fused(initial.dim());
  for (std::size_t k = 0; k < features.size(); ++k) {
    axpy(scores[k] / total, features[k].span(), fused.span());
  }
  return l2_normalize(fused);
}

/// Plurality vote; ties go to the larger summed score, then the lower class.
inline std::size_t baseline_majority_vote(std::span<const std::size_t> labels,
                                          std::span<const double> scores,
                                          std::size_t num_classes) {
  require(labels.size() == scores.size(), ErrorCode::DimMismatch,
          "vote labels and scores differ in length");
  require(!labels.empty(), ErrorCode::DimMismatch, "vote needs at least one view");
  std::vector<std::size_t> votes(num_classes, 0);
  std::vector<double> score_sum(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < num_classes, ErrorCode::BadLabel, "vote label out of range");
    ++votes[labels[i]];
    score_sum[labels[i]] += scores[i];
  }
  std::size_t best = 0;
  for (std::size_t m = 1; m < num_classes; ++m) {
    if (votes[m] > votes[best] || (votes[m] == votes[best] && score_sum[m] > score_sum[best])) {
      best = m;
    }
  }
  return best;
}

/// Debug dump: one row per class and centroid kind.
inline void write_bank_csv(const CentroidBank& bank, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  os.precision(17);
  os << "class_index,kind,components\n";
  auto row = [&](std::size_t m, const char* kind, const FeatureVec& v) {
    os << m << ',' << kind << ',';
    for (std::size_t i = 0; i < v.dim(); ++i) os << (i ? " " : "") << v[i];
    os << '\n';
  };
  for (std::size_t m = 0; m < bank.num_classes(); ++m) {
    row(m, "text", bank.text[m]);
    if (m < bank.image.size() && bank.image[m]) row(m, "image", *bank.image[m]);
    if (m < bank.fused.size()) row(m, "fused", bank.fused[m]);
  }
}

}  // namespace pest

#endif  // PEST_ENSEMBLE_HPP_
