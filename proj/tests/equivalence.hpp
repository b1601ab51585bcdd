// Library-vs-oracle sweeps over random instances. Each returns the largest
// deviation seen (label sweeps return the number of disagreements).

#ifndef PEST_TESTS_EQUIVALENCE_HPP_
#define PEST_TESTS_EQUIVALENCE_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "pest/ensemble.hpp"
#include "pest/selftrain.hpp"

namespace pest::equivalence {

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

inline std::vector<FeatureVec> random_units(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<FeatureVec> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(oracle::random_unit(dim, rng));
  return out;
}

inline double language(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const auto z = random_units(1 + rng.index(8), 2 + rng.index(7), rng);
    worst = std::max(worst, max_abs_diff(language_ensemble(z).values(),
                                         oracle::language_ensemble(oracle::dense(z))));
  }
  return worst;
}

/// Also fails (returns infinity) when presence of a class centroid disagrees.
inline double vision(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t classes = 2 + rng.index(6);
    const auto z = random_units(1 + rng.index(20), 2 + rng.index(7), rng);
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < z.size(); ++i) labels.push_back(rng.index(classes));
    const auto got = vision_ensemble(z, labels, classes);
    const auto want = oracle::vision_ensemble(oracle::dense(z), labels, classes);
    for (std::size_t m = 0; m < classes; ++m) {
      if (got[m].has_value() != want[m].has_value()) return INFINITY;
      if (got[m]) worst = std::max(worst, max_abs_diff(got[m]->values(), *want[m]));
    }
  }
  return worst;
}

/// Classes without a fresh centroid must keep their fused centroid bit-for-bit.
inline double temporal(Rng& rng, int trials) {
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t classes = 2 + rng.index(5);
    const std::size_t dim = 2 + rng.index(7);
    CentroidBank bank;
    bank.text = random_units(classes, dim, rng);
    bank.image.assign(classes, std::nullopt);
    bank.fused = random_units(classes, dim, rng);
    bank.lambda = rng.uniform() < 0.2 ? (rng.uniform() < 0.5 ? 0.0 : 1.0) : rng.uniform();
    OptionalCentroids fresh(classes);
    for (std::size_t m = 0; m < classes; ++m) {
      if (rng.uniform() < 0.7) fresh[m] = oracle::random_unit(dim, rng);
    }
    const auto before = bank.fused;
    const auto after = temporal_update(bank, fresh);
    for (std::size_t m = 0; m < classes; ++m) {
      if (!fresh[m]) {
        if (!(after.fused[m] == before[m])) return INFINITY;
        continue;
      }
      const auto want = oracle::temporal_blend(before[m].values(), fresh[m]->values(), bank.lambda);
      worst = std::max(worst, max_abs_diff(after.fused[m].values(), want));
    }
  }
  return worst;
}

/// Number of instances where the library label differs from the oracle.
/// Half of the instances plant exact ties to exercise the tie rule.
inline int pest_labels(Rng& rng, int trials) {
  int mismatches = 0;
  for (int t = 0; t < trials; ++t) {
    const std::size_t classes = 2 + rng.index(8);
    const std::size_t dim = 2 + rng.index(7);
    auto text = random_units(classes, dim, rng);
    auto fused = random_units(classes, dim, rng);
    if (t % 2 == 1) {
      const std::size_t a = rng.index(classes), b = rng.index(classes);
      text[b] = text[a];
      fused[b] = fused[a];
    }
    const auto z = oracle::random_unit(dim, rng);
    const auto got = pest_pseudo_label(z, text, fused).label;
    const auto want = oracle::pest_label(z.values(), oracle::dense(text), oracle::dense(fused));
    if (got != want) ++mismatches;
  }
  return mismatches;
}

}  // namespace pest::equivalence

#endif  // PEST_TESTS_EQUIVALENCE_HPP_
