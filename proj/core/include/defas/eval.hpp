// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "defas/check.hpp"

namespace defas {

/// Scores oriented so that fake is the positive class: higher score means
/// more likely fake. A sample is accepted (called real) when score < thr.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;  // 1 = fake, 0 = real

  void add(double score, int label) {
    scores.push_back(score);
    labels.push_back(label);
  }
  size_t size() const { return scores.size(); }
  bool both_classes() const;
};

/// Probability that a random fake outranks a random real, ties counted half.
/// Computed with the rank statistic.
double auc(const ScoredSet& s);

/// O(n^2) pairwise comparison; must agree with auc() exactly.
double auc_pairwise_oracle(const ScoredSet& s);

struct HterResult {
  double hter = 0.0;
  double far = 0.0;
  double frr = 0.0;
  double threshold = 0.0;
};

/// FAR = fakes accepted as real (score < thr), FRR = reals rejected
/// (score >= thr), both at the given threshold.
HterResult hter_at(const ScoredSet& s, double threshold);

/// Threshold at the equal-error point of this set (|FAR-FRR| minimal over
/// candidate thresholds: below-min, score midpoints, above-max; ties pick the
/// lower threshold), then HTER = (FAR+FRR)/2 there.
HterResult hter(const ScoredSet& s);

/// Exhaustive scan with brute-force recounting; must agree with hter()
/// exactly.
HterResult hter_scan_oracle(const ScoredSet& s);

/// n indices evenly spaced over [0, len-1] inclusive, deduplicated.
std::vector<int> frame_sample(int len, int n);

struct MetricsLeg {
  std::string held_out;
  double hter_percent = 0.0;
  double auc_percent = 0.0;
};

struct MetricsReport {
  std::string title;
  std::string config_hash;
  std::vector<MetricsLeg> legs;

  MetricsLeg mean_row() const;
  void write_csv(const std::filesystem::path& path) const;
  std::string text_table() const;
};

}  // namespace defas
