// SPDX-License-Identifier: Apache-2.0
#include "defas/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "defas/io.hpp"

namespace defas {

bool ScoredSet::both_classes() const {
  bool real = false, fake = false;
  for (int l : labels) (l ? fake : real) = true;
  return real && fake;
}

namespace {

void check_set(const ScoredSet& s) {
  DEFAS_CHECK(!s.scores.empty() && s.scores.size() == s.labels.size(),
              "scored set empty or ragged");
  DEFAS_CHECK(s.both_classes(), "scored set needs both classes");
}

// Candidate thresholds shared by hter() and the scan oracle: a point below
// every score, midpoints between consecutive distinct scores, a point above.
std::vector<double> threshold_candidates(std::vector<double> sorted_scores) {
  std::vector<double> cand;
  cand.push_back(sorted_scores.front() - 1.0);
  for (size_t i = 0; i + 1 < sorted_scores.size(); ++i) {
    if (sorted_scores[i] < sorted_scores[i + 1]) {
      cand.push_back(0.5 * (sorted_scores[i] + sorted_scores[i + 1]));
    }
  }
  cand.push_back(sorted_scores.back() + 1.0);
  return cand;
}

}  // namespace

double auc(const ScoredSet& s) {
  check_set(s);
  const size_t n = s.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return s.scores[a] < s.scores[b]; });

  // average ranks over tie groups; ranks are 1-based
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && s.scores[order[j + 1]] == s.scores[order[i]]) ++j;
    double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double fake_rank_sum = 0.0;
  size_t n_fake = 0;
  for (size_t k = 0; k < n; ++k) {
    if (s.labels[k]) {
      fake_rank_sum += rank[k];
      ++n_fake;
    }
  }
  size_t n_real = n - n_fake;
  double u = fake_rank_sum - 0.5 * static_cast<double>(n_fake) * (n_fake + 1);
  return u / (static_cast<double>(n_fake) * static_cast<double>(n_real));
}

double auc_pairwise_oracle(const ScoredSet& s) {
  check_set(s);
  double wins = 0.0;
  size_t n_fake = 0, n_real = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (!s.labels[i]) continue;
    ++n_fake;
    for (size_t j = 0; j < s.size(); ++j) {
      if (s.labels[j]) continue;
      if (s.scores[i] > s.scores[j]) wins += 1.0;
      else if (s.scores[i] == s.scores[j]) wins += 0.5;
    }
  }
  for (int l : s.labels) n_real += (l == 0);
  return wins / (static_cast<double>(n_fake) * static_cast<double>(n_real));
}

HterResult hter_at(const ScoredSet& s, double threshold) {
  check_set(s);
  size_t fake_accepted = 0, real_rejected = 0, n_fake = 0, n_real = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    if (s.labels[i]) {
      ++n_fake;
      if (s.scores[i] < threshold) ++fake_accepted;
    } else {
      ++n_real;
      if (s.scores[i] >= threshold) ++real_rejected;
    }
  }
  HterResult r;
  r.threshold = threshold;
  r.far = static_cast<double>(fake_accepted) / static_cast<double>(n_fake);
  r.frr = static_cast<double>(real_rejected) / static_cast<double>(n_real);
  r.hter = 0.5 * (r.far + r.frr);
  return r;
}

HterResult hter(const ScoredSet& s) {
  check_set(s);
  const size_t n = s.size();
  std::vector<std::pair<double, int>> by_score(n);
  for (size_t i = 0; i < n; ++i) by_score[i] = {s.scores[i], s.labels[i]};
  std::sort(by_score.begin(), by_score.end());
  size_t n_fake = 0;
  for (int l : s.labels) n_fake += (l != 0);
  const size_t n_real = n - n_fake;

  // Walk thresholds upward with running counts below the threshold. Strict
  // improvement keeps the first (lowest) threshold on gap ties.
  bool have = false;
  HterResult best;
  double best_gap = 0.0;
  size_t fakes_below = 0, reals_below = 0;
  auto consider = [&](double thr) {
    double far = static_cast<double>(fakes_below) / n_fake;
    double frr = static_cast<double>(n_real - reals_below) / n_real;
    double gap = std::abs(far - frr);
    if (!have || gap < best_gap) {
      have = true;
      best_gap = gap;
      best = {0.5 * (far + frr), far, frr, thr};
    }
  };
  consider(by_score.front().first - 1.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && by_score[j + 1].first == by_score[i].first) ++j;
    for (size_t k = i; k <= j; ++k) {
      if (by_score[k].second) ++fakes_below;
      else ++reals_below;
    }
    if (j + 1 < n) consider(0.5 * (by_score[i].first + by_score[j + 1].first));
    i = j + 1;
  }
  consider(by_score.back().first + 1.0);
  return best;
}

HterResult hter_scan_oracle(const ScoredSet& s) {
  check_set(s);
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  const std::vector<double> cand = threshold_candidates(std::move(sorted));
  bool have = false;
  HterResult best;
  double best_gap = 0.0;
  for (double thr : cand) {
    size_t fa = 0, rr = 0, nf = 0, nr = 0;
    for (size_t i = 0; i < s.size(); ++i) {
      if (s.labels[i]) {
        ++nf;
        fa += s.scores[i] < thr;
      } else {
        ++nr;
        rr += s.scores[i] >= thr;
      }
    }
    double far = static_cast<double>(fa) / nf;
    double frr = static_cast<double>(rr) / nr;
    double gap = std::abs(far - frr);
    if (!have || gap < best_gap) {
      have = true;
      best_gap = gap;
      best = {0.5 * (far + frr), far, frr, thr};
    }
  }
  return best;
}

std::vector<int> frame_sample(int len, int n) {
  DEFAS_CHECK(len >= 1, "frame_sample: empty sequence");
  DEFAS_CHECK(n >= 1, "frame_sample: n=", n);
  std::vector<int> idx;
  if (n == 1) {
    idx.push_back(0);
  } else {
    for (int i = 0; i < n; ++i) {
      double pos = static_cast<double>(i) * (len - 1) / (n - 1);
      int v = static_cast<int>(std::lround(pos));
      if (idx.empty() || idx.back() != v) idx.push_back(v);
    }
  }
  return idx;
}

MetricsLeg MetricsReport::mean_row() const {
  DEFAS_CHECK(!legs.empty(), "report has no legs");
  MetricsLeg m;
  m.held_out = "mean";
  for (const MetricsLeg& l : legs) {
    m.hter_percent += l.hter_percent;
    m.auc_percent += l.auc_percent;
  }
  m.hter_percent /= static_cast<double>(legs.size());
  m.auc_percent /= static_cast<double>(legs.size());
  return m;
}

void MetricsReport::write_csv(const std::filesystem::path& path) const {
  CsvWriter csv(path, {"held_out", "hter_percent", "auc_percent"});
  for (const MetricsLeg& l : legs) {
    csv.row({l.held_out, std::to_string(l.hter_percent), std::to_string(l.auc_percent)});
  }
  MetricsLeg m = mean_row();
  csv.row({m.held_out, std::to_string(m.hter_percent), std::to_string(m.auc_percent)});
}

std::string MetricsReport::text_table() const {
  std::string out = title + " (config " + config_hash + ")\n";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "  %-12s %10s %10s\n", "held_out", "HTER%", "AUC%");
  out += buf;
  auto line = [&](const MetricsLeg& l) {
    std::snprintf(buf, sizeof(buf), "  %-12s %10.2f %10.2f\n", l.held_out.c_str(),
                  l.hter_percent, l.auc_percent);
    out += buf;
  };
  for (const MetricsLeg& l : legs) line(l);
  line(mean_row());
  return out;
}

}  // namespace defas
