// SPDX-License-Identifier: Apache-2.0
#include "defas/theory.hpp"

#include <algorithm>
#include <cmath>

#include "defas/eval.hpp"

namespace defas {

namespace {

double per_elem_sq(const Mat& a, const Mat& b) {
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

double kl_closed_form(const Mat& z0r, const Mat& z0f, const NoiseSchedule& ns, int t) {
  DEFAS_CHECK(t >= 1 && t <= ns.T, "kl_closed_form: t=", t, " outside [1,", ns.T, "]");
  DEFAS_CHECK(z0r.rows() == z0f.rows() && z0r.cols() == z0f.cols(), "kl_closed_form: shape");
  double a = ns.alpha(t);
  return a / (2.0 * (1.0 - a)) * (z0r - z0f).squaredNorm();
}

McEstimate kl_monte_carlo(const Mat& z0r, const Mat& z0f, const NoiseSchedule& ns, int t,
                          int n_samples, Rng& rng) {
  DEFAS_CHECK(t >= 1 && t <= ns.T, "kl_monte_carlo: t=", t);
  DEFAS_CHECK(n_samples >= 2, "kl_monte_carlo: n_samples=", n_samples);
  double a = ns.alpha(t);
  double s = std::sqrt(1.0 - a);
  Mat m1 = std::sqrt(a) * z0r;
  Mat m2 = std::sqrt(a) * z0f;
  double sum = 0.0, sum_sq = 0.0;
  Mat eps(z0r.rows(), z0r.cols());
  for (int i = 0; i < n_samples; ++i) {
    rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
    Mat z = m1 + s * eps;
    double log_ratio = ((z - m2).squaredNorm() - (z - m1).squaredNorm()) / (2.0 * s * s);
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  McEstimate out;
  out.estimate = sum / n_samples;
  double var = (sum_sq - sum * sum / n_samples) / (n_samples - 1);
  out.std_error = std::sqrt(std::max(0.0, var) / n_samples);
  return out;
}

std::optional<int> min_timestep_for_kl(double eps_kl, double diff_sq, const NoiseSchedule& ns) {
  DEFAS_CHECK(eps_kl > 0.0, "min_timestep_for_kl: eps_kl=", eps_kl);
  DEFAS_CHECK(diff_sq >= 0.0, "min_timestep_for_kl: diff_sq=", diff_sq);
  double limit = 2.0 * eps_kl / (2.0 * eps_kl + diff_sq);
  if (!(ns.alpha(ns.T) < limit)) return std::nullopt;
  // alpha is strictly decreasing for t >= 1: binary search the first t below.
  int lo = 1, hi = ns.T;
  while (lo < hi) {
    int mid = lo + (hi - lo) / 2;
    if (ns.alpha(mid) < limit) hi = mid;
    else lo = mid + 1;
  }
  return lo;
}

std::optional<int> min_timestep_scan_oracle(double eps_kl, double diff_sq,
                                            const NoiseSchedule& ns) {
  DEFAS_CHECK(eps_kl > 0.0, "min_timestep_scan_oracle: eps_kl=", eps_kl);
  double limit = 2.0 * eps_kl / (2.0 * eps_kl + diff_sq);
  for (int t = 1; t <= ns.T; ++t) {
    if (ns.alpha(t) < limit) return t;
  }
  return std::nullopt;
}

double telescoped_coef_sum(const NoiseSchedule& ns, int t) {
  DEFAS_CHECK(t >= 1 && t <= ns.T, "telescoped_coef_sum: t=", t);
  double acc = 0.0;
  for (int i = 1; i <= t; ++i) {
    double inc = ns.bound_coef(i) - ns.bound_coef(i - 1);
    DEFAS_CHECK(inc >= 0.0, "coefficient increment negative at i=", i);
    acc += inc;
  }
  return acc;
}

double estimate_delta_eps(const EpsPredictor& pred, const std::vector<DfgExample>& real_set,
                          const NoiseSchedule& ns, const std::vector<int>& t_list, int draws,
                          Rng& rng) {
  DEFAS_CHECK(!real_set.empty() && !t_list.empty() && draws >= 1, "estimate_delta_eps: inputs");
  double worst = 0.0;
  for (int t : t_list) {
    double acc = 0.0;
    int count = 0;
    for (const DfgExample& ex : real_set) {
      for (int d = 0; d < draws; ++d) {
        Mat eps(ex.z0.rows(), ex.z0.cols());
        rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
        Mat z_t = forward_sample(ns, ex.z0, t, eps);
        acc += per_elem_sq(pred.predict(z_t, t, ex.id_tokens), eps);
        ++count;
      }
    }
    worst = std::max(worst, acc / count);
  }
  return worst;
}

std::vector<ReconPoint> reconstruction_error_curve(const EpsPredictor& pred,
                                                   const std::vector<DfgExample>& real_set,
                                                   const NoiseSchedule& ns,
                                                   const std::vector<int>& t_list,
                                                   int chain_steps, int draws,
                                                   double delta_eps, double slack, Rng& rng) {
  DEFAS_CHECK(!real_set.empty() && !t_list.empty() && draws >= 1,
              "reconstruction_error_curve: inputs");
  // Same noise per (sample, draw) across every t so the curve shape is not
  // sampling jitter.
  std::vector<Mat> noise;
  noise.reserve(real_set.size() * static_cast<size_t>(draws));
  for (const DfgExample& ex : real_set) {
    for (int d = 0; d < draws; ++d) {
      Mat eps(ex.z0.rows(), ex.z0.cols());
      rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      noise.push_back(std::move(eps));
    }
  }
  std::vector<ReconPoint> curve;
  curve.reserve(t_list.size());
  for (int t : t_list) {
    double acc = 0.0;
    size_t k = 0;
    for (const DfgExample& ex : real_set) {
      for (int d = 0; d < draws; ++d, ++k) {
        Mat z_t = forward_sample(ns, ex.z0, t, noise[k]);
        Mat back = generate(ns, pred, z_t, t, std::min(chain_steps, t), ex.id_tokens);
        acc += per_elem_sq(back, ex.z0);
      }
    }
    ReconPoint p;
    p.t = t;
    p.mean_err = acc / static_cast<double>(k);
    p.bound = ns.bound_coef(t) * delta_eps * (1.0 + slack);
    p.pass = p.mean_err <= p.bound;
    curve.push_back(p);
  }
  return curve;
}

FakeCueCheck fake_cue_bound_check(const EpsPredictor& pred, const std::vector<LatentPair>& pairs,
                                  const NoiseSchedule& ns, int t_hat, int chain_steps,
                                  int draws, double required_rate, Rng& rng) {
  DEFAS_CHECK(!pairs.empty() && draws >= 1, "fake_cue_bound_check: inputs");
  FakeCueCheck out;
  out.pairs = static_cast<int>(pairs.size());
  for (const LatentPair& p : pairs) {
    double fake_err = 0.0, real_err = 0.0;
    for (int d = 0; d < draws; ++d) {
      Mat eps(p.z0_fake.rows(), p.z0_fake.cols());
      rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      Mat zf = forward_sample(ns, p.z0_fake, t_hat, eps);
      fake_err += per_elem_sq(generate(ns, pred, zf, t_hat, std::min(chain_steps, t_hat),
                                       p.id_tokens),
                              p.z0_fake);
      rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      Mat zr = forward_sample(ns, p.z0_real, t_hat, eps);
      real_err += per_elem_sq(generate(ns, pred, zr, t_hat, std::min(chain_steps, t_hat),
                                       p.id_tokens),
                              p.z0_real);
    }
    fake_err /= draws;
    real_err /= draws;
    double trace = per_elem_sq(p.z0_fake, p.z0_real);
    out.lhs.push_back(fake_err);
    out.rhs.push_back(trace - real_err);
    if (fake_err > trace - real_err) ++out.held;
  }
  out.hold_rate = static_cast<double>(out.held) / out.pairs;
  out.pass = out.hold_rate >= required_rate;
  return out;
}

std::vector<TradeoffPoint> tradeoff_sweep(const EpsPredictor& pred,
                                          const std::vector<DfgExample>& reals,
                                          const std::vector<DfgExample>& fakes,
                                          const NoiseSchedule& ns,
                                          const std::vector<int>& t_hat_list, int chain_steps,
                                          Rng& rng) {
  DEFAS_CHECK(!reals.empty() && !fakes.empty(), "tradeoff_sweep: inputs");
  std::vector<Mat> noise;
  auto draw_noise = [&](const std::vector<DfgExample>& set) {
    for (const DfgExample& ex : set) {
      Mat eps(ex.z0.rows(), ex.z0.cols());
      rng.fill_normal(eps.data(), static_cast<size_t>(eps.size()));
      noise.push_back(std::move(eps));
    }
  };
  draw_noise(reals);
  draw_noise(fakes);

  std::vector<TradeoffPoint> sweep;
  for (int t_hat : t_hat_list) {
    TradeoffPoint pt;
    pt.t_hat = t_hat;
    ScoredSet scored;
    size_t k = 0;
    auto energy = [&](const DfgExample& ex) {
      Mat z_t = forward_sample(ns, ex.z0, t_hat, noise[k++]);
      Mat back = generate(ns, pred, z_t, t_hat, std::min(chain_steps, t_hat), ex.id_tokens);
      return per_elem_sq(back, ex.z0);
    };
    for (const DfgExample& ex : reals) {
      double e = energy(ex);
      pt.real_energy += e;
      scored.add(e, 0);
    }
    for (const DfgExample& ex : fakes) {
      double e = energy(ex);
      pt.fake_energy += e;
      scored.add(e, 1);
    }
    pt.real_energy /= static_cast<double>(reals.size());
    pt.fake_energy /= static_cast<double>(fakes.size());
    pt.separability_auc = auc(scored);
    sweep.push_back(pt);
  }
  return sweep;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n, 0.0);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  DEFAS_CHECK(x.size() == y.size(), "spearman_rho: length mismatch");
  DEFAS_CHECK(x.size() >= 2, "spearman_rho: need at least two points");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (size_t i = 0; i < x.size(); ++i) { mx += rx[i]; my += ry[i]; }
  mx /= n; my /= n;
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  DEFAS_CHECK(dx > 0 && dy > 0, "spearman_rho: constant input has no rank correlation");
  return num / std::sqrt(dx * dy);
}

bool TheoryReport::pass() const {
  for (const TheoryCheck& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

nlohmann::json TheoryReport::to_json() const {
  nlohmann::json j;
  j["note"] = note;
  j["pass"] = pass();
  j["checks"] = nlohmann::json::array();
  for (const TheoryCheck& c : checks) {
    j["checks"].push_back({{"name", c.name},
                           {"predicted", c.predicted},
                           {"measured", c.measured},
                           {"tolerance", c.tolerance},
                           {"pass", c.pass}});
  }
  return j;
}

std::string TheoryReport::text() const {
  std::string out = "theory checks";
  out += pass() ? " [PASS]\n" : " [FAIL]\n";
  if (!note.empty()) out += "note: " + note + "\n";
  char buf[160];
  for (const TheoryCheck& c : checks) {
    std::snprintf(buf, sizeof(buf), "  %-44s predicted=%-12.6g measured=%-12.6g tol=%-10.4g %s\n",
                  c.name.c_str(), c.predicted, c.measured, c.tolerance,
                  c.pass ? "ok" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace defas
