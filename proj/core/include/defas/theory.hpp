// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "defas/diffusion.hpp"
#include "defas/rng.hpp"

namespace defas {

/// KL divergence between the two forward distributions at step t,
/// alpha_t/(2(1-alpha_t)) * ||z0r - z0f||^2 summed over latent entries.
double kl_closed_form(const Mat& z0r, const Mat& z0f, const NoiseSchedule& ns, int t);

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Log-density-ratio Monte Carlo estimate of the same divergence; the
/// independent oracle for kl_closed_form.
McEstimate kl_monte_carlo(const Mat& z0r, const Mat& z0f, const NoiseSchedule& ns, int t,
                          int n_samples, Rng& rng);

/// Smallest t whose alpha falls below 2*eps_kl/(2*eps_kl + diff_sq);
/// nullopt when even alpha[T] is too large.
std::optional<int> min_timestep_for_kl(double eps_kl, double diff_sq, const NoiseSchedule& ns);
std::optional<int> min_timestep_scan_oracle(double eps_kl, double diff_sq,
                                            const NoiseSchedule& ns);

/// Per-step coefficient increments summed from 1 to t; telescopes to
/// bound_coef(t) up to rounding.
double telescoped_coef_sum(const NoiseSchedule& ns, int t);

/// Max over t of the mean per-element squared noise-prediction error on
/// forward-sampled points from real latents.
double estimate_delta_eps(const EpsPredictor& pred, const std::vector<DfgExample>& real_set,
                          const NoiseSchedule& ns, const std::vector<int>& t_list, int draws,
                          Rng& rng);

struct ReconPoint {
  int t = 0;
  double mean_err = 0.0;  // per-element squared reconstruction error
  double bound = 0.0;     // bound_coef(t) * delta_eps * (1 + slack)
  bool pass = false;
};

/// Mean reconstruction error of the reverse chain at each t, with common
/// noise draws across t so the curve is comparable pointwise.
std::vector<ReconPoint> reconstruction_error_curve(const EpsPredictor& pred,
                                                   const std::vector<DfgExample>& real_set,
                                                   const NoiseSchedule& ns,
                                                   const std::vector<int>& t_list,
                                                   int chain_steps, int draws,
                                                   double delta_eps, double slack, Rng& rng);

struct LatentPair {
  Mat z0_real;
  Mat z0_fake;
  Mat id_tokens;
};

struct FakeCueCheck {
  int pairs = 0;
  int held = 0;
  double hold_rate = 0.0;
  std::vector<double> lhs;      // measured fake reconstruction error
  std::vector<double> rhs;      // trace energy minus measured real error
  bool pass = false;            // hold_rate >= required fraction
};

/// Fake reconstruction error must exceed spoof-trace energy minus the
/// measured real reconstruction error, pair by pair.
FakeCueCheck fake_cue_bound_check(const EpsPredictor& pred, const std::vector<LatentPair>& pairs,
                                  const NoiseSchedule& ns, int t_hat, int chain_steps,
                                  int draws, double required_rate, Rng& rng);

struct TradeoffPoint {
  int t_hat = 0;
  double real_energy = 0.0;
  double fake_energy = 0.0;
  double separability_auc = 0.0;  // real vs fake cue energy
};

std::vector<TradeoffPoint> tradeoff_sweep(const EpsPredictor& pred,
                                          const std::vector<DfgExample>& reals,
                                          const std::vector<DfgExample>& fakes,
                                          const NoiseSchedule& ns,
                                          const std::vector<int>& t_hat_list, int chain_steps,
                                          Rng& rng);

/// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

struct TheoryCheck {
  std::string name;
  double predicted = 0.0;
  double measured = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct TheoryReport {
  std::string note;  // interpretation choices surfaced to the reader
  std::vector<TheoryCheck> checks;

  bool pass() const;
  nlohmann::json to_json() const;
  std::string text() const;
};

}  // namespace defas
