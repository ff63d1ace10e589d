#pragma once

// Reference computations written without the transition-matrix algebra:
// scalar transition probabilities, explicit path enumeration, Bayes rule by
// counting, Monte-Carlo two-stage sampling. Used to cross-check the library
// and by the verify-diffusion command.

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "omnidiff/diffusion.hpp"
#include "omnidiff/elbo.hpp"
#include "omnidiff/rng.hpp"
#include "omnidiff/tokenizer.hpp"

namespace omnidiff::oracle {

/// P(mask-step then uniform-step takes `from` to `to`), states in [0, k].
double step_prob(double alpha, double beta, int k, int from, int to);

/// Per-token trajectory probabilities for steps 1..t starting at x0.
/// Entry [a][b] = q(x_{t-1} = a, x_t = b | x_0); summing over a gives the
/// t-step marginal.
std::vector<std::vector<double>> path_joint(const NoiseSchedule& schedule, int t, int k, int x0);

double path_marginal(const NoiseSchedule& schedule, int t, int k, int x0, int xt);

/// q(x_{t-1} | x_t, x_0) from path_joint; empty when x_t is unreachable.
std::vector<double> bayes_posterior(const NoiseSchedule& schedule, int t, int k, int x0, int xt);

/// Empirical frequencies of sampling through the mask step then the
/// uniform step, `samples` draws per start state.
Eigen::MatrixXd monte_carlo_compose(double alpha, double beta, int k, int samples, Rng& rng);

/// Exact log-likelihood, ELBO and simplified bound by enumerating full
/// forward and reverse trajectories over joint states.
ElboReport path_elbo(const NoiseSchedule& schedule, const ReverseModel& model,
                     const Eigen::VectorXd& data, int seq_len, int k);

/// P(training mask count = j) for j in [0, m], r ~ U(0,1], computed from the
/// inverse of gamma.
std::vector<double> mask_count_distribution(GammaKind kind, int m);

/// Grid recovered from a P3 file written with the fixed 16-color palette.
ToyImage parse_pixmap(std::string_view text, int scale, int palette_bits = 4);

// ---------------------------------------------------------------------------
// Aggregate checks shared by verify-diffusion and the acceptance suite.

NoiseSchedule random_schedule(int steps, Rng& rng, bool allow_uniform = true);

struct AlgebraReport {
  int schedules = 0;
  double max_marginal_error = 0.0;
  double max_posterior_tv = 0.0;
  double max_row_error = 0.0;
  int unreachable_pairs = 0;
  int unreachable_mismatches = 0;  // pairs where posterior did not raise DomainError
  int absorption_failures = 0;
};

/// For k in ks and T in ts, `per_combo` random schedules each.
AlgebraReport check_algebra(const std::vector<int>& ks, const std::vector<int>& ts,
                            int per_combo, std::uint64_t seed);

struct LiteralReport {
  int cases = 0;
  double max_alpha_zero_error = 0.0;
  double max_beta_zero_error = 0.0;
  /// max over cases of (discrepancy - alpha * beta); <= 0 means within bound.
  double max_bound_excess = -1.0;
  double max_deficit_error = 0.0;
};

LiteralReport check_literal(int cases, std::uint64_t seed);

struct ElboInstance {
  int k = 2;
  int steps = 1;
  int seq_len = 1;
  ElboReport report;
  double oracle_diff = 0.0;     // max |library - path enumeration| over the fields
  double c_split_error = 0.0;   // |C - (C1 + C2)|
};

std::vector<ElboInstance> check_elbo_chain(int instances, std::uint64_t seed);

/// Random reverse model with full support on clean states. Admissible only
/// for schedules where every clean x_0 reaches every x_t (beta_t > 0).
ReverseModel random_reverse_model(int k, int seq_len, Rng& rng);
Eigen::VectorXd random_data(int k, int seq_len, Rng& rng);

}  // namespace omnidiff::oracle
