#pragma once

// Exhaustive evaluation of the diffusion likelihood bounds on tiny chains:
// the exact marginal log-likelihood, the KL-form ELBO, and the simplified
// mask-prediction bound sum_t E[log p(x_0 | x_t)] + C.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

#include "omnidiff/diffusion.hpp"

namespace omnidiff {

/// Joint states of seq_len tokens, each in [0, k] (k = mask), indexed in
/// mixed radix with position 0 as the most significant digit.
class SequenceStateSpace {
 public:
  SequenceStateSpace(int k, int seq_len);

  int k() const { return k_; }
  int seq_len() const { return seq_len_; }
  int size() const { return size_; }

  std::vector<int> decode(int index) const;
  int encode(const std::vector<int>& tokens) const;
  bool is_clean(int index) const;

  /// Per-token transition lifted to joint states: out[a,b] = prod_l q[a_l, b_l].
  Eigen::MatrixXd lift(const Eigen::MatrixXd& per_token) const;

 private:
  int k_;
  int seq_len_;
  int size_;
};

/// p_theta(x_0 | x_t) as a distribution over joint states; entries on states
/// containing a mask token must be zero.
using ReverseModel = std::function<Eigen::VectorXd(int t, int xt_index)>;

struct ElboReport {
  double exact_loglik = 0.0;
  double elbo = 0.0;
  double simplified_bound = 0.0;
  double c = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  double likelihood_gap() const { return exact_loglik - elbo; }
  double bound_gap() const { return elbo - simplified_bound; }
  bool ordered(double tol = 1e-9) const {
    return likelihood_gap() >= -tol && bound_gap() >= -tol;
  }
};

/// Largest (k+1)^seq_len * T accepted by verify_elbo.
inline constexpr std::int64_t kElboStateGuard = 1'000'000;
/// Joint-state cap; dense S x S transition tables are built.
inline constexpr int kElboMaxJointStates = 2048;

/// data: q(x_0) over joint states, positive on every clean state and zero
/// elsewhere. The prior p(x_T) is the data marginal q(x_T).
ElboReport verify_elbo(const NoiseSchedule& schedule, const ReverseModel& model,
                       const Eigen::VectorXd& data, int seq_len, int k);

}  // namespace omnidiff
