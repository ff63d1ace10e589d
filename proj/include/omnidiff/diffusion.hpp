#pragma once

// Categorical (absorbing + uniform) diffusion algebra over a codebook of K
// states plus one [MASK] state, which always sits at index K.

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "omnidiff/errors.hpp"
#include "omnidiff/rng.hpp"

namespace omnidiff {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Mask scheduling function gamma: [0,1] -> [0,1], gamma(0)=1, gamma(1)=0.

enum class GammaKind { cosine, linear };

GammaKind parse_gamma_kind(std::string_view name);
std::string_view to_string(GammaKind kind);

double gamma(GammaKind kind, double r);
double gamma(std::string_view kind, double r);

/// ceil(gamma(r) * m), snapped so that floating noise just above an integer
/// does not bump the count.
int mask_count(GammaKind kind, double r, int m);

// ---------------------------------------------------------------------------

struct NoiseSchedule {
  std::vector<double> alpha;  // alpha[t-1] = mask probability of step t
  std::vector<double> beta;   // beta[t-1] = uniform-diffusion probability of step t
  GammaKind gamma_kind = GammaKind::cosine;

  int steps() const { return static_cast<int>(alpha.size()); }

  /// Throws ArgumentError on any broken invariant.
  void validate() const;

  /// 1 - prod_{s<=t} (1 - alpha_s); t = 0 gives 0.
  double cumulative_mask_prob(int t) const;

  static NoiseSchedule absorbing(std::vector<double> alpha,
                                 GammaKind kind = GammaKind::cosine);

  /// Pure absorbing schedule whose cumulative mask probability at step t is
  /// 1 - gamma(1 - t/T), i.e. the forward-time mirror of the sampler.
  static NoiseSchedule from_gamma(GammaKind kind, int steps);
};

enum class TransitionMode { absorbing, uniform, composed, literal };

template <typename Scalar = double>
struct TransitionMatrix {
  int k = 0;
  TransitionMode mode = TransitionMode::composed;
  Matrix<Scalar> entries;

  int mask_state() const { return k; }
  int size() const { return k + 1; }
};

template <typename Scalar = double>
struct CategoricalDist {
  Vector<Scalar> probs;

  Scalar operator[](int i) const { return probs(i); }
  int size() const { return static_cast<int>(probs.size()); }
};

namespace detail {

inline void check_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ArgumentError(std::string(what) + " must lie in [0,1], got " + std::to_string(p));
  }
}

inline void check_codebook(int k) {
  if (k < 1) throw ArgumentError("codebook size k must be >= 1");
}

}  // namespace detail

/// (1 - alpha) I + alpha 1 e_m^T, with the mask row forced to e_m.
template <typename Scalar = double>
TransitionMatrix<Scalar> build_absorbing(double alpha, int k) {
  detail::check_probability(alpha, "alpha");
  detail::check_codebook(k);
  const Scalar a = static_cast<Scalar>(alpha);
  TransitionMatrix<Scalar> q{k, TransitionMode::absorbing, Matrix<Scalar>::Zero(k + 1, k + 1)};
  q.entries.diagonal().setConstant(Scalar(1) - a);
  q.entries.col(k).setConstant(a);
  q.entries(k, k) = Scalar(1);
  return q;
}

/// Uniform diffusion among the K codebook states. With literal=false the
/// redistribution divisor is K and every row sums to 1; literal=true uses the
/// (K+1) divisor, which leaves non-mask rows short by beta/(K+1).
template <typename Scalar = double>
TransitionMatrix<Scalar> build_uniform(double beta, int k, bool literal = false) {
  detail::check_probability(beta, "beta");
  detail::check_codebook(k);
  const Scalar b = static_cast<Scalar>(beta);
  const Scalar spread = b / static_cast<Scalar>(literal ? k + 1 : k);
  TransitionMatrix<Scalar> q{k, literal ? TransitionMode::literal : TransitionMode::uniform,
                             Matrix<Scalar>::Zero(k + 1, k + 1)};
  q.entries.topLeftCorner(k, k).setConstant(spread);
  q.entries.topLeftCorner(k, k).diagonal().array() += Scalar(1) - b;
  q.entries(k, k) = Scalar(1);
  return q;
}

/// The closed-form per-step matrix with omega = 1 - alpha - beta and
/// nu = beta / (K+1) (codebook block omega I + nu, last column alpha).
template <typename Scalar = double>
TransitionMatrix<Scalar> build_literal(double alpha, double beta, int k) {
  detail::check_probability(alpha, "alpha");
  detail::check_probability(beta, "beta");
  detail::check_codebook(k);
  if (alpha + beta > 1.0) throw ArgumentError("alpha + beta must not exceed 1");
  const Scalar omega = Scalar(1) - static_cast<Scalar>(alpha) - static_cast<Scalar>(beta);
  const Scalar nu = static_cast<Scalar>(beta) / static_cast<Scalar>(k + 1);
  TransitionMatrix<Scalar> q{k, TransitionMode::literal, Matrix<Scalar>::Zero(k + 1, k + 1)};
  q.entries.topLeftCorner(k, k).setConstant(nu);
  q.entries.topLeftCorner(k, k).diagonal().array() += omega;
  q.entries.col(k).head(k).setConstant(static_cast<Scalar>(alpha));
  q.entries(k, k) = Scalar(1);
  return q;
}

/// Q_t = Q^a Q^u.
template <typename Scalar>
TransitionMatrix<Scalar> compose_step(const TransitionMatrix<Scalar>& qa,
                                      const TransitionMatrix<Scalar>& qu) {
  if (qa.k != qu.k || qa.entries.rows() != qu.entries.rows() ||
      qa.entries.cols() != qu.entries.cols()) {
    throw ArgumentError("compose_step: codebook size mismatch");
  }
  const bool literal = qa.mode == TransitionMode::literal || qu.mode == TransitionMode::literal;
  return {qa.k, literal ? TransitionMode::literal : TransitionMode::composed,
          qa.entries * qu.entries};
}

/// Per-step matrix Q_t; literal selects the closed-form matrix instead of
/// the product.
template <typename Scalar = double>
TransitionMatrix<Scalar> step_matrix(const NoiseSchedule& schedule, int t, int k,
                                     bool literal = false) {
  if (t < 1 || t > schedule.steps()) {
    throw ArgumentError("step t=" + std::to_string(t) + " outside [1," +
                        std::to_string(schedule.steps()) + "]");
  }
  const double a = schedule.alpha[t - 1];
  const double b = schedule.beta[t - 1];
  if (literal) return build_literal<Scalar>(a, b, k);
  return compose_step(build_absorbing<Scalar>(a, k), build_uniform<Scalar>(b, k, false));
}

/// Qbar_t = Q_1 Q_2 ... Q_t. t = 0 is accepted and yields the identity.
template <typename Scalar = double>
TransitionMatrix<Scalar> cumulative(const NoiseSchedule& schedule, int t, int k,
                                    bool literal = false) {
  schedule.validate();
  detail::check_codebook(k);
  if (t < 0 || t > schedule.steps()) {
    throw ArgumentError("step t=" + std::to_string(t) + " outside [1," +
                        std::to_string(schedule.steps()) + "]");
  }
  TransitionMatrix<Scalar> acc{k, literal ? TransitionMode::literal : TransitionMode::composed,
                               Matrix<Scalar>::Identity(k + 1, k + 1)};
  for (int s = 1; s <= t; ++s) {
    acc.entries = (acc.entries * step_matrix<Scalar>(schedule, s, k, literal).entries).eval();
  }
  return acc;
}

/// q(x_t | x_0) = row x0 of Qbar_t.
template <typename Scalar>
CategoricalDist<Scalar> marginal(int x0, const TransitionMatrix<Scalar>& qbar) {
  if (x0 < 0 || x0 > qbar.k) {
    throw ArgumentError("state " + std::to_string(x0) + " outside [0," + std::to_string(qbar.k) + "]");
  }
  return {qbar.entries.row(x0).transpose()};
}

/// q(x_{t-1} | x_t, x_0) = (x_t Q_t^T (.) x_0 Qbar_{t-1}) / (x_0 Qbar_t x_t^T).
/// Throws DomainError when x_t is unreachable from x_0 at step t.
template <typename Scalar = double>
CategoricalDist<Scalar> posterior(int xt, int x0, const NoiseSchedule& schedule, int t, int k) {
  if (xt < 0 || xt > k || x0 < 0 || x0 > k) throw ArgumentError("posterior: state out of range");
  if (t < 1 || t > schedule.steps()) throw ArgumentError("posterior: step out of range");
  const auto q_t = step_matrix<Scalar>(schedule, t, k);
  const auto prev = cumulative<Scalar>(schedule, t - 1, k);
  const Scalar denom = (prev.entries.row(x0) * q_t.entries.col(xt)).value();
  if (!(denom > Scalar(0))) {
    throw DomainError("posterior: x_t=" + std::to_string(xt) + " unreachable from x_0=" +
                      std::to_string(x0) + " at step " + std::to_string(t));
  }
  Vector<Scalar> numer = q_t.entries.col(xt).cwiseProduct(prev.entries.row(x0).transpose());
  return {numer / numer.sum()};
}

/// Absorbing-only corruption of codebook-local ids: each token becomes the
/// mask id k with the cumulative mask probability at step t.
std::vector<int> corrupt(const std::vector<int>& tokens, const NoiseSchedule& schedule, int t,
                         int k, Rng& rng);

}  // namespace omnidiff
