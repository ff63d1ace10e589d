#include "omnidiff/elbo.hpp"

#include <cmath>

namespace omnidiff {

namespace {

double xlogy(double x, double y) { return x > 0.0 ? x * std::log(y) : 0.0; }

}  // namespace

SequenceStateSpace::SequenceStateSpace(int k, int seq_len) : k_(k), seq_len_(seq_len), size_(1) {
  if (k < 1) throw ArgumentError("state space: k must be >= 1");
  if (seq_len < 1) throw ArgumentError("state space: seq_len must be >= 1");
  for (int i = 0; i < seq_len; ++i) {
    if (size_ > kElboStateGuard / (k + 1)) throw CapacityError("state space too large");
    size_ *= k + 1;
  }
}

std::vector<int> SequenceStateSpace::decode(int index) const {
  std::vector<int> tokens(seq_len_);
  for (int l = seq_len_ - 1; l >= 0; --l) {
    tokens[l] = index % (k_ + 1);
    index /= k_ + 1;
  }
  return tokens;
}

int SequenceStateSpace::encode(const std::vector<int>& tokens) const {
  int index = 0;
  for (int v : tokens) index = index * (k_ + 1) + v;
  return index;
}

bool SequenceStateSpace::is_clean(int index) const {
  for (int l = 0; l < seq_len_; ++l) {
    if (index % (k_ + 1) == k_) return false;
    index /= k_ + 1;
  }
  return true;
}

Eigen::MatrixXd SequenceStateSpace::lift(const Eigen::MatrixXd& per_token) const {
  Eigen::MatrixXd out(size_, size_);
  for (int a = 0; a < size_; ++a) {
    const auto ta = decode(a);
    for (int b = 0; b < size_; ++b) {
      const auto tb = decode(b);
      double p = 1.0;
      for (int l = 0; l < seq_len_; ++l) p *= per_token(ta[l], tb[l]);
      out(a, b) = p;
    }
  }
  return out;
}

ElboReport verify_elbo(const NoiseSchedule& schedule, const ReverseModel& model,
                       const Eigen::VectorXd& data, int seq_len, int k) {
  schedule.validate();
  const int steps = schedule.steps();
  std::int64_t joint = 1;
  for (int i = 0; i < seq_len; ++i) {
    joint *= k + 1;
    if (joint * steps > kElboStateGuard) {
      throw CapacityError("verify_elbo: (k+1)^seq_len * T exceeds the enumeration guard");
    }
  }
  if (joint > kElboMaxJointStates) throw CapacityError("verify_elbo: too many joint states");

  const SequenceStateSpace space(k, seq_len);
  const int n = space.size();
  if (data.size() != n) throw ArgumentError("verify_elbo: data distribution has wrong size");
  for (int s = 0; s < n; ++s) {
    if (space.is_clean(s) ? !(data(s) > 0.0) : data(s) != 0.0) {
      throw ArgumentError("verify_elbo: data must be positive exactly on clean states");
    }
  }
  if (std::abs(data.sum() - 1.0) > 1e-10) throw ArgumentError("verify_elbo: data must sum to 1");

  // step[t] = Q_t, cum[t] = Qbar_t (cum[0] = I), marg[t] = q(x_t).
  std::vector<Eigen::MatrixXd> step(steps + 1), cum(steps + 1);
  std::vector<Eigen::VectorXd> marg(steps + 1);
  cum[0] = Eigen::MatrixXd::Identity(n, n);
  marg[0] = data;
  for (int t = 1; t <= steps; ++t) {
    step[t] = space.lift(step_matrix<double>(schedule, t, k).entries);
    cum[t] = cum[t - 1] * step[t];
    marg[t] = (data.transpose() * cum[t]).transpose();
  }

  // model_table[t](b, x0) = p_theta(x_0 | x_t = b).
  std::vector<Eigen::MatrixXd> model_table(steps + 1);
  for (int t = 1; t <= steps; ++t) {
    model_table[t] = Eigen::MatrixXd::Zero(n, n);
    for (int b = 0; b < n; ++b) {
      if (!(marg[t](b) > 0.0)) continue;
      Eigen::VectorXd p = model(t, b);
      if (p.size() != n) throw ArgumentError("verify_elbo: model output has wrong size");
      for (int x0 = 0; x0 < n; ++x0) {
        if (p(x0) < 0.0 || (p(x0) > 0.0 && !space.is_clean(x0))) {
          throw ArgumentError("verify_elbo: model must be a distribution over clean states");
        }
      }
      model_table[t].row(b) = p.transpose();
    }
  }

  // Forward posterior q(x_{t-1} = a | x_t = b, x_0), zero when unreachable.
  auto post = [&](int t, int b, int x0, int a) {
    const double denom = cum[t](x0, b);
    if (!(denom > 0.0)) return 0.0;
    return step[t](a, b) * cum[t - 1](x0, a) / denom;
  };

  // Reverse kernel p_theta(x_{t-1} = a | x_t = b) = sum_x0 q(a | b, x0) p(x0 | b).
  std::vector<Eigen::MatrixXd> reverse(steps + 1);
  for (int t = 1; t <= steps; ++t) {
    reverse[t] = Eigen::MatrixXd::Zero(n, n);
    for (int b = 0; b < n; ++b) {
      if (!(marg[t](b) > 0.0)) continue;
      for (int x0 = 0; x0 < n; ++x0) {
        const double w = model_table[t](b, x0);
        if (w == 0.0) continue;
        if (!(cum[t](x0, b) > 0.0)) {
          throw DomainError("verify_elbo: model assigns mass to an x_0 that cannot reach x_t");
        }
        for (int a = 0; a < n; ++a) reverse[t](b, a) += w * post(t, b, x0, a);
      }
    }
  }

  ElboReport report;

  // Exact: p_theta(x_0) = sum over reverse paths from p(x_T) = q(x_T).
  Eigen::RowVectorXd pi = marg[steps].transpose();
  for (int t = steps; t >= 1; --t) pi = pi * reverse[t];
  for (int x0 = 0; x0 < n; ++x0) report.exact_loglik += xlogy(data(x0), pi(x0));

  // ELBO: -L_T + L_0 - sum_{t>=2} L_{t-1}, averaged over q(x_0).
  for (int x0 = 0; x0 < n; ++x0) {
    const double w0 = data(x0);
    if (w0 == 0.0) continue;
    double term = 0.0;
    for (int b = 0; b < n; ++b) {
      const double q = cum[steps](x0, b);
      if (q > 0.0) term -= q * std::log(q / marg[steps](b));
    }
    for (int b = 0; b < n; ++b) term += xlogy(cum[1](x0, b), reverse[1](b, x0));
    for (int t = 2; t <= steps; ++t) {
      for (int b = 0; b < n; ++b) {
        const double qb = cum[t](x0, b);
        if (qb == 0.0) continue;
        double kl = 0.0;
        for (int a = 0; a < n; ++a) {
          const double qa = post(t, b, x0, a);
          if (qa > 0.0) kl += qa * std::log(qa / reverse[t](b, a));
        }
        term -= qb * kl;
      }
    }
    report.elbo += w0 * term;
  }

  // C = E[log q(x_0)] - sum_t E[log q(x_0 | x_t)].
  double sum_model = 0.0;
  report.c = 0.0;
  for (int x0 = 0; x0 < n; ++x0) report.c += xlogy(data(x0), data(x0));
  for (int t = 1; t <= steps; ++t) {
    for (int x0 = 0; x0 < n; ++x0) {
      for (int b = 0; b < n; ++b) {
        const double joint_p = data(x0) * cum[t](x0, b);
        if (joint_p == 0.0) continue;
        report.c -= joint_p * std::log(joint_p / marg[t](b));
        sum_model += joint_p * std::log(model_table[t](b, x0));
      }
    }
  }
  report.simplified_bound = sum_model + report.c;

  // C1 = E[-sum_t log q(x_t | x_{t-1}) + log q(x_T)].
  report.c1 = 0.0;
  for (int b = 0; b < n; ++b) report.c1 += xlogy(marg[steps](b), marg[steps](b));
  for (int t = 1; t <= steps; ++t) {
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const double pab = marg[t - 1](a) * step[t](a, b);
        if (pab > 0.0) report.c1 -= pab * std::log(step[t](a, b));
      }
    }
  }

  // C2 = E[sum_t log q(x_{t-1} | x_t)]
  //      - sum_t E[sum_x0' q(x0' | x_{t-1}) log q(x0' | x_t)].
  report.c2 = 0.0;
  for (int t = 1; t <= steps; ++t) {
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        const double pab = marg[t - 1](a) * step[t](a, b);
        if (pab == 0.0) continue;
        report.c2 += pab * std::log(pab / marg[t](b));
        for (int x0 = 0; x0 < n; ++x0) {
          const double given_prev = data(x0) * cum[t - 1](x0, a) / marg[t - 1](a);
          if (given_prev == 0.0) continue;
          const double given_cur = data(x0) * cum[t](x0, b) / marg[t](b);
          report.c2 -= pab * given_prev * std::log(given_cur);
        }
      }
    }
  }
  return report;
}

}  // namespace omnidiff
