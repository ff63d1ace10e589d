#include "omnidiff/diffusion.hpp"

#include <algorithm>
#include <numbers>

namespace omnidiff {

GammaKind parse_gamma_kind(std::string_view name) {
  if (name == "cosine") return GammaKind::cosine;
  if (name == "linear") return GammaKind::linear;
  throw ArgumentError("unknown gamma kind '" + std::string(name) + "'");
}

std::string_view to_string(GammaKind kind) {
  switch (kind) {
    case GammaKind::cosine:
      return "cosine";
    case GammaKind::linear:
      return "linear";
  }
  return "cosine";
}

double gamma(GammaKind kind, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw ArgumentError("gamma: ratio must lie in [0,1]");
  // Exact boundaries; cos(pi/2) is 6e-17 in floating point.
  if (r == 0.0) return 1.0;
  if (r == 1.0) return 0.0;
  switch (kind) {
    case GammaKind::cosine:
      return std::cos(std::numbers::pi * r / 2.0);
    case GammaKind::linear:
      return 1.0 - r;
  }
  return 0.0;
}

double gamma(std::string_view kind, double r) { return gamma(parse_gamma_kind(kind), r); }

int mask_count(GammaKind kind, double r, int m) {
  const double x = gamma(kind, r) * static_cast<double>(m);
  const int n = static_cast<int>(std::ceil(x - 1e-9));
  return std::clamp(n, 0, m);
}

void NoiseSchedule::validate() const {
  if (alpha.empty()) throw ArgumentError("schedule needs at least one step");
  if (alpha.size() != beta.size()) throw ArgumentError("alpha and beta lengths differ");
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    detail::check_probability(alpha[i], "alpha");
    detail::check_probability(beta[i], "beta");
    if (alpha[i] + beta[i] > 1.0 + 1e-15) {
      throw ArgumentError("alpha + beta exceeds 1 at step " + std::to_string(i + 1));
    }
  }
}

double NoiseSchedule::cumulative_mask_prob(int t) const {
  if (t < 0 || t > steps()) throw ArgumentError("cumulative_mask_prob: step out of range");
  double keep = 1.0;
  for (int s = 0; s < t; ++s) keep *= 1.0 - alpha[s];
  return 1.0 - keep;
}

NoiseSchedule NoiseSchedule::absorbing(std::vector<double> alpha, GammaKind kind) {
  NoiseSchedule s;
  s.beta.assign(alpha.size(), 0.0);
  s.alpha = std::move(alpha);
  s.gamma_kind = kind;
  s.validate();
  return s;
}

NoiseSchedule NoiseSchedule::from_gamma(GammaKind kind, int steps) {
  if (steps < 1) throw ArgumentError("from_gamma: steps must be >= 1");
  std::vector<double> alpha(steps);
  double prev_keep = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double keep = 1.0 - gamma(kind, 1.0 - static_cast<double>(t) / steps);
    alpha[t - 1] = prev_keep > 0.0 ? std::clamp(1.0 - keep / prev_keep, 0.0, 1.0) : 1.0;
    prev_keep = keep;
  }
  return absorbing(std::move(alpha), kind);
}

std::vector<int> corrupt(const std::vector<int>& tokens, const NoiseSchedule& schedule, int t,
                         int k, Rng& rng) {
  detail::check_codebook(k);
  schedule.validate();
  const double p = schedule.cumulative_mask_prob(t);
  std::vector<int> out(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= k) {
      throw ArgumentError("corrupt: token " + std::to_string(tokens[i]) + " at position " +
                          std::to_string(i) + " is not a codebook id");
    }
    // Draw for every token so the stream layout is independent of p.
    out[i] = rng.uniform() < p ? k : tokens[i];
  }
  return out;
}

}  // namespace omnidiff
