#include "omnidiff/oracle.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "omnidiff/pixmap.hpp"

namespace omnidiff::oracle {

namespace {

// Entries of the two single-stage kernels, written out case by case.
double mask_stage(double alpha, int k, int from, int to) {
  if (from == k) return to == k ? 1.0 : 0.0;
  if (to == k) return alpha;
  return to == from ? 1.0 - alpha : 0.0;
}

double uniform_stage(double beta, int k, int from, int to) {
  if (from == k) return to == k ? 1.0 : 0.0;
  if (to == k) return 0.0;
  return (to == from ? 1.0 - beta : 0.0) + beta / k;
}

// Joint-state helpers: digits in base k+1, position 0 most significant.
std::vector<int> digits(int index, int k, int seq_len) {
  std::vector<int> out(seq_len);
  for (int l = seq_len - 1; l >= 0; --l) {
    out[l] = index % (k + 1);
    index /= k + 1;
  }
  return out;
}

int state_count(int k, int seq_len) {
  int n = 1;
  for (int l = 0; l < seq_len; ++l) n *= k + 1;
  return n;
}

double joint_step(const NoiseSchedule& s, int t, int k, int seq_len, int a, int b) {
  const auto da = digits(a, k, seq_len);
  const auto db = digits(b, k, seq_len);
  double p = 1.0;
  for (int l = 0; l < seq_len; ++l) p *= step_prob(s.alpha[t - 1], s.beta[t - 1], k, da[l], db[l]);
  return p;
}

bool clean(int index, int k, int seq_len) {
  for (int d : digits(index, k, seq_len)) {
    if (d == k) return false;
  }
  return true;
}

}  // namespace

double step_prob(double alpha, double beta, int k, int from, int to) {
  double total = 0.0;
  for (int mid = 0; mid <= k; ++mid) {
    total += mask_stage(alpha, k, from, mid) * uniform_stage(beta, k, mid, to);
  }
  return total;
}

std::vector<std::vector<double>> path_joint(const NoiseSchedule& schedule, int t, int k, int x0) {
  if (t < 1 || t > schedule.steps()) throw ArgumentError("path_joint: step out of range");
  std::vector<std::vector<double>> out(k + 1, std::vector<double>(k + 1, 0.0));
  // Odometer over x_1..x_t.
  std::vector<int> path(t, 0);
  while (true) {
    double w = 1.0;
    int prev = x0;
    for (int s = 1; s <= t && w > 0.0; ++s) {
      w *= step_prob(schedule.alpha[s - 1], schedule.beta[s - 1], k, prev, path[s - 1]);
      prev = path[s - 1];
    }
    const int before = t >= 2 ? path[t - 2] : x0;
    out[before][path[t - 1]] += w;
    int pos = t - 1;
    while (pos >= 0 && ++path[pos] > k) path[pos--] = 0;
    if (pos < 0) break;
  }
  return out;
}

double path_marginal(const NoiseSchedule& schedule, int t, int k, int x0, int xt) {
  if (t == 0) return x0 == xt ? 1.0 : 0.0;
  const auto j = path_joint(schedule, t, k, x0);
  double total = 0.0;
  for (int a = 0; a <= k; ++a) total += j[a][xt];
  return total;
}

std::vector<double> bayes_posterior(const NoiseSchedule& schedule, int t, int k, int x0, int xt) {
  const auto j = path_joint(schedule, t, k, x0);
  double z = 0.0;
  for (int a = 0; a <= k; ++a) z += j[a][xt];
  if (!(z > 0.0)) return {};
  std::vector<double> out(k + 1);
  for (int a = 0; a <= k; ++a) out[a] = j[a][xt] / z;
  return out;
}

Eigen::MatrixXd monte_carlo_compose(double alpha, double beta, int k, int samples, Rng& rng) {
  Eigen::MatrixXd freq = Eigen::MatrixXd::Zero(k + 1, k + 1);
  for (int from = 0; from <= k; ++from) {
    for (int n = 0; n < samples; ++n) {
      int x = from;
      if (x != k && rng.bernoulli(alpha)) x = k;
      if (x != k && rng.bernoulli(beta)) x = static_cast<int>(rng.below(k));
      freq(from, x) += 1.0;
    }
  }
  return freq / samples;
}

ElboReport path_elbo(const NoiseSchedule& schedule, const ReverseModel& model,
                     const Eigen::VectorXd& data, int seq_len, int k) {
  const int n = state_count(k, seq_len);
  const int steps = schedule.steps();

  // fwd[t][a][b] = q(x_t = b | x_{t-1} = a).
  std::vector<std::vector<std::vector<double>>> fwd(steps + 1);
  for (int t = 1; t <= steps; ++t) {
    fwd[t].assign(n, std::vector<double>(n));
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) fwd[t][a][b] = joint_step(schedule, t, k, seq_len, a, b);
    }
  }

  // pair[t][x0][a][b] = q(x_{t-1} = a, x_t = b | x_0), accumulated from every
  // forward trajectory x_1..x_T.
  std::vector<std::vector<std::vector<std::vector<double>>>> pair(
      steps + 1, std::vector<std::vector<std::vector<double>>>(
                     n, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0))));
  std::vector<int> path(steps, 0);
  auto for_each_path = [&](auto&& fn) {
    std::fill(path.begin(), path.end(), 0);
    while (true) {
      fn();
      int pos = steps - 1;
      while (pos >= 0 && ++path[pos] >= n) path[pos--] = 0;
      if (pos < 0) break;
    }
  };
  auto path_weight = [&](int x0) {
    double w = 1.0;
    int prev = x0;
    for (int t = 1; t <= steps && w > 0.0; ++t) {
      w *= fwd[t][prev][path[t - 1]];
      prev = path[t - 1];
    }
    return w;
  };
  for (int x0 = 0; x0 < n; ++x0) {
    if (data(x0) == 0.0) continue;
    for_each_path([&] {
      const double w = path_weight(x0);
      if (w == 0.0) return;
      int prev = x0;
      for (int t = 1; t <= steps; ++t) {
        pair[t][x0][prev][path[t - 1]] += w;
        prev = path[t - 1];
      }
    });
  }

  // Derived tables: q(x_t | x_0), q(x_t), q(x_0 | x_t), forward posterior,
  // model table and the reverse kernel.
  auto given_x0 = [&](int t, int x0, int b) {
    if (t == 0) return x0 == b ? 1.0 : 0.0;
    double s = 0.0;
    for (int a = 0; a < n; ++a) s += pair[t][x0][a][b];
    return s;
  };
  std::vector<std::vector<double>> marg(steps + 1, std::vector<double>(n, 0.0));
  for (int t = 0; t <= steps; ++t) {
    for (int x0 = 0; x0 < n; ++x0) {
      if (data(x0) == 0.0) continue;
      for (int b = 0; b < n; ++b) marg[t][b] += data(x0) * given_x0(t, x0, b);
    }
  }
  auto x0_given = [&](int t, int b, int x0) {
    return marg[t][b] > 0.0 ? data(x0) * given_x0(t, x0, b) / marg[t][b] : 0.0;
  };
  auto post = [&](int t, int b, int x0, int a) {
    const double z = given_x0(t, x0, b);
    return z > 0.0 ? pair[t][x0][a][b] / z : 0.0;
  };
  std::vector<std::vector<Eigen::VectorXd>> p0(steps + 1, std::vector<Eigen::VectorXd>(n));
  std::vector<std::vector<std::vector<double>>> rev(
      steps + 1, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)));
  for (int t = 1; t <= steps; ++t) {
    for (int b = 0; b < n; ++b) {
      if (!(marg[t][b] > 0.0)) continue;
      p0[t][b] = model(t, b);
      for (int x0 = 0; x0 < n; ++x0) {
        if (p0[t][b](x0) == 0.0) continue;
        for (int a = 0; a < n; ++a) rev[t][b][a] += p0[t][b](x0) * post(t, b, x0, a);
      }
    }
  }

  ElboReport r;

  // Exact: enumerate reverse trajectories x_T -> ... -> x_1 -> x_0.
  std::vector<double> px0(n, 0.0);
  for_each_path([&] {
    // path[t-1] is x_t.
    double w = marg[steps][path[steps - 1]];
    for (int t = steps; t >= 2 && w > 0.0; --t) w *= rev[t][path[t - 1]][path[t - 2]];
    if (w == 0.0) return;
    for (int x0 = 0; x0 < n; ++x0) px0[x0] += w * rev[1][path[0]][x0];
  });
  for (int x0 = 0; x0 < n; ++x0) {
    if (data(x0) > 0.0) r.exact_loglik += data(x0) * std::log(px0[x0]);
  }

  // Trajectory expectations.
  double sum_model = 0.0;
  double sum_post = 0.0;
  double entropy_term = 0.0;
  for (int x0 = 0; x0 < n; ++x0) {
    if (data(x0) == 0.0) continue;
    entropy_term += data(x0) * std::log(data(x0));
    for_each_path([&] {
      const double w = path_weight(x0);
      if (w == 0.0) return;
      const double q = data(x0) * w;
      // ELBO integrand: log p(x_T) + sum_t log p(x_{t-1} | x_t) - sum_t log q(x_t | x_{t-1}).
      double integrand = std::log(marg[steps][path[steps - 1]]);
      int prev = x0;
      for (int t = 1; t <= steps; ++t) {
        const int cur = path[t - 1];
        integrand += std::log(rev[t][cur][prev]) - std::log(fwd[t][prev][cur]);
        sum_model += q * std::log(p0[t][cur](x0));
        sum_post += q * std::log(x0_given(t, cur, x0));
        prev = cur;
      }
      r.elbo += q * integrand;

      // C1 integrand.
      double c1 = std::log(marg[steps][path[steps - 1]]);
      prev = x0;
      for (int t = 1; t <= steps; ++t) {
        c1 -= std::log(fwd[t][prev][path[t - 1]]);
        prev = path[t - 1];
      }
      r.c1 += q * c1;

      // C2 integrand.
      double c2 = 0.0;
      prev = x0;
      for (int t = 1; t <= steps; ++t) {
        const int cur = path[t - 1];
        c2 += std::log(marg[t - 1][prev] * fwd[t][prev][cur] / marg[t][cur]);
        for (int y0 = 0; y0 < n; ++y0) {
          const double wp = t == 1 ? (y0 == prev ? 1.0 : 0.0) : x0_given(t - 1, prev, y0);
          if (wp > 0.0) c2 -= wp * std::log(x0_given(t, cur, y0));
        }
        prev = cur;
      }
      r.c2 += q * c2;
    });
  }
  r.c = entropy_term - sum_post;
  r.simplified_bound = sum_model + r.c;
  return r;
}

std::vector<double> mask_count_distribution(GammaKind kind, int m) {
  if (m < 1) throw ArgumentError("mask_count_distribution: m must be >= 1");
  // gamma is decreasing with gamma(0) = 1, gamma(1) = 0; inverse in closed form.
  auto inverse = [&](double y) {
    if (kind == GammaKind::linear) return 1.0 - y;
    return 2.0 / std::numbers::pi * std::acos(y);
  };
  std::vector<double> p(m + 1, 0.0);
  for (int j = 1; j <= m; ++j) {
    // ceil(gamma(r) m) = j  <=>  r in [inverse(j/m), inverse((j-1)/m)).
    p[j] = inverse(static_cast<double>(j - 1) / m) - inverse(static_cast<double>(j) / m);
  }
  return p;
}

ToyImage parse_pixmap(std::string_view text, int scale, int palette_bits) {
  std::istringstream in{std::string(text)};
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (!in || magic != "P3" || maxval != 255 || w % scale != 0 || h % scale != 0) {
    throw ArgumentError("parse_pixmap: bad header");
  }
  std::vector<Rgb> pixels(static_cast<std::size_t>(w) * h);
  for (auto& px : pixels) {
    in >> px[0] >> px[1] >> px[2];
    if (!in) throw ArgumentError("parse_pixmap: truncated pixel data");
  }
  const int rows = h / scale;
  const int cols = w / scale;
  std::vector<int> cells(static_cast<std::size_t>(rows) * cols, -1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Rgb& px = pixels[static_cast<std::size_t>(y) * w + x];
      int value = -1;
      for (int v = 0; v < (1 << palette_bits); ++v) {
        if (palette_color(v) == px) value = v;
      }
      if (value < 0) throw ArgumentError("parse_pixmap: color outside the palette");
      int& cell = cells[static_cast<std::size_t>(y / scale) * cols + x / scale];
      if (cell >= 0 && cell != value) throw ArgumentError("parse_pixmap: block is not uniform");
      cell = value;
    }
  }
  return make_image(rows, cols, cells, palette_bits);
}

// ---------------------------------------------------------------------------

NoiseSchedule random_schedule(int steps, Rng& rng, bool allow_uniform) {
  NoiseSchedule s;
  for (int t = 0; t < steps; ++t) {
    // Occasionally pin a component to zero so both degenerate regimes occur.
    const double a = rng.bernoulli(0.15) ? 0.0 : 0.6 * rng.uniform();
    const double b = !allow_uniform || rng.bernoulli(0.15) ? 0.0 : 0.4 * rng.uniform();
    s.alpha.push_back(a);
    s.beta.push_back(b);
  }
  s.validate();
  return s;
}

AlgebraReport check_algebra(const std::vector<int>& ks, const std::vector<int>& ts,
                            int per_combo, std::uint64_t seed) {
  AlgebraReport rep;
  Rng rng(seed);
  for (int k : ks) {
    for (int steps : ts) {
      for (int rep_i = 0; rep_i < per_combo; ++rep_i) {
        const NoiseSchedule s = random_schedule(steps, rng);
        ++rep.schedules;
        for (int t = 1; t <= steps; ++t) {
          const auto q = step_matrix<double>(s, t, k);
          const auto qbar = cumulative<double>(s, t, k);
          for (const auto* m : {&q.entries, &qbar.entries}) {
            rep.max_row_error = std::max(rep.max_row_error, (m->rowwise().sum().array() - 1.0).abs().maxCoeff());
            Eigen::VectorXd em = Eigen::VectorXd::Zero(k + 1);
            em(k) = 1.0;
            if (m->row(k).transpose() != em) ++rep.absorption_failures;
          }
          for (int x0 = 0; x0 <= k; ++x0) {
            const auto joint = path_joint(s, t, k, x0);
            for (int xt = 0; xt <= k; ++xt) {
              double want = 0.0;
              for (int a = 0; a <= k; ++a) want += joint[a][xt];
              rep.max_marginal_error = std::max(rep.max_marginal_error, std::abs(qbar.entries(x0, xt) - want));

              const auto bayes = bayes_posterior(s, t, k, x0, xt);
              if (bayes.empty()) {
                ++rep.unreachable_pairs;
                try {
                  (void)posterior<double>(xt, x0, s, t, k);
                  ++rep.unreachable_mismatches;
                } catch (const DomainError&) {
                }
                continue;
              }
              const auto got = posterior<double>(xt, x0, s, t, k);
              double tv = 0.0;
              for (int a = 0; a <= k; ++a) tv += std::abs(got[a] - bayes[a]);
              rep.max_posterior_tv = std::max(rep.max_posterior_tv, 0.5 * tv);
            }
          }
        }
      }
    }
  }
  return rep;
}

LiteralReport check_literal(int cases, std::uint64_t seed) {
  LiteralReport rep;
  Rng rng(seed);
  for (int c = 0; c < cases; ++c) {
    const int k = 1 + static_cast<int>(rng.below(8));
    const double a = 0.6 * rng.uniform();
    const double b = 0.4 * rng.uniform();
    ++rep.cases;

    // Literal closed form evaluated entry by entry.
    auto literal_entry = [&](double alpha, double beta, int i, int j) {
      if (i == k) return j == k ? 1.0 : 0.0;
      if (j == k) return alpha;
      return (i == j ? 1.0 - alpha - beta : 0.0) + beta / (k + 1);
    };
    auto max_diff = [&](const Matrix<double>& m, double alpha, double beta) {
      double d = 0.0;
      for (int i = 0; i <= k; ++i) {
        for (int j = 0; j <= k; ++j) d = std::max(d, std::abs(m(i, j) - literal_entry(alpha, beta, i, j)));
      }
      return d;
    };
    const auto lit_a0 = compose_step(build_absorbing<double>(0.0, k), build_uniform<double>(b, k, true));
    const auto lit_b0 = compose_step(build_absorbing<double>(a, k), build_uniform<double>(0.0, k, true));
    const auto lit_ab = compose_step(build_absorbing<double>(a, k), build_uniform<double>(b, k, true));
    const auto lib_literal = build_literal<double>(a, b, k);
    rep.max_alpha_zero_error = std::max(rep.max_alpha_zero_error, max_diff(lit_a0.entries, 0.0, b));
    rep.max_beta_zero_error = std::max(rep.max_beta_zero_error, max_diff(lit_b0.entries, a, 0.0));
    rep.max_bound_excess = std::max(rep.max_bound_excess, max_diff(lit_ab.entries, a, b) - a * b);
    // Library literal constructor against the entry formula, and its row deficit.
    rep.max_deficit_error = std::max(rep.max_deficit_error, max_diff(lib_literal.entries, a, b));
    for (int i = 0; i < k; ++i) {
      const double deficit = 1.0 - lib_literal.entries.row(i).sum();
      rep.max_deficit_error = std::max(rep.max_deficit_error, std::abs(deficit - b / (k + 1)));
    }
  }
  return rep;
}

Eigen::VectorXd random_data(int k, int seq_len, Rng& rng) {
  const int n = state_count(k, seq_len);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    if (clean(s, k, seq_len)) d(s) = 0.05 + rng.uniform();
  }
  return d / d.sum();
}

ReverseModel random_reverse_model(int k, int seq_len, Rng& rng) {
  const int n = state_count(k, seq_len);
  // Pure function of (t, x_t): each query reseeds from a fixed base.
  return [k, seq_len, n, base = rng.next()](int t, int b) -> Eigen::VectorXd {
    Rng local(base ^ (static_cast<std::uint64_t>(t) * 0x9e3779b97f4a7c15ULL + b));
    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    for (int x0 = 0; x0 < n; ++x0) {
      if (clean(x0, k, seq_len)) p(x0) = 0.05 + local.uniform();
    }
    return p / p.sum();
  };
}

std::vector<ElboInstance> check_elbo_chain(int instances, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ElboInstance> out;
  for (int i = 0; i < instances; ++i) {
    ElboInstance inst;
    inst.k = 2;
    inst.steps = 1 + static_cast<int>(rng.below(3));
    inst.seq_len = 1 + static_cast<int>(rng.below(2));
    // Every step carries some uniform noise, so every clean x0 reaches every
    // state with positive probability and the random model is admissible.
    NoiseSchedule s;
    for (int t = 0; t < inst.steps; ++t) {
      s.alpha.push_back(0.1 + 0.5 * rng.uniform());
      s.beta.push_back(0.05 + 0.3 * rng.uniform());
    }
    const Eigen::VectorXd data = random_data(inst.k, inst.seq_len, rng);
    const ReverseModel model = random_reverse_model(inst.k, inst.seq_len, rng);
    inst.report = verify_elbo(s, model, data, inst.seq_len, inst.k);
    const ElboReport ref = path_elbo(s, model, data, inst.seq_len, inst.k);
    inst.oracle_diff = std::max({std::abs(inst.report.exact_loglik - ref.exact_loglik),
                                 std::abs(inst.report.elbo - ref.elbo),
                                 std::abs(inst.report.simplified_bound - ref.simplified_bound),
                                 std::abs(inst.report.c1 - ref.c1), std::abs(inst.report.c2 - ref.c2)});
    inst.c_split_error = std::abs(inst.report.c - (inst.report.c1 + inst.report.c2));
    out.push_back(inst);
  }
  return out;
}

}  // namespace omnidiff::oracle
