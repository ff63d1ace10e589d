#include <doctest.h>

#include <cmath>
#include <numbers>

#include "omnidiff/diffusion.hpp"
#include "omnidiff/oracle.hpp"

using namespace omnidiff;

namespace {

Matrix<double> absorbing_closed_form(double mask_prob, int k) {
  Matrix<double> m = Matrix<double>::Zero(k + 1, k + 1);
  for (int i = 0; i < k; ++i) {
    m(i, i) = 1.0 - mask_prob;
    m(i, k) = mask_prob;
  }
  m(k, k) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("build_absorbing") {
  SUBCASE("alpha 0.5, k 2") {
    const auto q = build_absorbing<double>(0.5, 2);
    Matrix<double> want(3, 3);
    want << 0.5, 0, 0.5, 0, 0.5, 0.5, 0, 0, 1;
    CHECK(q.entries == want);
  }
  SUBCASE("alpha 0 is the identity") {
    CHECK(build_absorbing<double>(0.0, 4).entries == Matrix<double>::Identity(5, 5));
  }
  SUBCASE("alpha 1 sends every row to the mask") {
    const auto q = build_absorbing<double>(1.0, 3);
    for (int i = 0; i <= 3; ++i) CHECK(q.entries(i, 3) == 1.0);
  }
  SUBCASE("invalid inputs") {
    CHECK_THROWS_AS(build_absorbing<double>(1.5, 2), ArgumentError);
    CHECK_THROWS_AS(build_absorbing<double>(-0.1, 2), ArgumentError);
    CHECK_THROWS_AS(build_absorbing<double>(0.2, 0), ArgumentError);
  }
}

TEST_CASE("build_uniform") {
  SUBCASE("rows are stochastic and the mask row is fixed") {
    const auto q = build_uniform<double>(0.3, 4);
    CHECK((q.entries.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-15);
    CHECK(q.entries(4, 4) == 1.0);
    CHECK(q.entries.col(4).head(4).isZero());
  }
  SUBCASE("literal rows fall short by beta/(K+1)") {
    const auto q = build_uniform<double>(0.3, 2, true);
    CHECK(q.entries.row(0).sum() == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(q.entries.row(1).sum() == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(q.mode == TransitionMode::literal);
  }
  SUBCASE("beta 0 is the identity") {
    CHECK(build_uniform<double>(0.0, 3).entries == Matrix<double>::Identity(4, 4));
  }
}

TEST_CASE("compose_step") {
  SUBCASE("both zero gives the identity") {
    const auto q = compose_step(build_absorbing<double>(0.0, 3), build_uniform<double>(0.0, 3));
    CHECK(q.entries == Matrix<double>::Identity(4, 4));
  }
  SUBCASE("beta 0 leaves the absorbing matrix") {
    const auto qa = build_absorbing<double>(0.37, 3);
    CHECK(compose_step(qa, build_uniform<double>(0.0, 3)).entries == qa.entries);
  }
  SUBCASE("agrees with sequential sampling") {
    Rng rng(7);
    const auto freq = oracle::monte_carlo_compose(0.2, 0.3, 2, 1'000'000, rng);
    const auto q = compose_step(build_absorbing<double>(0.2, 2), build_uniform<double>(0.3, 2));
    CHECK((freq - q.entries).cwiseAbs().maxCoeff() < 3e-3);
  }
  SUBCASE("mismatched sizes") {
    CHECK_THROWS_AS(compose_step(build_absorbing<double>(0.1, 2), build_uniform<double>(0.1, 3)),
                    ArgumentError);
  }
}

TEST_CASE("closed-form step matrix") {
  SUBCASE("agrees exactly when one component vanishes") {
    for (double b : {0.0, 0.1, 0.5, 0.9}) {
      const auto lit = build_literal<double>(0.0, b, 3);
      const auto prod = compose_step(build_absorbing<double>(0.0, 3), build_uniform<double>(b, 3, true));
      CHECK((lit.entries - prod.entries).cwiseAbs().maxCoeff() <= 1e-12);
    }
    for (double a : {0.0, 0.1, 0.5, 1.0}) {
      const auto lit = build_literal<double>(a, 0.0, 3);
      CHECK((lit.entries - build_absorbing<double>(a, 3).entries).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("first-order agreement") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const int k = 1 + static_cast<int>(rng.below(6));
      const double a = 0.5 * rng.uniform(), b = 0.5 * rng.uniform();
      const auto lit = build_literal<double>(a, b, k);
      const auto prod = compose_step(build_absorbing<double>(a, k), build_uniform<double>(b, k, true));
      CHECK((lit.entries - prod.entries).cwiseAbs().maxCoeff() <= a * b + 1e-15);
    }
  }
  SUBCASE("alpha + beta above 1") { CHECK_THROWS_AS(build_literal<double>(0.7, 0.4, 2), ArgumentError); }
}

TEST_CASE("cumulative") {
  SUBCASE("zero schedule") {
    NoiseSchedule s{{0, 0, 0}, {0, 0, 0}};
    CHECK(cumulative<double>(s, 3, 4).entries == Matrix<double>::Identity(5, 5));
  }
  SUBCASE("first step equals the step matrix") {
    NoiseSchedule s{{0.2, 0.3}, {0.1, 0.05}};
    CHECK(cumulative<double>(s, 1, 3).entries == step_matrix<double>(s, 1, 3).entries);
  }
  SUBCASE("pure absorbing chain collapses to one absorbing matrix") {
    const auto s = NoiseSchedule::absorbing({0.1, 0.25, 0.4});
    const double keep = 0.9 * 0.75 * 0.6;
    CHECK(s.cumulative_mask_prob(3) == doctest::Approx(1.0 - keep).epsilon(1e-15));
    const auto qbar = cumulative<double>(s, 3, 3);
    CHECK((qbar.entries - absorbing_closed_form(1.0 - keep, 3)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("matches path enumeration, k 2 T 4") {
    Rng rng(11);
    const auto s = oracle::random_schedule(4, rng);
    const auto qbar = cumulative<double>(s, 4, 2);
    for (int x0 = 0; x0 <= 2; ++x0) {
      for (int xt = 0; xt <= 2; ++xt) {
        CHECK(std::abs(qbar.entries(x0, xt) - oracle::path_marginal(s, 4, 2, x0, xt)) <= 1e-12);
      }
    }
  }
  SUBCASE("step out of range") {
    NoiseSchedule s{{0.1, 0.2}, {0, 0}};
    CHECK_THROWS_AS(cumulative<double>(s, 3, 2), ArgumentError);
    CHECK_THROWS_AS(cumulative<double>(s, -1, 2), ArgumentError);
  }
}

TEST_CASE("marginal") {
  NoiseSchedule s{{0.3, 0.2}, {0.1, 0.2}};
  const auto qbar = cumulative<double>(s, 2, 2);
  CHECK(marginal(2, qbar).probs == Eigen::Vector3d(0, 0, 1));
  const auto id = cumulative<double>(s, 0, 2);
  CHECK(marginal(0, id).probs == Eigen::Vector3d(1, 0, 0));
  for (int xt = 0; xt <= 2; ++xt) {
    CHECK(std::abs(marginal(1, qbar)[xt] - oracle::path_marginal(s, 2, 2, 1, xt)) <= 1e-12);
  }
  CHECK_THROWS_AS(marginal(3, qbar), ArgumentError);
}

TEST_CASE("posterior") {
  SUBCASE("deterministic chain") {
    NoiseSchedule s{{0, 0, 0}, {0, 0, 0}};
    const auto p = posterior<double>(1, 1, s, 3, 3);
    CHECK(p.probs == Eigen::Vector4d(0, 1, 0, 0));
  }
  SUBCASE("masked at step 2 of an absorbing chain") {
    const auto s = NoiseSchedule::absorbing({0.3, 0.5});
    const auto p = posterior<double>(2, 0, s, 2, 2);
    // Masked at step 1 with 0.3, or kept then masked: 0.7 * 0.5.
    const double masked_first = 0.3 / (0.3 + 0.7 * 0.5);
    CHECK(p[2] == doctest::Approx(masked_first).epsilon(1e-14));
    CHECK(p[0] == doctest::Approx(1.0 - masked_first).epsilon(1e-14));
    CHECK(p[1] == 0.0);
  }
  SUBCASE("random reachable pairs, k 3 T 4") {
    Rng rng(5);
    const auto s = oracle::random_schedule(4, rng);
    int checked = 0;
    while (checked < 50) {
      const int t = 1 + static_cast<int>(rng.below(4));
      const int x0 = static_cast<int>(rng.below(4));
      const int xt = static_cast<int>(rng.below(4));
      const auto want = oracle::bayes_posterior(s, t, 3, x0, xt);
      if (want.empty()) continue;
      const auto got = posterior<double>(xt, x0, s, t, 3);
      double tv = 0.0;
      for (int a = 0; a <= 3; ++a) tv += std::abs(got[a] - want[a]);
      CHECK(0.5 * tv < 1e-10);
      ++checked;
    }
  }
  SUBCASE("unreachable pair is a domain error") {
    const auto s = NoiseSchedule::absorbing({0.3, 0.5});
    CHECK_THROWS_AS(posterior<double>(1, 0, s, 2, 2), DomainError);
    CHECK_THROWS_AS(posterior<double>(0, 2, s, 1, 2), DomainError);
  }
  SUBCASE("out of range") {
    const auto s = NoiseSchedule::absorbing({0.3});
    CHECK_THROWS_AS(posterior<double>(0, 0, s, 2, 2), ArgumentError);
    CHECK_THROWS_AS(posterior<double>(5, 0, s, 1, 2), ArgumentError);
  }
}

TEST_CASE("algebra sweep against the oracles") {
  const auto r = oracle::check_algebra({2, 3}, {2, 3}, 5, 99);
  CHECK(r.max_marginal_error <= 1e-12);
  CHECK(r.max_posterior_tv <= 1e-10);
  CHECK(r.max_row_error <= 1e-12);
  CHECK(r.absorption_failures == 0);
  CHECK(r.unreachable_mismatches == 0);
}

TEST_CASE("corrupt") {
  Rng rng(1);
  const std::vector<int> tokens{0, 1, 2, 3, 0, 1};
  SUBCASE("no masking at t 0") {
    const auto s = NoiseSchedule::absorbing({0.5});
    CHECK(corrupt(tokens, s, 0, 4, rng) == tokens);
  }
  SUBCASE("everything masked once the probability reaches 1") {
    const auto s = NoiseSchedule::absorbing({0.2, 1.0});
    CHECK(corrupt(tokens, s, 2, 4, rng) == std::vector<int>(6, 4));
  }
  SUBCASE("empirical mask fraction") {
    const auto s = NoiseSchedule::absorbing({0.37});
    std::vector<int> many(100'000, 1);
    const auto out = corrupt(many, s, 1, 4, rng);
    const double frac = std::count(out.begin(), out.end(), 4) / 1e5;
    CHECK(std::abs(frac - 0.37) < 0.005);
    for (int v : out) CHECK((v == 1 || v == 4));
  }
  SUBCASE("seeded determinism") {
    const auto s = NoiseSchedule::absorbing({0.5});
    Rng a(42), b(42);
    CHECK(corrupt(tokens, s, 1, 4, a) == corrupt(tokens, s, 1, 4, b));
  }
  SUBCASE("token outside the codebook") {
    const auto s = NoiseSchedule::absorbing({0.5});
    CHECK_THROWS_AS(corrupt({0, 4}, s, 1, 4, rng), ArgumentError);
  }
}

TEST_CASE("gamma") {
  CHECK(gamma(GammaKind::cosine, 0.0) == 1.0);
  CHECK(gamma(GammaKind::cosine, 1.0) == 0.0);
  CHECK(gamma(GammaKind::linear, 0.0) == 1.0);
  CHECK(gamma(GammaKind::linear, 1.0) == 0.0);
  CHECK(gamma(GammaKind::linear, 0.25) == 0.75);
  CHECK(gamma("cosine", 0.5) == doctest::Approx(std::cos(std::numbers::pi / 4)));
  CHECK_THROWS_AS(gamma("square", 0.5), ArgumentError);
  CHECK_THROWS_AS(gamma(GammaKind::cosine, 1.5), ArgumentError);
  for (int i = 0; i < 100; ++i) {
    CHECK(gamma(GammaKind::cosine, i / 100.0) > gamma(GammaKind::cosine, (i + 1) / 100.0));
  }
}

TEST_CASE("mask_count") {
  CHECK(mask_count(GammaKind::cosine, 0.5, 4) == 3);
  CHECK(mask_count(GammaKind::cosine, 1.0, 16) == 0);
  CHECK(mask_count(GammaKind::cosine, 0.0, 16) == 16);
  CHECK(mask_count(GammaKind::linear, 0.25, 16) == 12);
}

TEST_CASE("from_gamma schedule mirrors the mask function") {
  for (auto kind : {GammaKind::cosine, GammaKind::linear}) {
    const auto s = NoiseSchedule::from_gamma(kind, 8);
    for (int t = 0; t <= 8; ++t) {
      CHECK(s.cumulative_mask_prob(t) == doctest::Approx(gamma(kind, 1.0 - t / 8.0)).epsilon(1e-12));
    }
  }
}
