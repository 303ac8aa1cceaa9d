#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "wgfb/mps.hpp"
#include "wgfb/pulse.hpp"

using namespace wgfb;

namespace {

std::vector<cplx> dense_state(const DiscretizedPulse& dp, unsigned n, std::size_t p) {
  auto frag = n_photon_mps(dp, n, p);
  std::vector<Site> sites;
  for (std::size_t i = 0; i < frag.sites.size(); ++i)
    sites.push_back({SiteKind::time_bin(long(i), p), std::move(frag.sites[i])});
  return MpsChain(std::move(sites), frag.bonds, 0).to_state_vector();
}

DiscretizedPulse from_coeffs(std::vector<cplx> c, double dt) {
  DiscretizedPulse dp;
  dp.coeffs = std::move(c);
  dp.dt = dt;
  return dp;
}

/// Mean and variance of the total photon number on a dense state.
std::pair<double, double> photon_moments(const std::vector<cplx>& psi, std::size_t nb, std::size_t p) {
  double m1 = 0.0, m2 = 0.0;
  for (std::size_t idx = 0; idx < psi.size(); ++idx) {
    std::size_t rest = idx, tot = 0;
    for (std::size_t k = 0; k < nb; ++k) {
      tot += rest % p;
      rest /= p;
    }
    const double w = std::norm(psi[idx]);
    m1 += w * double(tot);
    m2 += w * double(tot * tot);
  }
  return {m1, m2 - m1 * m1};
}

}  // namespace

TEST(Discretize, RectangularTwoBins) {
  const double dt = 0.05;
  const auto dp = discretize_pulse(RectangularPulse{0.1, 2 * dt}, dt, 10);
  ASSERT_EQ(dp.coeffs.size(), 2u);
  EXPECT_EQ(dp.first_bin, 2);
  for (auto f : dp.coeffs) EXPECT_NEAR(std::abs(f - 1.0 / std::sqrt(2 * dt)), 0.0, 1e-12);
}

TEST(Discretize, RectangularBinCountAndOffset) {
  const double dt = 0.05;
  const auto dp = discretize_pulse(RectangularPulse{0.1, 2.4}, dt, 200);
  EXPECT_EQ(dp.coeffs.size(), 48u);
  EXPECT_EQ(dp.first_bin, 2);
  EXPECT_EQ(dp.end_bin(), 50);
  EXPECT_NEAR(std::abs(dp.value(0.1, 0.0)), 1.0 / std::sqrt(2.4), 1e-12);
  EXPECT_EQ(dp.value(2.5, 0.0), cplx(0.0));
}

TEST(Discretize, NormalizedForAnyShape) {
  for (const PulseShape s : {PulseShape{RectangularPulse{0.03, 0.77}}, PulseShape{GaussianPulse{3.0, 0.4, 4.0}},
                             PulseShape{GaussianPulse{10.0, 2.0, 5.0}}}) {
    const double dt = 0.013;
    const auto dp = discretize_pulse(s, dt, 2000);
    double norm = 0.0;
    for (auto f : dp.coeffs) norm += std::norm(f) * dt;
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
}

TEST(Discretize, GaussianRawNormMatchesQuadrature) {
  const GaussianPulse g{35.0, 7.0, 5.0};
  const auto dp = discretize_pulse(g, 0.1, 700);
  const double continuum = oracle::simpson([&](double t) { return std::pow(envelope(g, t), 2); }, 0.0, 70.0, 20000);
  EXPECT_NEAR(dp.raw_norm, continuum, 1e-6);
  // |f|^2 has variance sigma^2 / 2
  EXPECT_NEAR(continuum, std::erf(5.0), 1e-9);
}

TEST(Discretize, Rejects) {
  EXPECT_THROW(discretize_pulse(RectangularPulse{0.0, 0.0}, 0.1, 10), ContractViolation);
  EXPECT_THROW(discretize_pulse(RectangularPulse{0.0, 1.0}, 0.0, 10), ContractViolation);
  EXPECT_THROW(discretize_pulse(RectangularPulse{0.0, 2.0}, 0.1, 10), ContractViolation);
  EXPECT_THROW(discretize_pulse(GaussianPulse{5.0, -1.0}, 0.1, 100), ContractViolation);
  EXPECT_THROW(discretize_pulse(GaussianPulse{5.0, 1.0, INFINITY}, 0.1, 100), ContractViolation);
}

TEST(NPhoton, OnePhotonTwoBins) {
  const double dt = 0.05;
  const auto psi = dense_state(from_coeffs(std::vector<cplx>(2, 1.0 / std::sqrt(2 * dt)), dt), 1, 2);
  // |i1 i2>, first bin slowest
  const std::vector<double> want{0.0, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0), 0.0};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(std::abs(psi[i] - want[i]), 0.0, 1e-12);
}

TEST(NPhoton, TwoPhotonsTwoBins) {
  const double dt = 0.05;
  const auto psi = dense_state(from_coeffs(std::vector<cplx>(2, 1.0 / std::sqrt(2 * dt)), dt), 2, 3);
  std::vector<double> want(9, 0.0);
  want[2 * 3 + 0] = 0.5;
  want[0 * 3 + 2] = 0.5;
  want[1 * 3 + 1] = std::sqrt(2.0) / 2.0;
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(std::abs(psi[i] - want[i]), 0.0, 1e-12) << i;
}

TEST(NPhoton, ZeroPhotonsIsVacuum) {
  auto frag = n_photon_mps(from_coeffs({0.3, 0.4, cplx(0, 1)}, 1.0), 0, 2);
  for (const auto& b : frag.bonds) EXPECT_EQ(b, std::vector<int>{0});
  for (const auto& s : frag.sites) {
    EXPECT_EQ(s.at({0, 0, 0}), cplx(1.0));
    EXPECT_EQ(s.at({0, 1, 0}), cplx(0.0));
  }
}

TEST(NPhoton, RejectsSmallBinDimension) {
  EXPECT_THROW(n_photon_mps(from_coeffs({1.0}, 1.0), 2, 2), ContractViolation);
  EXPECT_THROW(n_photon_mps(from_coeffs({}, 1.0), 1, 2), ContractViolation);
}

TEST(NPhoton, MatchesBruteForceExpansion) {
  const double dt = 0.2;
  for (std::size_t nb = 1; nb <= 6; ++nb)
    for (unsigned n = 0; n <= 3; ++n) {
      std::vector<cplx> f;
      for (std::size_t k = 0; k < nb; ++k) f.push_back(std::polar(0.3 + 0.1 * double(k), 0.7 * double(k)));
      double s = 0.0;
      for (auto v : f) s += std::norm(v) * dt;
      std::vector<cplx> c;
      for (auto& v : f) {
        v /= std::sqrt(s);
        c.push_back(v * std::sqrt(dt));
      }
      const std::size_t p = std::max<std::size_t>(2, n + 1);
      const auto got = dense_state(from_coeffs(f, dt), n, p);
      const auto want = oracle::brute_force_pulse(c, n, p);
      ASSERT_EQ(got.size(), want.size());
      double err = 0.0, norm = 0.0;
      for (std::size_t i = 0; i < got.size(); ++i) {
        err = std::max(err, std::abs(got[i] - want[i]));
        norm += std::norm(got[i]);
      }
      EXPECT_LT(err, 1e-12) << "bins " << nb << " n " << n;
      EXPECT_NEAR(norm, 1.0, 1e-12);
    }
}

TEST(NPhoton, PhotonNumberSharpAndBondsBounded) {
  const double dt = 0.25;
  const auto dp = discretize_pulse(GaussianPulse{0.75, 0.3, 2.5}, dt, 6);
  for (unsigned n = 1; n <= 3; ++n)
    for (std::size_t p : {std::size_t(n + 1), std::size_t(n + 2)}) {
      const auto frag = n_photon_mps(dp, n, p);
      for (const auto& s : frag.sites) {
        EXPECT_LE(s.extent(0), n + 1u);
        EXPECT_LE(s.extent(2), n + 1u);
      }
      const auto [mean, var] = photon_moments(dense_state(dp, n, p), dp.coeffs.size(), p);
      EXPECT_NEAR(mean, double(n), 1e-10);
      EXPECT_NEAR(var, 0.0, 1e-10);
    }
}
