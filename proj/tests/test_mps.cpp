#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "wgfb/mps.hpp"
#include "wgfb/pulse.hpp"

using namespace wgfb;
using oracle::Mat;

namespace {

DenseTensor op_tensor(const Mat& m) { return DenseTensor::from_matrix(m); }

Mat excitation() {
  Mat e = Mat::Zero(2, 2);
  e(1, 1) = 1.0;
  return e;
}

Mat random_unitary(Eigen::Index n, std::mt19937_64& rng) {
  const Mat a = oracle::random_matrix(n, n, rng);
  return unitary_from_generator(op_tensor(0.5 * (a - a.adjoint()))).matrix(1);
}

/// U(1)-conserving random unitary on a (d1 x d2) pair: block diagonal in
/// the total local charge.
Mat random_conserving_unitary(std::size_t d1, std::size_t d2, std::mt19937_64& rng) {
  const auto n = static_cast<Eigen::Index>(d1 * d2);
  Mat h = Mat::Zero(n, n);
  std::normal_distribution<double> nd;
  for (std::size_t a = 0; a < d1 * d2; ++a)
    for (std::size_t b = 0; b < d1 * d2; ++b)
      if (a / d2 + a % d2 == b / d2 + b % d2) h(long(a), long(b)) = cplx(nd(rng), nd(rng));
  return unitary_from_generator(op_tensor(0.5 * (h - h.adjoint()))).matrix(1);
}

std::vector<std::size_t> dims_of(const MpsChain& c) {
  std::vector<std::size_t> d;
  for (std::size_t i = 0; i < c.size(); ++i) d.push_back(c.site(i).kind.local_dim);
  return d;
}

double state_diff(const MpsChain& c, const oracle::StateVector& ref) {
  const auto v = c.to_state_vector();
  double m = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) m = std::max(m, std::abs(v[i] - ref.amplitudes()[i]));
  return m;
}

MpsChain pulse_chain(const std::vector<cplx>& f, double dt, unsigned n, std::size_t p) {
  DiscretizedPulse dp;
  dp.coeffs = f;
  dp.dt = dt;
  auto frag = n_photon_mps(dp, n, p);
  std::vector<Site> sites;
  for (std::size_t i = 0; i < frag.sites.size(); ++i)
    sites.push_back({SiteKind::time_bin(long(i), p), std::move(frag.sites[i])});
  return MpsChain(std::move(sites), frag.bonds, frag.sites.size() - 1);
}

}  // namespace

TEST(InitChain, ExcitedGroundSuperposition) {
  auto e = MpsChain::init_chain(3, 2, 0.0, 1.0);
  EXPECT_NEAR(e.local_expectation(0, op_tensor(excitation())).real(), 1.0, 1e-15);
  auto g = MpsChain::init_chain(3, 2, 1.0, 0.0);
  EXPECT_NEAR(g.local_expectation(0, op_tensor(excitation())).real(), 0.0, 1e-15);
  for (std::size_t i = 1; i < 4; ++i) EXPECT_NEAR(g.local_expectation(i, op_tensor(oracle::number_op(2))).real(), 0.0, 1e-15);
  auto s = MpsChain::init_chain(3, 2, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));
  const auto v = s.local_expectation(0, op_tensor(excitation()));
  EXPECT_NEAR(v.real(), 0.5, 1e-15);
  EXPECT_LT(std::abs(v.imag()), 1e-12);
  EXPECT_FALSE(s.tracks_charges());
  EXPECT_TRUE(e.tracks_charges());
}

TEST(InitChain, RejectsUnnormalized) {
  EXPECT_THROW(MpsChain::init_chain(2, 2, 1.0, 1.0), ContractViolation);
  EXPECT_THROW(MpsChain::init_chain(2, 1, 1.0, 0.0), ContractViolation);
}

TEST(BondProfile, ProductAndPulseStates) {
  const auto c = MpsChain::init_chain(4, 3, 0.0, 1.0);
  for (auto b : c.bond_profile()) EXPECT_EQ(b, 1u);
  const double dt = 0.5;
  const std::vector<cplx> f(2, 1.0 / std::sqrt(2 * dt));
  EXPECT_EQ(pulse_chain(f, dt, 1, 2).bond_profile(), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(pulse_chain(f, dt, 2, 3).bond_profile(), (std::vector<std::size_t>{1, 3, 1}));
}

TEST(LocalExpectation, SinglePhotonPulseHalfPerBin) {
  const double dt = 0.25;
  auto c = pulse_chain(std::vector<cplx>(2, 1.0 / std::sqrt(2 * dt)), dt, 1, 2);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(c.local_expectation(i, op_tensor(oracle::number_op(2))).real(), 0.5, 1e-14);
  EXPECT_THROW(c.local_expectation(0, op_tensor(Mat::Identity(3, 3))), DimensionError);
}

TEST(ApplyTwoSite, IdentityGateChangesNothing) {
  auto c = MpsChain::init_chain(3, 2, 0.6, 0.8);
  const auto before = c.to_state_vector();
  const double w = c.apply_two_site(0, DenseTensor::identity(4), TruncationPolicy::exact());
  EXPECT_EQ(w, 0.0);
  const auto after = c.to_state_vector();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(std::abs(after[i] - before[i]), 0.0, 1e-14);
}

TEST(ApplyTwoSite, SwapGateEqualsSwapSites) {
  std::mt19937_64 rng(11);
  auto a = MpsChain::init_chain(3, 2, 0.0, 1.0);
  a.apply_two_site(0, op_tensor(random_conserving_unitary(2, 2, rng)), TruncationPolicy::exact());
  auto b = a;
  Mat sw = Mat::Zero(4, 4);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) sw(y * 2 + x, x * 2 + y) = 1.0;
  a.apply_two_site(0, op_tensor(sw), TruncationPolicy::exact());
  b.swap_sites(0, TruncationPolicy::exact());
  const auto va = a.to_state_vector(), vb = b.to_state_vector();
  for (std::size_t i = 0; i < va.size(); ++i) EXPECT_NEAR(std::abs(va[i] - vb[i]), 0.0, 1e-13);
}

TEST(ApplyTwoSite, RandomUnitaryMatchesStateVector) {
  std::mt19937_64 rng(12);
  const std::size_t p = 3;
  auto c = MpsChain::init_chain(4, p, 0.6, 0.8, 1);
  auto ref = oracle::StateVector(dims_of(c), c.to_state_vector());
  for (std::size_t pos : {0u, 1u, 2u, 3u, 1u}) {
    const auto d = static_cast<Eigen::Index>(c.site(pos).kind.local_dim * c.site(pos + 1).kind.local_dim);
    const Mat u = random_unitary(d, rng);
    c.apply_two_site(pos, op_tensor(u), TruncationPolicy::exact());
    ref.apply(pos, 2, u);
    EXPECT_LT(c.gauge_error(), 1e-10);
  }
  EXPECT_LT(state_diff(c, ref), 1e-10);
}

TEST(ApplyTwoSite, RejectsBadGates) {
  auto c = MpsChain::init_chain(2, 2, 1.0, 0.0);
  Mat m = Mat::Identity(4, 4);
  m(0, 0) = 2.0;
  EXPECT_THROW(c.apply_two_site(0, op_tensor(m), TruncationPolicy::exact()), ContractViolation);
  EXPECT_THROW(c.apply_two_site(0, DenseTensor::identity(3), TruncationPolicy::exact()), DimensionError);
  EXPECT_THROW(c.apply_two_site(2, DenseTensor::identity(4), TruncationPolicy::exact()), ContractViolation);
}

TEST(SwapSites, VacuumBinsOnlyReorder) {
  auto c = MpsChain::init_chain(3, 2, 1.0, 0.0);
  const auto before = c.to_state_vector();
  c.swap_sites(1, TruncationPolicy::exact());
  EXPECT_EQ(c.logical_order(), (std::vector<long>{-1, 1, 0, 2}));
  const auto after = c.to_state_vector();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(std::abs(after[i] - before[i]), 0.0, 1e-15);
}

TEST(SwapSites, Involution) {
  std::mt19937_64 rng(13);
  auto c = MpsChain::init_chain(3, 3, 0.0, 1.0);
  c.apply_two_site(0, op_tensor(random_conserving_unitary(2, 3, rng)), TruncationPolicy::exact());
  c.apply_two_site(1, op_tensor(random_conserving_unitary(3, 3, rng)), TruncationPolicy::exact());
  const auto before = c.to_state_vector();
  c.swap_sites(1, TruncationPolicy::exact());
  c.swap_sites(1, TruncationPolicy::exact());
  const auto after = c.to_state_vector();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(std::abs(after[i] - before[i]), 0.0, 1e-12);
}

TEST(SwapSites, EntangledPairExchangesExpectations) {
  // (|1,0> + |0,1>)/sqrt(2) with unequal weights to see the exchange
  const double dt = 1.0;
  auto c = pulse_chain({std::sqrt(0.8), std::sqrt(0.2)}, dt, 1, 2);
  auto ref = oracle::StateVector({2, 2}, c.to_state_vector());
  const auto n = op_tensor(oracle::number_op(2));
  EXPECT_NEAR(c.local_expectation(0, n).real(), 0.8, 1e-14);
  c.swap_sites(0, TruncationPolicy::exact());
  ref.swap(0);
  EXPECT_NEAR(c.local_expectation(0, n).real(), 0.2, 1e-14);
  EXPECT_NEAR(c.local_expectation(1, n).real(), 0.8, 1e-14);
  EXPECT_LT(state_diff(c, ref), 1e-14);
  EXPECT_THROW(c.swap_sites(1, TruncationPolicy::exact()), ContractViolation);
}

TEST(Oracle, RandomGateAndSwapSequence) {
  // 1 system + 6 bins, p = 3, conserving and non-conserving gates mixed
  std::mt19937_64 rng(14);
  const std::size_t p = 3, nb = 6;
  auto c = MpsChain::init_chain(nb, p, 0.0, 1.0, 2);
  auto ref = oracle::StateVector(dims_of(c), c.to_state_vector());
  std::uniform_int_distribution<std::size_t> pos_d(0, nb - 1);
  const auto e = op_tensor(excitation());
  const auto num = op_tensor(oracle::number_op(p));
  for (int step = 0; step < 40; ++step) {
    const std::size_t pos = pos_d(rng);
    if (step % 3 == 2) {
      c.swap_sites(pos, TruncationPolicy::exact(), step % 2 ? CenterSide::Left : CenterSide::Right);
      ref.swap(pos);
    } else {
      const std::size_t d1 = c.site(pos).kind.local_dim, d2 = c.site(pos + 1).kind.local_dim;
      const Mat u = step == 30 ? random_unitary(long(d1 * d2), rng) : random_conserving_unitary(d1, d2, rng);
      c.apply_two_site(pos, op_tensor(u), TruncationPolicy::exact());
      ref.apply(pos, 2, u);
    }
    ASSERT_LT(c.gauge_error(), 1e-10);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto& op = c.site(i).kind.is_system() ? e : num;
      const cplx got = c.local_expectation(i, op);
      const cplx want = ref.expectation(i, op.matrix(1));
      ASSERT_LT(std::abs(got - want), 1e-10) << "step " << step << " site " << i;
    }
  }
  EXPECT_FALSE(c.tracks_charges());
  EXPECT_LT(state_diff(c, ref), 1e-10);
  EXPECT_NEAR(c.norm_squared(), 1.0, 1e-10);
}

TEST(ApplyThreeSite, MatchesStateVector) {
  std::mt19937_64 rng(15);
  const std::size_t p = 2;
  auto c = MpsChain::init_chain(4, p, 0.0, 1.0, 2);
  auto ref = oracle::StateVector(dims_of(c), c.to_state_vector());
  const std::size_t d = 2 * p * p;
  const Mat h = oracle::random_matrix(long(d), long(d), rng);
  const Mat u = unitary_from_generator(op_tensor(0.5 * (h - h.adjoint()))).matrix(1);
  c.swap_sites(2, TruncationPolicy::exact());  // [b0, b1, b2, S, b3]
  ref.swap(2);
  const auto r = c.apply_three_site(1, op_tensor(u), TruncationPolicy::exact(), nullptr);
  ref.apply(1, 3, u);
  EXPECT_EQ(r.discarded_weight, 0.0);
  EXPECT_LT(state_diff(c, ref), 1e-12);
  EXPECT_LT(c.gauge_error(), 1e-10);
}

TEST(Truncation, NormDriftBoundedByDiscardedWeight) {
  std::mt19937_64 rng(16);
  auto c = MpsChain::init_chain(7, 3, 0.0, 1.0, 0);
  const TruncationPolicy pol{3, 1e-3};
  for (int sweep = 0; sweep < 4; ++sweep)
    for (std::size_t pos = 0; pos + 1 < c.size(); ++pos) {
      const std::size_t d1 = c.site(pos).kind.local_dim, d2 = c.site(pos + 1).kind.local_dim;
      c.apply_two_site(pos, op_tensor(random_conserving_unitary(d1, d2, rng)), pol);
      EXPECT_LE(std::abs(c.norm_squared() - 1.0), c.discarded_total() + 1e-12);
    }
  EXPECT_GT(c.discarded_total(), 0.0);
  EXPECT_LE(c.max_bond(), 3u);
}

TEST(Retire, KeepsLocalExpectations) {
  std::mt19937_64 rng(17);
  auto c = MpsChain::init_chain(4, 2, 0.0, 1.0, 1);
  for (std::size_t pos : {0u, 1u, 2u, 0u})
    c.apply_two_site(pos, op_tensor(random_conserving_unitary(2, 2, rng)), TruncationPolicy::exact());
  std::vector<cplx> before;
  for (std::size_t i = 1; i < c.size(); ++i) before.push_back(c.local_expectation(i, op_tensor(i == 1 ? excitation() : oracle::number_op(2))));
  c.retire_front();
  EXPECT_EQ(c.retired(), 1u);
  for (std::size_t i = 0; i < c.size(); ++i)
    EXPECT_NEAR(std::abs(c.local_expectation(i, op_tensor(i == 0 ? excitation() : oracle::number_op(2))) - before[i]), 0.0,
                1e-12);
  EXPECT_THROW(c.retire_front(), ContractViolation);
}
