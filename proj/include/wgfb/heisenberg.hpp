#pragma once

// Recursive Heisenberg equations for the emitter matrix elements
// E[(i,m),(k,p)] = <i,m| E(t) |k,p> and S[(i,m),(k,p)] = <i,m| sigma_-(t) |k,p>
// over the basis |j,q> (emitter level j, q pulse photons). The delayed
// feedback makes this a delay differential equation, integrated with RK4.

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "wgfb/errors.hpp"
#include "wgfb/feedback.hpp"
#include "wgfb/pulse.hpp"
#include "wgfb/tensor.hpp"

namespace wgfb {

enum class Level { Ground = 0, Excited = 1 };

struct HeisenbergState {
  RowMatrix e;  ///< D x D
  RowMatrix s;  ///< D x D
  double t = 0.0;

  static Eigen::Index basis_index(Level j, unsigned q, unsigned n) {
    return static_cast<Eigen::Index>(static_cast<unsigned>(j) * (n + 1) + q);
  }

  /// E = |e><e| (x) 1, sigma_- = |g><e| (x) 1 at t = 0.
  static HeisenbergState initial(unsigned n) {
    const auto d = static_cast<Eigen::Index>(2 * (n + 1));
    HeisenbergState st{RowMatrix::Zero(d, d), RowMatrix::Zero(d, d), 0.0};
    for (unsigned q = 0; q <= n; ++q) {
      st.e(basis_index(Level::Excited, q, n), basis_index(Level::Excited, q, n)) = 1.0;
      st.s(basis_index(Level::Ground, q, n), basis_index(Level::Excited, q, n)) = 1.0;
    }
    return st;
  }

  double hermiticity_error() const { return (e - e.adjoint()).cwiseAbs().maxCoeff(); }
};

/// Ring of S snapshots on the grid t_k = k h. Holds the last `depth` points.
class HistoryBuffer {
 public:
  HistoryBuffer(std::size_t depth, Eigen::Index dim) : ring_(depth, RowMatrix::Zero(dim, dim)) {
    if (depth == 0) throw ContractViolation("HistoryBuffer: depth must be > 0");
  }

  void push(std::size_t k, const RowMatrix& s) {
    if (k != count_) throw ContractViolation("HistoryBuffer: snapshots must be pushed in order");
    ring_[k % ring_.size()] = s;
    ++count_;
  }

  const RowMatrix& at(std::size_t k) const {
    if (k >= count_ || count_ - k > ring_.size())
      throw ContractViolation("HistoryBuffer: grid point " + std::to_string(k) + " is not stored");
    return ring_[k % ring_.size()];
  }

  std::size_t size() const { return count_; }
  std::size_t depth() const { return ring_.size(); }

 private:
  std::vector<RowMatrix> ring_;
  std::size_t count_ = 0;
};

/// Pulse envelope in the emitter frame: f(t) is the amplitude arriving at
/// the emitter directly, f(t - tau) the part that first went to the mirror.
/// Either a continuum shape or a piecewise-constant time-bin pulse.
using DriveSource = std::variant<std::monostate, PulseShape, DiscretizedPulse>;

inline cplx arrival_envelope(const DriveSource& src, double t) {
  if (std::holds_alternative<std::monostate>(src)) return 0.0;
  if (const auto* s = std::get_if<PulseShape>(&src)) return envelope(*s, t);
  return std::get<DiscretizedPulse>(src).value(t);
}

/// g(t) = f(t - tau) e^{i phi/2} - f(t) e^{-i phi/2}; without feedback only
/// the direct term remains.
inline cplx drive_kernel(double t, const DriveSource& src, const PhysicsParams& pp) {
  const cplx direct = -arrival_envelope(src, t) * std::exp(cplx(0.0, -pp.phi / 2));
  if (!pp.feedback) return direct;
  return arrival_envelope(src, t - pp.tau) * std::exp(cplx(0.0, pp.phi / 2)) + direct;
}

/// Photon annihilation on the pulse label: a|j,q> = sqrt(q)|j,q-1>.
inline RowMatrix photon_lowering(unsigned n) {
  const auto d = static_cast<Eigen::Index>(2 * (n + 1));
  RowMatrix a = RowMatrix::Zero(d, d);
  for (unsigned j = 0; j < 2; ++j)
    for (unsigned q = 1; q <= n; ++q)
      a(HeisenbergState::basis_index(static_cast<Level>(j), q - 1, n),
        HeisenbergState::basis_index(static_cast<Level>(j), q, n)) = std::sqrt(static_cast<double>(q));
  return a;
}

struct Derivative {
  RowMatrix de;
  RowMatrix ds;
};

/// Right-hand side. `s_delayed` is null while t < tau.
inline Derivative rhs_matrices(const RowMatrix& e, const RowMatrix& s, const RowMatrix* s_delayed, cplx g,
                               const RowMatrix& a, const PhysicsParams& pp) {
  const double gam = pp.gamma, sg = std::sqrt(pp.gamma);
  Derivative d;
  d.de = -2.0 * gam * e;
  d.ds = -gam * s;
  if (g != cplx(0.0)) {
    d.de.noalias() -= sg * std::conj(g) * (a.transpose() * s);
    d.de.noalias() -= sg * g * (s.adjoint() * a);
    d.ds.noalias() -= sg * g * a;
    d.ds.noalias() += 2.0 * sg * g * (e * a);
  }
  if (s_delayed) {
    const cplx ph = std::exp(cplx(0.0, pp.phi));
    const RowMatrix cross = s.adjoint() * *s_delayed;
    d.de.noalias() += gam * (ph * cross + std::conj(ph) * cross.adjoint());
    d.ds.noalias() += gam * ph * *s_delayed;
    d.ds.noalias() -= 2.0 * gam * ph * (e * *s_delayed);
  }
  return d;
}

struct HeisenbergConfig {
  PhysicsParams physics;  ///< physics.dt is the RK4 step h
  unsigned photons = 0;   ///< n, the basis holds q = 0..n
  Level initial = Level::Excited;
  DriveSource drive;
  double hermiticity_tolerance = 1e-9;
};

struct HeisenbergTrace {
  TraceRecord record;
  double max_hermiticity_error = 0.0;
};

/// Fixed-step RK4. Delayed S values at the RK stages come from the grid:
/// t_k - tau at stage 1, t_{k+1} - tau at stage 4 and cubic interpolation at
/// the midpoint (linear on the first two delayed steps). The drive is read
/// just inside [t_k, t_{k+1}] at the first and last stage.
inline HeisenbergTrace integrate_dde(const HeisenbergConfig& cfg) {
  const PhysicsParams& pp = cfg.physics;
  auto warnings = pp.validate();
  const std::size_t l = pp.delay_steps();
  const std::size_t n_steps = pp.n_steps();
  const double h = pp.dt;
  const unsigned n = cfg.photons;

  HeisenbergState st = HeisenbergState::initial(n);
  const RowMatrix a = photon_lowering(n);
  const Eigen::Index obs = HeisenbergState::basis_index(cfg.initial, n, n);
  HistoryBuffer hist(l + 3, st.s.rows());
  static constexpr double mid_w[4] = {0.0625, -0.3125, 0.9375, 0.3125};
  const double edge = 1e-6 * h;

  HeisenbergTrace out;
  out.record.warnings = std::move(warnings);
  auto record = [&](double t) {
    out.record.times.push_back(t);
    out.record.excitation.push_back(st.e(obs, obs).real());
  };
  record(0.0);
  RowMatrix mid;
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) * h;
    hist.push(k, st.s);
    const bool delayed = pp.feedback && k >= l;
    const RowMatrix *d0 = nullptr, *dm = nullptr, *d1 = nullptr;
    if (delayed) {
      const std::size_t j = k - l;
      d0 = &hist.at(j);
      d1 = &hist.at(j + 1);
      if (j >= 2) {
        mid = mid_w[0] * hist.at(j - 2) + mid_w[1] * hist.at(j - 1) + mid_w[2] * hist.at(j) + mid_w[3] * hist.at(j + 1);
      } else {
        mid = 0.5 * (hist.at(j) + hist.at(j + 1));
      }
      dm = &mid;
    }
    // one-sided at the step ends so pulse edges on grid points stay sharp
    const cplx g0 = drive_kernel(t + edge, cfg.drive, pp), gm = drive_kernel(t + 0.5 * h, cfg.drive, pp),
               g1 = drive_kernel(t + h - edge, cfg.drive, pp);
    const auto k1 = rhs_matrices(st.e, st.s, d0, g0, a, pp);
    const auto k2 = rhs_matrices(st.e + 0.5 * h * k1.de, st.s + 0.5 * h * k1.ds, dm, gm, a, pp);
    const auto k3 = rhs_matrices(st.e + 0.5 * h * k2.de, st.s + 0.5 * h * k2.ds, dm, gm, a, pp);
    const auto k4 = rhs_matrices(st.e + h * k3.de, st.s + h * k3.ds, d1, g1, a, pp);
    st.e += (h / 6.0) * (k1.de + 2.0 * k2.de + 2.0 * k3.de + k4.de);
    st.s += (h / 6.0) * (k1.ds + 2.0 * k2.ds + 2.0 * k3.ds + k4.ds);
    st.t = static_cast<double>(k + 1) * h;

    if (!st.e.allFinite() || !st.s.allFinite())
      throw NumericalError("Heisenberg integration produced non-finite values at t = " + std::to_string(st.t) +
                           " ps");
    const double herm = st.hermiticity_error();
    out.max_hermiticity_error = std::max(out.max_hermiticity_error, herm);
    if (herm > cfg.hermiticity_tolerance)
      throw NumericalError("E matrix lost Hermiticity (" + std::to_string(herm) + ") at t = " + std::to_string(st.t) +
                           " ps");
    record(st.t);
  }
  return out;
}

}  // namespace wgfb
