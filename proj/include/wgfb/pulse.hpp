#pragma once

// Pulse envelopes, their time-bin discretization and the exact n-photon
// wavepacket state (a_f^dag)^n / sqrt(n!) |vac> as an MPS fragment.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <variant>
#include <vector>

#include "wgfb/errors.hpp"
#include "wgfb/tensor.hpp"

namespace wgfb {

struct RectangularPulse {
  double t_start = 0.0;   ///< ps
  double duration = 1.0;  ///< ps
};

struct GaussianPulse {
  double center = 0.0;       ///< ps
  double width = 1.0;        ///< sigma, ps
  double half_window = 5.0;  ///< support is center +- half_window * width
};

using PulseShape = std::variant<RectangularPulse, GaussianPulse>;

inline void validate(const PulseShape& shape) {
  if (const auto* r = std::get_if<RectangularPulse>(&shape)) {
    if (!(r->duration > 0.0)) throw ContractViolation("rectangular pulse: duration must be > 0");
  } else {
    const auto& g = std::get<GaussianPulse>(shape);
    if (!(g.width > 0.0)) throw ContractViolation("gaussian pulse: width must be > 0");
    if (!(g.half_window > 0.0) || !std::isfinite(g.half_window))
      throw ContractViolation("gaussian pulse: support window must be finite and positive");
  }
}

/// [begin, end) of the envelope support.
inline std::pair<double, double> support(const PulseShape& shape) {
  if (const auto* r = std::get_if<RectangularPulse>(&shape)) return {r->t_start, r->t_start + r->duration};
  const auto& g = std::get<GaussianPulse>(shape);
  return {g.center - g.half_window * g.width, g.center + g.half_window * g.width};
}

/// Continuum envelope normalized to unit integral of |f|^2 (ps^-1/2).
inline double envelope(const PulseShape& shape, double t) {
  if (const auto* r = std::get_if<RectangularPulse>(&shape)) {
    const double eps = 1e-12 * std::max(1.0, std::abs(r->t_start) + r->duration);
    return (t >= r->t_start - eps && t < r->t_start + r->duration - eps) ? 1.0 / std::sqrt(r->duration) : 0.0;
  }
  const auto& g = std::get<GaussianPulse>(shape);
  const double x = t - g.center;
  if (std::abs(x) > g.half_window * g.width) return 0.0;
  const double amp = std::pow(std::numbers::pi * g.width * g.width, -0.25);
  return amp * std::exp(-x * x / (2.0 * g.width * g.width));
}

struct DiscretizedPulse {
  std::vector<cplx> coeffs;  ///< f_k, ps^-1/2, for bins first_bin, first_bin+1, ...
  double dt = 0.0;           ///< ps
  long first_bin = 0;
  double raw_norm = 0.0;     ///< sum |f(t_k)|^2 dt before rescaling

  long end_bin() const { return first_bin + static_cast<long>(coeffs.size()); }

  /// Piecewise-constant value on the bin grid t_k = t0 + k dt.
  cplx value(double t, double t0 = 0.0) const {
    const auto k = static_cast<long>(std::floor((t - t0) / dt + 1e-9));
    if (k < first_bin || k >= end_bin()) return 0.0;
    return coeffs[static_cast<std::size_t>(k - first_bin)];
  }
};

/// Sample the envelope at each bin start t_k = t0 + k*dt, k in [0, n_bins),
/// keep the bins inside the support and rescale to sum |f_k|^2 dt = 1.
inline DiscretizedPulse discretize_pulse(const PulseShape& shape, double dt, std::size_t n_bins, double t0 = 0.0) {
  validate(shape);
  if (!(dt > 0.0)) throw ContractViolation("discretize_pulse: dt must be > 0");
  const auto [lo, hi] = support(shape);
  if (t0 + static_cast<double>(n_bins) * dt < hi - 1e-9 * dt || t0 > lo + 1e-9 * dt)
    throw ContractViolation("discretize_pulse: time grid does not cover the pulse support");

  DiscretizedPulse out;
  out.dt = dt;
  long first = -1;
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    const double f = envelope(shape, t);
    if (f == 0.0) {
      if (first >= 0 && t >= hi - 1e-9 * dt) break;
      if (first >= 0) out.coeffs.push_back(0.0);
      continue;
    }
    if (first < 0) first = static_cast<long>(k);
    out.coeffs.push_back(f);
  }
  while (!out.coeffs.empty() && out.coeffs.back() == cplx(0.0)) out.coeffs.pop_back();
  if (first < 0 || out.coeffs.empty()) throw ContractViolation("discretize_pulse: no bin overlaps the pulse support");
  out.first_bin = first;

  double s = 0.0;
  for (const auto& f : out.coeffs) s += std::norm(f) * dt;
  out.raw_norm = s;
  const double scale = 1.0 / std::sqrt(s);
  for (auto& f : out.coeffs) f *= scale;
  return out;
}

/// Site tensors of the n-photon state over the pulse bins. The bond index
/// counts photons already placed to the left, so bond extents are at most
/// n + 1 and bond labels equal photon counts.
struct PulseFragment {
  std::vector<DenseTensor> sites;          ///< [chi_l, p, chi_r]
  std::vector<std::vector<int>> bonds;     ///< sites.size() + 1 label lists
};

inline PulseFragment n_photon_mps(const DiscretizedPulse& pulse, unsigned n, std::size_t p) {
  if (p < static_cast<std::size_t>(n) + 1)
    throw ContractViolation("n_photon_mps: bin dimension p = " + std::to_string(p) + " cannot hold " +
                            std::to_string(n) + " photons");
  const std::size_t nb = pulse.coeffs.size();
  if (nb == 0) throw ContractViolation("n_photon_mps: empty pulse");
  const int cap = static_cast<int>(p) - 1;
  const int ni = static_cast<int>(n);

  // reachable photon counts on each bond
  std::vector<std::vector<int>> bonds(nb + 1);
  for (std::size_t j = 0; j <= nb; ++j) {
    const int lo = std::max(0, ni - static_cast<int>(nb - j) * cap);
    const int hi = std::min(ni, static_cast<int>(j) * cap);
    for (int c = lo; c <= hi; ++c) bonds[j].push_back(c);
  }

  std::vector<double> inv_sqrt_fact(p);
  double f = 1.0;
  for (std::size_t i = 0; i < p; ++i) {
    if (i > 0) f *= static_cast<double>(i);
    inv_sqrt_fact[i] = 1.0 / std::sqrt(f);
  }
  double sqrt_nfact = 1.0;
  for (int i = 2; i <= ni; ++i) sqrt_nfact *= static_cast<double>(i);
  sqrt_nfact = std::sqrt(sqrt_nfact);

  PulseFragment out;
  out.bonds = bonds;
  const double sdt = std::sqrt(pulse.dt);
  for (std::size_t j = 0; j < nb; ++j) {
    const auto& bl = bonds[j];
    const auto& br = bonds[j + 1];
    DenseTensor t({bl.size(), p, br.size()});
    const cplx amp = pulse.coeffs[j] * sdt;
    for (std::size_t a = 0; a < bl.size(); ++a)
      for (std::size_t b = 0; b < br.size(); ++b) {
        const int occ = br[b] - bl[a];
        if (occ < 0 || occ > cap) continue;
        cplx v = std::pow(amp, occ) * inv_sqrt_fact[static_cast<std::size_t>(occ)];
        if (j == 0) v *= sqrt_nfact;
        t.at({a, static_cast<std::size_t>(occ), b}) = v;
      }
    out.sites.push_back(std::move(t));
  }
  return out;
}

}  // namespace wgfb
