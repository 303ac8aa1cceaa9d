#pragma once

// Stroboscopic time-bin evolution of a two-level emitter in front of a
// mirror. Each step couples the emitter to the present bin k and to the bin
// emitted one delay earlier (k - l); the returning bin is swapped next to the
// emitter, fused with the present bin and gated, then swapped back and
// retired.

#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "wgfb/errors.hpp"
#include "wgfb/mps.hpp"
#include "wgfb/pulse.hpp"
#include "wgfb/tensor.hpp"

namespace wgfb {

struct PhysicsParams {
  double gamma = 4.0;  ///< decay rate, ps^-1
  double tau = 2.0;    ///< feedback delay, ps
  double phi = 0.0;    ///< feedback phase omega_0 * tau, rad
  double dt = 0.05;    ///< time step, ps
  double t_max = 100.0;
  bool feedback = true;

  /// Delay in steps. Throws unless tau is an integer multiple of dt.
  std::size_t delay_steps() const { return delay_steps_for(tau, dt); }

  std::size_t n_steps() const { return static_cast<std::size_t>(std::llround(t_max / dt)); }

  static std::size_t delay_steps_for(double tau, double step) {
    if (!(step > 0.0)) throw ContractViolation("time step must be > 0");
    if (!(tau > 0.0)) throw ContractViolation("feedback delay tau must be > 0");
    const double ratio = tau / step;
    const double l = std::round(ratio);
    if (l < 1.0 || std::abs(ratio - l) > 1e-9 * std::max(1.0, ratio))
      throw ContractViolation("delay tau = " + std::to_string(tau) + " ps is not a multiple of the step " +
                              std::to_string(step) + " ps");
    return static_cast<std::size_t>(l);
  }

  std::vector<std::string> validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ContractViolation("gamma must be finite and >= 0");
    if (!(t_max > 0.0)) throw ContractViolation("t_max must be > 0");
    (void)delay_steps();
    std::vector<std::string> warnings;
    if (gamma * dt > 0.1)
      warnings.push_back("gamma*dt = " + std::to_string(gamma * dt) + " exceeds 0.1; the stroboscopic step is coarse");
    return warnings;
  }
};

/// How the per-step coupling angle is chosen.
///  Bare:    x = sqrt(gamma dt), the literal first-order stroboscopic generator.
///  Matched: x = arccos(exp(-gamma dt)) / sqrt(2), so that one step reproduces
///           the exact exp(-gamma dt) amplitude decay of a lone excitation.
enum class Coupling { Bare, Matched };

inline double coupling_strength(const PhysicsParams& pp, Coupling c) {
  if (c == Coupling::Bare) return std::sqrt(pp.gamma * pp.dt);
  return std::acos(std::exp(-pp.gamma * pp.dt)) / std::sqrt(2.0);
}

/// Step unitary on (system x present bin x feedback bin), index
/// s * p^2 + new * p + fb, system 0 = ground, 1 = excited.
inline DenseTensor build_step_unitary(const PhysicsParams& pp, std::size_t p, Coupling c = Coupling::Matched) {
  if (p < 2) throw ContractViolation("build_step_unitary: p must be >= 2");
  const std::size_t dim = 2 * p * p;
  const double x = coupling_strength(pp, c);
  const cplx fb_phase = std::exp(cplx(0.0, -pp.phi));
  // A = b_new^dag sigma_- - e^{-i phi} b_fb^dag sigma_- ; M = -x (A - A^dag)
  RowMatrix a = RowMatrix::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  auto idx = [p](std::size_t s, std::size_t nw, std::size_t fb) {
    return static_cast<Eigen::Index>(s * p * p + nw * p + fb);
  };
  for (std::size_t nw = 0; nw < p; ++nw)
    for (std::size_t fb = 0; fb < p; ++fb) {
      if (nw + 1 < p) a(idx(0, nw + 1, fb), idx(1, nw, fb)) += std::sqrt(static_cast<double>(nw + 1));
      if (fb + 1 < p) a(idx(0, nw, fb + 1), idx(1, nw, fb)) -= fb_phase * std::sqrt(static_cast<double>(fb + 1));
    }
  const RowMatrix m = -x * (a - a.adjoint());
  return unitary_from_generator(DenseTensor::from_matrix(m));
}

struct TraceRecord {
  std::vector<double> times;       ///< ps
  std::vector<double> excitation;  ///< <E(t)>
  std::vector<std::size_t> max_bond;
  std::vector<double> norm_drift;  ///< | <psi|psi> - 1 |
  std::vector<std::string> warnings;
  double discarded_total = 0.0;

  std::size_t size() const { return times.size(); }
};

struct MpsRunConfig {
  PhysicsParams physics;
  cplx c_g = 0.0, c_e = 1.0;
  std::optional<PulseShape> pulse;
  unsigned photons = 0;
  std::size_t p = 2;  ///< bin dimension
  TruncationPolicy policy{512, 1e-8};
  Coupling coupling = Coupling::Matched;
  double truncation_alarm = 1e-3;  ///< per-step discarded weight that triggers a warning
};

inline DenseTensor excitation_operator() {
  DenseTensor e({2, 2});
  e.at({1, 1}) = 1.0;
  return e;
}

class FeedbackEvolution {
 public:
  explicit FeedbackEvolution(const MpsRunConfig& cfg)
      : cfg_(cfg), warnings_(cfg.physics.validate()), l_(cfg.physics.delay_steps()) {
    cfg_.policy.validate();
    if (cfg_.p < 2) throw ContractViolation("bin dimension p must be >= 2");
    if (cfg_.pulse && cfg_.p < cfg_.photons + 1u)
      throw ContractViolation("bin dimension p = " + std::to_string(cfg_.p) + " too small for " +
                              std::to_string(cfg_.photons) + " photons");
    if (cfg_.pulse && cfg_.photons > 0 && std::abs(cfg_.c_e) > 0.0)
      warnings_.push_back("pulse drives an emitter that is not initially in the ground state");

    gate_chain_order_ = reorder_gate(build_step_unitary(cfg_.physics, cfg_.p, cfg_.coupling), cfg_.p);
    build_initial_chain();
    excitation_ = std::norm(cfg_.c_e);
  }

  std::size_t delay_steps() const { return l_; }
  std::size_t step_index() const { return k_; }
  double time() const { return static_cast<double>(k_) * cfg_.physics.dt; }
  double excitation() const { return excitation_; }
  const MpsChain& chain() const { return chain_; }
  MpsChain& chain() { return chain_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Bond extents of the active (non-retired) chain.
  std::size_t max_bond() const { return chain_.max_bond(); }

  double norm_drift() const {
    const auto& t = chain_.site(chain_.center()).tensor;
    const double n = t.norm();
    return std::abs(n * n - 1.0);
  }

  /// Advance by one step (t_k -> t_{k+1}).
  void evolve_step() {
    const auto& pol = cfg_.policy;
    double discarded = 0.0;
    if (cfg_.physics.feedback) {
      const std::size_t l = l_;
      ensure_future_bin(l);
      // returning bin: chain position 0 -> l-1
      for (std::size_t i = 0; i + 1 < l; ++i) discarded += chain_.swap_sites(i, pol, CenterSide::Right);
      discarded += chain_.swap_sites(l, pol, CenterSide::Left);  // [.., fb, new, S, ..]
      const auto r = chain_.apply_three_site(l - 1, gate_chain_order_, pol, &e_op_);
      discarded += r.discarded_weight;
      excitation_ = r.observed.real();
      for (std::size_t i = l - 1; i > 0; --i) discarded += chain_.swap_sites(i - 1, pol, CenterSide::Left);
      chain_.retire_front();
    } else {
      ensure_future_bin(1);
      discarded += chain_.swap_sites(1, pol, CenterSide::Left);  // [anc, new, S, ..]
      const auto r = chain_.apply_three_site(0, gate_chain_order_, pol, &e_op_);
      discarded += r.discarded_weight;
      excitation_ = r.observed.real();
      chain_.retire_front();
      chain_.retire_front();
      prepend_ancilla();
    }
    if (discarded > cfg_.truncation_alarm)
      warnings_.push_back("step " + std::to_string(k_) + ": discarded weight " + std::to_string(discarded) +
                          " exceeds alarm " + std::to_string(cfg_.truncation_alarm));
    if (!std::isfinite(excitation_))
      throw NumericalError("non-finite excitation at step " + std::to_string(k_));
    ++k_;
  }

 private:
  /// (s, new, fb) -> chain order (fb, new, s)
  static DenseTensor reorder_gate(const DenseTensor& u, std::size_t p) {
    DenseTensor t = u.reshape({2, p, p, 2, p, p});
    return t.permute({2, 1, 0, 5, 4, 3}).reshape({2 * p * p, 2 * p * p});
  }

  Site ancilla(long bin, std::size_t chi) const {
    DenseTensor t({chi, cfg_.p, chi});
    for (std::size_t a = 0; a < chi; ++a) t.at({a, 0, a}) = 1.0;
    return {SiteKind::time_bin(bin, cfg_.p), std::move(t)};
  }

  void build_initial_chain() {
    const std::size_t p = cfg_.p;
    const std::size_t n_anc = cfg_.physics.feedback ? l_ : 1;
    std::vector<Site> sites;
    for (std::size_t i = 0; i < n_anc; ++i)
      sites.push_back(MpsChain::vacuum_bin(-static_cast<long>(n_anc - i), p));
    DenseTensor sys({1, 2, 1});
    sys.at({0, 0, 0}) = cfg_.c_g;
    sys.at({0, 1, 0}) = cfg_.c_e;
    sites.push_back({SiteKind::system(), std::move(sys)});

    const bool definite = cfg_.c_g == cplx(0.0) || cfg_.c_e == cplx(0.0);
    const int exc = cfg_.c_e == cplx(0.0) ? 0 : 1;
    std::vector<Charges> bonds(n_anc + 1, Charges{0});
    bonds.push_back({exc});

    next_bin_ = 0;
    if (cfg_.pulse && cfg_.photons > 0) {
      // enough bins to cover the support
      const auto [lo, hi] = support(*cfg_.pulse);
      (void)lo;
      const auto n_grid = static_cast<std::size_t>(std::ceil(hi / cfg_.physics.dt)) + 1;
      const auto disc = discretize_pulse(*cfg_.pulse, cfg_.physics.dt, n_grid);
      if (disc.first_bin < 0) throw ContractViolation("pulse starts before t = 0");
      for (; next_bin_ < disc.first_bin; ++next_bin_) {
        sites.push_back(MpsChain::vacuum_bin(next_bin_, p));
        bonds.push_back({exc});
      }
      auto frag = n_photon_mps(disc, cfg_.photons, p);
      for (std::size_t j = 0; j < frag.sites.size(); ++j) {
        sites.push_back({SiteKind::time_bin(next_bin_++, p), std::move(frag.sites[j])});
        Charges q = frag.bonds[j + 1];
        for (auto& v : q) v += exc;
        bonds.push_back(std::move(q));
      }
      total_charge_ = exc + static_cast<int>(cfg_.photons);
    } else {
      total_charge_ = exc;
    }
    if (!definite) bonds.clear();
    const std::size_t last = sites.size() - 1;
    chain_ = MpsChain(std::move(sites), std::move(bonds), last);
    chain_.move_center(0);
  }

  void ensure_future_bin(std::size_t sys_pos) {
    while (chain_.size() < sys_pos + 2) {
      chain_.append(MpsChain::vacuum_bin(next_bin_++, cfg_.p),
                    chain_.tracks_charges() ? Charges{total_charge_} : Charges{});
    }
  }

  void prepend_ancilla() {
    const std::size_t chi = chain_.site(0).tensor.extent(0);
    const Charges left = chain_.tracks_charges() ? chain_.bond_charges().front() : Charges{};
    chain_.prepend(ancilla(-1, chi), left);
  }

  MpsRunConfig cfg_;
  std::vector<std::string> warnings_;
  std::size_t l_;
  DenseTensor gate_chain_order_;
  DenseTensor e_op_ = excitation_operator();
  MpsChain chain_;
  long next_bin_ = 0;
  int total_charge_ = 0;
  std::size_t k_ = 0;
  double excitation_ = 0.0;
};

inline TraceRecord run_mps_simulation(const MpsRunConfig& cfg) {
  FeedbackEvolution evo(cfg);
  TraceRecord tr;
  const std::size_t n = cfg.physics.n_steps();
  auto record = [&] {
    tr.times.push_back(evo.time());
    tr.excitation.push_back(evo.excitation());
    tr.max_bond.push_back(evo.max_bond());
    tr.norm_drift.push_back(evo.norm_drift());
  };
  record();
  for (std::size_t k = 0; k < n; ++k) {
    try {
      evo.evolve_step();
    } catch (const NumericalError& e) {
      throw NumericalError("MPS step " + std::to_string(k) + " (t = " + std::to_string(evo.time()) + " ps): " + e.what());
    }
    record();
  }
  tr.warnings = evo.warnings();
  tr.discarded_total = evo.chain().discarded_total();
  return tr;
}

}  // namespace wgfb
