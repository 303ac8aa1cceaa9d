#pragma once

// Time-bin matrix product state: one two-level system site plus bosonic
// time-bin sites of local dimension p. Site tensors have shape
// [left_bond, local_dim, right_bond].
//
// Bond indices optionally carry U(1) labels (number of excitations to the
// left of the bond). When labels are tracked every non-zero element obeys
// q_left + local_charge == q_right, and SVDs are done block by block. Gates
// that break the symmetry drop the labels and the chain continues dense.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "wgfb/errors.hpp"
#include "wgfb/tensor.hpp"

namespace wgfb {

struct SiteKind {
  enum class Tag { System, TimeBin };
  Tag tag = Tag::TimeBin;
  long bin = -1;  ///< physical bin index; -1 for the system
  std::size_t local_dim = 2;

  static SiteKind system() { return {Tag::System, -1, 2}; }
  static SiteKind time_bin(long k, std::size_t p) {
    if (p < 2) throw ContractViolation("time bin needs local dimension p >= 2");
    return {Tag::TimeBin, k, p};
  }
  bool is_system() const { return tag == Tag::System; }
};

struct Site {
  SiteKind kind;
  DenseTensor tensor;  ///< [left_bond, local_dim, right_bond]
};

using Charges = std::vector<int>;

enum class CenterSide { Left, Right };

namespace detail {

inline Charges local_charges(std::size_t d) {
  Charges q(d);
  std::iota(q.begin(), q.end(), 0);
  return q;
}

inline Charges fuse_charges(const Charges& a, const Charges& b) {
  Charges out;
  out.reserve(a.size() * b.size());
  for (int x : a)
    for (int y : b) out.push_back(x + y);
  return out;
}

struct BondSplit {
  DenseTensor left;   ///< [chi_l, d_l, k]
  DenseTensor right;  ///< [k, d_r, chi_r]
  Charges mid;
  double discarded_weight = 0.0;
};

/// Split theta [chi_l, d_l, d_r, chi_r] across the middle, one SVD per
/// charge sector. With all-zero labels this is a single dense SVD. The
/// singular values are absorbed on the `center` side.
inline BondSplit split_theta(const DenseTensor& theta, const Charges& ql, const Charges& lcl,
                             const Charges& lcr, const Charges& qr, const TruncationPolicy& policy,
                             CenterSide center) {
  const std::size_t chil = theta.extent(0), dl = theta.extent(1), dr = theta.extent(2),
                    chir = theta.extent(3);
  const std::size_t rows = chil * dl, cols = dr * chir;
  auto m = theta.matrix(2);

  std::map<int, std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>> sectors;
  for (std::size_t a = 0; a < chil; ++a)
    for (std::size_t s = 0; s < dl; ++s)
      sectors[ql[a] + lcl[s]].first.push_back(static_cast<Eigen::Index>(a * dl + s));
  for (std::size_t t = 0; t < dr; ++t)
    for (std::size_t b = 0; b < chir; ++b)
      sectors[qr[b] - lcr[t]].second.push_back(static_cast<Eigen::Index>(t * chir + b));

  struct Block {
    int charge;
    const std::vector<Eigen::Index>* r;
    const std::vector<Eigen::Index>* c;
    MatrixSvd svd;
  };
  std::vector<Block> blocks;
  const TruncationPolicy all = TruncationPolicy::exact();
  for (auto& [q, rc] : sectors) {
    if (rc.first.empty() || rc.second.empty()) continue;
    RowMatrix sub(static_cast<Eigen::Index>(rc.first.size()), static_cast<Eigen::Index>(rc.second.size()));
    if (rc.first.size() == rows && rc.second.size() == cols) {
      sub = m;
    } else {
      for (Eigen::Index i = 0; i < sub.rows(); ++i) {
        const auto src = m.row(rc.first[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < sub.cols(); ++j) sub(i, j) = src(rc.second[static_cast<std::size_t>(j)]);
      }
    }
    blocks.push_back({q, &rc.first, &rc.second, truncated_svd(sub, all)});
  }
  if (blocks.empty()) throw ContractViolation("split_theta: no compatible charge sector");

  // global ordering: descending singular value, ties by (sector, index)
  struct Entry {
    double s;
    std::size_t block;
    std::size_t idx;
  };
  std::vector<Entry> entries;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi)
    for (std::size_t i = 0; i < blocks[bi].svd.s.size(); ++i) entries.push_back({blocks[bi].svd.s[i], bi, i});
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& x, const Entry& y) { return x.s > y.s; });
  std::vector<double> sorted(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) sorted[i] = entries[i].s;
  const std::size_t keep = kept_rank(sorted, policy);

  std::vector<std::size_t> kept_per_block(blocks.size(), 0);
  double discarded = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i < keep)
      ++kept_per_block[entries[i].block];
    else
      discarded += entries[i].s * entries[i].s;
  }
  std::size_t k = 0;
  for (auto c : kept_per_block) k += c;

  BondSplit out{DenseTensor({chil, dl, k}), DenseTensor({k, dr, chir}), Charges(k), discarded};
  auto lm = out.left.matrix(2);   // rows x k
  auto rm = out.right.matrix(1);  // k x cols
  std::size_t off = 0;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    const auto kb = static_cast<Eigen::Index>(kept_per_block[bi]);
    for (Eigen::Index j = 0; j < kb; ++j) {
      const double sv = b.svd.s[static_cast<std::size_t>(j)];
      const double ls = center == CenterSide::Left ? sv : 1.0;
      const double rs = center == CenterSide::Right ? sv : 1.0;
      const auto col = static_cast<Eigen::Index>(off) + j;
      for (std::size_t i = 0; i < b.r->size(); ++i) lm((*b.r)[i], col) = b.svd.u(static_cast<Eigen::Index>(i), j) * ls;
      for (std::size_t i = 0; i < b.c->size(); ++i) rm(col, (*b.c)[i]) = b.svd.vh(j, static_cast<Eigen::Index>(i)) * rs;
      out.mid[static_cast<std::size_t>(col)] = b.charge;
    }
    off += kept_per_block[bi];
  }
  return out;
}

/// theta[a, s, t, b] = sum_c A[a, s, c] B[c, t, b]
inline DenseTensor merge_sites(const DenseTensor& a, const DenseTensor& b) {
  if (a.extent(2) != b.extent(0)) throw DimensionError("merge_sites: bond mismatch");
  DenseTensor theta({a.extent(0), a.extent(1), b.extent(1), b.extent(2)});
  theta.matrix(2).noalias() = a.matrix(2) * b.matrix(1);
  return theta;
}

/// merge_sites for charge-labelled tensors: only blocks whose row, middle
/// and column labels agree are multiplied. Row label of (a, s) is
/// ql[a] + lca[s], column label of (t, b) is qr[b] - lcb[t].
inline DenseTensor merge_sites_blocked(const DenseTensor& a, const DenseTensor& b, const Charges& ql,
                                       const Charges& lca, const Charges& qm, const Charges& lcb, const Charges& qr) {
  if (a.extent(2) != b.extent(0)) throw DimensionError("merge_sites: bond mismatch");
  const std::size_t chil = a.extent(0), dl = a.extent(1), chim = a.extent(2), dr = b.extent(1), chir = b.extent(2);
  using Idx = std::vector<Eigen::Index>;
  std::map<int, Idx> mids, rows, cols;
  for (std::size_t c = 0; c < chim; ++c) mids[qm[c]].push_back(static_cast<Eigen::Index>(c));
  for (std::size_t x = 0; x < chil; ++x)
    for (std::size_t s = 0; s < dl; ++s) rows[ql[x] + lca[s]].push_back(static_cast<Eigen::Index>(x * dl + s));
  for (std::size_t t = 0; t < dr; ++t)
    for (std::size_t y = 0; y < chir; ++y) cols[qr[y] - lcb[t]].push_back(static_cast<Eigen::Index>(t * chir + y));

  DenseTensor theta({chil, dl, dr, chir});
  auto out = theta.matrix(2);
  const auto am = a.matrix(2);
  const auto bm = b.matrix(1);
  for (const auto& [q, m] : mids) {
    const auto r = rows.find(q);
    const auto c = cols.find(q);
    if (r == rows.end() || c == cols.end()) continue;
    const RowMatrix ab = am(r->second, m);
    const RowMatrix bb = bm(m, c->second);
    out(r->second, c->second) = ab * bb;
  }
  return theta;
}

}  // namespace detail

class MpsChain {
 public:
  MpsChain() = default;

  /// Build from explicit sites. `bond_charges` has sites.size()+1 entries or
  /// is empty (untracked).
  MpsChain(std::vector<Site> sites, std::vector<Charges> bond_charges, std::size_t center)
      : sites_(std::move(sites)), bonds_(std::move(bond_charges)), center_(center) {
    if (sites_.empty()) throw ContractViolation("MpsChain: no sites");
    for (std::size_t i = 0; i + 1 < sites_.size(); ++i)
      if (sites_[i].tensor.extent(2) != sites_[i + 1].tensor.extent(0))
        throw DimensionError("MpsChain: bond mismatch between sites " + std::to_string(i) + " and " +
                             std::to_string(i + 1));
    for (const auto& s : sites_)
      if (s.tensor.rank() != 3 || s.tensor.extent(1) != s.kind.local_dim)
        throw DimensionError("MpsChain: site tensor must be [chi_l, local_dim, chi_r]");
    if (!bonds_.empty()) {
      if (bonds_.size() != sites_.size() + 1) throw DimensionError("MpsChain: bond label count");
      for (std::size_t i = 0; i < sites_.size(); ++i)
        if (bonds_[i].size() != sites_[i].tensor.extent(0))
          throw DimensionError("MpsChain: bond label extent");
      if (bonds_.back().size() != sites_.back().tensor.extent(2)) throw DimensionError("MpsChain: bond label extent");
    }
    if (center_ >= sites_.size()) throw ContractViolation("MpsChain: center out of range");
  }

  /// Product state: system site at `system_pos`, n_bins vacuum bins.
  static MpsChain init_chain(std::size_t n_bins, std::size_t p, cplx c_g, cplx c_e, std::size_t system_pos = 0) {
    if (p < 2) throw ContractViolation("init_chain: bin dimension p must be >= 2");
    const double nrm = std::norm(c_g) + std::norm(c_e);
    if (std::abs(nrm - 1.0) > 1e-12) throw ContractViolation("init_chain: system state is not normalized");
    if (system_pos > n_bins) throw ContractViolation("init_chain: system position out of range");

    std::vector<Site> sites;
    long bin = 0;
    for (std::size_t i = 0; i <= n_bins; ++i) {
      if (i == system_pos) {
        DenseTensor t({1, 2, 1});
        t.at({0, 0, 0}) = c_g;
        t.at({0, 1, 0}) = c_e;
        sites.push_back({SiteKind::system(), std::move(t)});
      } else {
        sites.push_back(vacuum_bin(bin++, p));
      }
    }
    const bool definite = c_g == cplx(0.0) || c_e == cplx(0.0);
    std::vector<Charges> bonds;
    if (definite) {
      const int exc = c_e == cplx(0.0) ? 0 : 1;
      for (std::size_t i = 0; i <= sites.size(); ++i) bonds.push_back({i > system_pos ? exc : 0});
    }
    return MpsChain(std::move(sites), std::move(bonds), system_pos);
  }

  static Site vacuum_bin(long bin, std::size_t p) {
    DenseTensor t({1, p, 1});
    t.at({0, 0, 0}) = 1.0;
    return {SiteKind::time_bin(bin, p), std::move(t)};
  }

  std::size_t size() const { return sites_.size(); }
  const Site& site(std::size_t i) const { return sites_.at(i); }
  std::size_t center() const { return center_; }
  bool tracks_charges() const { return !bonds_.empty(); }
  const std::vector<Charges>& bond_charges() const { return bonds_; }
  std::size_t retired() const { return retired_; }

  /// Chain position -> physical bin index (-1 for the system site).
  std::vector<long> logical_order() const {
    std::vector<long> out;
    out.reserve(sites_.size());
    for (const auto& s : sites_) out.push_back(s.kind.bin);
    return out;
  }

  std::size_t system_position() const {
    for (std::size_t i = 0; i < sites_.size(); ++i)
      if (sites_[i].kind.is_system()) return i;
    throw ContractViolation("MpsChain: no system site");
  }

  /// Bond extents in chain order, boundaries included.
  std::vector<std::size_t> bond_profile() const {
    std::vector<std::size_t> out;
    out.reserve(sites_.size() + 1);
    out.push_back(sites_.front().tensor.extent(0));
    for (const auto& s : sites_) out.push_back(s.tensor.extent(2));
    return out;
  }

  std::size_t max_bond() const {
    auto b = bond_profile();
    return *std::max_element(b.begin(), b.end());
  }

  /// Move the orthogonality center to `target` through exact SVDs.
  void move_center(std::size_t target) {
    if (target >= sites_.size()) throw ContractViolation("move_center: position out of range");
    while (center_ < target) shift_center(center_, CenterSide::Right);
    while (center_ > target) shift_center(center_ - 1, CenterSide::Left);
  }

  /// Apply a two-site gate on (pos, pos+1). `gate` is [d1*d2, d1*d2] or
  /// [d1, d2, d1, d2] (output indices first). Returns the discarded weight.
  double apply_two_site(std::size_t pos, const DenseTensor& gate, const TruncationPolicy& policy,
                        CenterSide side = CenterSide::Right) {
    check_pair(pos);
    const std::size_t d1 = sites_[pos].kind.local_dim, d2 = sites_[pos + 1].kind.local_dim;
    const RowMatrix g = gate_matrix(gate, d1 * d2);
    check_unitary(g, "apply_two_site");
    if (tracks_charges() && !conserves(g, detail::fuse_charges(detail::local_charges(d1), detail::local_charges(d2))))
      drop_charges();
    focus_pair(pos);
    DenseTensor theta = merge_pair(pos);
    apply_local(theta, g, d1 * d2);
    return resplit(pos, theta, policy, side);
  }

  /// Exchange the physical content of sites pos and pos+1.
  double swap_sites(std::size_t pos, const TruncationPolicy& policy, CenterSide side = CenterSide::Right) {
    check_pair(pos);
    focus_pair(pos);
    DenseTensor theta = merge_pair(pos).permute({0, 2, 1, 3});
    std::swap(sites_[pos].kind, sites_[pos + 1].kind);
    return resplit(pos, theta, policy, side);
  }

  /// Apply `gate` (chain order pos, pos+1, pos+2; [D, D] with
  /// D = d0*d1*d2) by fusing sites pos and pos+1 into one composite,
  /// gating (composite x site pos+2) and splitting back. The center ends at
  /// `pos`. `observe` (operator on site pos+2) is evaluated on the gated
  /// state before truncation.
  struct ThreeSiteResult {
    double discarded_weight = 0.0;
    cplx observed = 0.0;
  };
  ThreeSiteResult apply_three_site(std::size_t pos, const DenseTensor& gate, const TruncationPolicy& policy,
                                   const DenseTensor* observe = nullptr) {
    if (pos + 2 >= sites_.size()) throw ContractViolation("apply_three_site: position out of range");
    const std::size_t d0 = sites_[pos].kind.local_dim, d1 = sites_[pos + 1].kind.local_dim,
                      d2 = sites_[pos + 2].kind.local_dim;
    const std::size_t dc = d0 * d1;
    const RowMatrix g = gate_matrix(gate, dc * d2);
    check_unitary(g, "apply_three_site");
    const Charges lc0 = detail::local_charges(d0), lc1 = detail::local_charges(d1),
                  lc2 = detail::local_charges(d2);
    const Charges lcc = detail::fuse_charges(lc0, lc1);
    if (tracks_charges() && !conserves(g, detail::fuse_charges(lcc, lc2))) drop_charges();
    if (center_ < pos || center_ > pos + 2) move_center(center_ < pos ? pos : pos + 2);

    DenseTensor comp = merge_pair(pos);
    comp = std::move(comp).reshape({comp.extent(0), dc, comp.extent(3)});
    DenseTensor theta = tracks_charges()
                            ? detail::merge_sites_blocked(comp, sites_[pos + 2].tensor, bonds_[pos], lcc, bonds_[pos + 2],
                                                          lc2, bonds_[pos + 3])
                            : detail::merge_sites(comp, sites_[pos + 2].tensor);
    apply_local(theta, g, dc * d2);

    ThreeSiteResult res;
    if (observe) res.observed = expectation_on_theta(theta, *observe);

    const Charges zero_c(dc, 0), zero_2(d2, 0);
    const bool tr = tracks_charges();
    auto outer = detail::split_theta(theta, left_labels(pos), tr ? lcc : zero_c, tr ? lc2 : zero_2,
                                     right_labels(pos + 2), policy, CenterSide::Left);
    DenseTensor c = std::move(outer.left).reshape({outer.left.extent(0), d0, d1, outer.left.extent(2)});
    const Charges zero_0(d0, 0), zero_1(d1, 0);
    auto inner = detail::split_theta(c, left_labels(pos), tr ? lc0 : zero_0, tr ? lc1 : zero_1,
                                     tr ? outer.mid : Charges(outer.mid.size(), 0), policy, CenterSide::Left);
    sites_[pos].tensor = std::move(inner.left);
    sites_[pos + 1].tensor = std::move(inner.right);
    sites_[pos + 2].tensor = std::move(outer.right);
    if (tr) {
      bonds_[pos + 1] = std::move(inner.mid);
      bonds_[pos + 2] = std::move(outer.mid);
    }
    center_ = pos;
    res.discarded_weight = outer.discarded_weight + inner.discarded_weight;
    discarded_ += res.discarded_weight;
    return res;
  }

  /// <psi| op_pos |psi>. Moves the center to pos.
  cplx local_expectation(std::size_t pos, const DenseTensor& op) {
    if (pos >= sites_.size()) throw ContractViolation("local_expectation: position out of range");
    const std::size_t d = sites_[pos].kind.local_dim;
    if (op.rank() != 2 || op.extent(0) != d || op.extent(1) != d)
      throw DimensionError("local_expectation: operator must be " + std::to_string(d) + "x" + std::to_string(d));
    move_center(pos);
    const auto& t = sites_[pos].tensor;
    const std::size_t chil = t.extent(0), chir = t.extent(2);
    auto o = op.matrix(1);
    cplx acc = 0.0;
    const auto data = t.data();
    for (std::size_t a = 0; a < chil; ++a)
      for (std::size_t b = 0; b < chir; ++b)
        for (std::size_t s = 0; s < d; ++s) {
          const cplx bra = std::conj(data[(a * d + s) * chir + b]);
          if (bra == cplx(0.0)) continue;
          for (std::size_t s2 = 0; s2 < d; ++s2)
            acc += bra * o(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) * data[(a * d + s2) * chir + b];
        }
    return acc;
  }

  /// <psi|psi> by a full transfer-matrix contraction (no gauge assumption
  /// on the right; the left boundary environment is the identity).
  double norm_squared() const {
    RowMatrix env = RowMatrix::Identity(static_cast<Eigen::Index>(sites_.front().tensor.extent(0)),
                                        static_cast<Eigen::Index>(sites_.front().tensor.extent(0)));
    for (const auto& s : sites_) {
      const auto& t = s.tensor;
      const auto chil = static_cast<Eigen::Index>(t.extent(0)), chir = static_cast<Eigen::Index>(t.extent(2));
      const auto d = static_cast<Eigen::Index>(t.extent(1));
      RowMatrix next = RowMatrix::Zero(chir, chir);
      for (Eigen::Index k = 0; k < d; ++k) {
        Eigen::Map<const RowMatrix, 0, Eigen::OuterStride<>> a(t.data().data() + k * chir, chil, chir,
                                                               Eigen::OuterStride<>(d * chir));
        next.noalias() += a.adjoint() * env * a;
      }
      env = std::move(next);
    }
    return env.trace().real();
  }

  /// Largest deviation from the isometry conditions around the center.
  double gauge_error() const {
    double err = 0.0;
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      if (i == center_) continue;
      const auto& t = sites_[i].tensor;
      if (i < center_) {
        auto m = t.matrix(2);
        err = std::max(err, (m.adjoint() * m - RowMatrix::Identity(m.cols(), m.cols())).cwiseAbs().maxCoeff());
      } else {
        auto m = t.matrix(1);
        err = std::max(err, (m * m.adjoint() - RowMatrix::Identity(m.rows(), m.rows())).cwiseAbs().maxCoeff());
      }
    }
    return err;
  }

  /// Sum of all weights discarded by truncations so far.
  double discarded_total() const { return discarded_; }

  /// Drop the leftmost site. Its left-isometric tensor is absorbed into the
  /// left boundary, whose environment stays the identity, so every later
  /// local expectation is unchanged.
  void retire_front() {
    if (sites_.size() < 2) throw ContractViolation("retire_front: chain would become empty");
    if (sites_.front().kind.is_system()) throw ContractViolation("retire_front: cannot retire the system site");
    if (center_ == 0) shift_center(0, CenterSide::Right);
    sites_.erase(sites_.begin());
    if (tracks_charges()) bonds_.erase(bonds_.begin());
    --center_;
    ++retired_;
  }

  /// Insert a site at the right end (right-isometric by construction when it
  /// has a unit right bond and unit norm).
  void append(Site s, const Charges& right_bond = {}) {
    if (s.tensor.extent(0) != sites_.back().tensor.extent(2))
      throw DimensionError("append: bond mismatch");
    sites_.push_back(std::move(s));
    if (tracks_charges()) {
      if (right_bond.size() != sites_.back().tensor.extent(2)) throw DimensionError("append: right bond labels");
      bonds_.push_back(right_bond);
    }
  }

  /// Contract to a dense state vector; position order, first site slowest.
  /// Requires unit boundary bonds.
  std::vector<cplx> to_state_vector() const {
    if (sites_.front().tensor.extent(0) != 1 || sites_.back().tensor.extent(2) != 1)
      throw ContractViolation("to_state_vector: boundary bonds must have extent 1");
    RowMatrix acc = RowMatrix::Ones(1, 1);  // rows: physical configurations, cols: bond
    for (const auto& s : sites_) {
      const auto& t = s.tensor;
      const auto d = static_cast<Eigen::Index>(t.extent(1)), chir = static_cast<Eigen::Index>(t.extent(2));
      RowMatrix next(acc.rows() * d, chir);
      auto tm = t.matrix(1);  // chi_l x (d*chi_r)
      RowMatrix prod = acc * tm;  // rows x (d*chi_r)
      for (Eigen::Index r = 0; r < acc.rows(); ++r)
        for (Eigen::Index k = 0; k < d; ++k) next.row(r * d + k) = prod.block(r, k * chir, 1, chir);
      acc = std::move(next);
    }
    return std::vector<cplx>(acc.data(), acc.data() + acc.size());
  }

  /// Insert a site at the left end; its right bond must match the current
  /// left boundary. The new site must be left-isometric.
  void prepend(Site s, const Charges& left_bond = {}) {
    if (s.tensor.extent(2) != sites_.front().tensor.extent(0)) throw DimensionError("prepend: bond mismatch");
    sites_.insert(sites_.begin(), std::move(s));
    if (tracks_charges()) {
      if (left_bond.size() != sites_.front().tensor.extent(0)) throw DimensionError("prepend: left bond labels");
      bonds_.insert(bonds_.begin(), left_bond);
    }
    ++center_;
  }

  void drop_charges() { bonds_.clear(); }

 private:
  void check_pair(std::size_t pos) const {
    if (pos + 1 >= sites_.size())
      throw ContractViolation("position " + std::to_string(pos) + " has no right neighbour in a chain of " +
                              std::to_string(sites_.size()));
  }

  static RowMatrix gate_matrix(const DenseTensor& gate, std::size_t dim) {
    if (gate.size() != dim * dim)
      throw DimensionError("gate has " + std::to_string(gate.size()) + " elements, expected " +
                           std::to_string(dim * dim));
    return ConstMatrixMap(gate.data().data(), static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  }

  static void check_unitary(const RowMatrix& g, const char* who) {
    const double dev = (g.adjoint() * g - RowMatrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff();
    if (dev > 1e-10) throw ContractViolation(std::string(who) + ": gate is not unitary (deviation " + std::to_string(dev) + ")");
  }

  static bool conserves(const RowMatrix& g, const Charges& q) {
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        if (q[static_cast<std::size_t>(i)] != q[static_cast<std::size_t>(j)] && std::abs(g(i, j)) > 1e-14) return false;
    return true;
  }

  void focus_pair(std::size_t pos) {
    if (center_ < pos) move_center(pos);
    else if (center_ > pos + 1) move_center(pos + 1);
  }

  DenseTensor merge_pair(std::size_t pos) const {
    const auto& a = sites_[pos].tensor;
    const auto& b = sites_[pos + 1].tensor;
    if (!tracks_charges()) return detail::merge_sites(a, b);
    return detail::merge_sites_blocked(a, b, bonds_[pos], detail::local_charges(a.extent(1)), bonds_[pos + 1],
                                       detail::local_charges(b.extent(1)), bonds_[pos + 2]);
  }

  Charges left_labels(std::size_t pos) const {
    return tracks_charges() ? bonds_[pos] : Charges(sites_[pos].tensor.extent(0), 0);
  }
  Charges right_labels(std::size_t pos) const {
    return tracks_charges() ? bonds_[pos + 1] : Charges(sites_[pos].tensor.extent(2), 0);
  }

  /// theta [chi_l, D, chi_r] (or any split with D in the middle) <- g on D.
  static void apply_local(DenseTensor& theta, const RowMatrix& g, std::size_t dim) {
    const std::size_t chil = theta.extent(0);
    const std::size_t chir = theta.size() / (chil * dim);
    const auto d = static_cast<Eigen::Index>(dim), cr = static_cast<Eigen::Index>(chir);
    RowMatrix tmp(d, cr);
    for (std::size_t a = 0; a < chil; ++a) {
      MatrixMap blk(theta.data().data() + a * dim * chir, d, cr);
      tmp.noalias() = g * blk;
      blk = tmp;
    }
  }

  static cplx expectation_on_theta(const DenseTensor& theta, const DenseTensor& op) {
    // theta [chi_l, ..., chi_r], op acts on the last physical index
    const std::size_t d = op.extent(0);
    const std::size_t chil = theta.extent(0), chir = theta.extent(theta.rank() - 1);
    const std::size_t outer = theta.size() / (chil * chir * d);
    auto o = op.matrix(1);
    cplx acc = 0.0;
    const auto data = theta.data();
    for (std::size_t a = 0; a < chil * outer; ++a)
      for (std::size_t s = 0; s < d; ++s)
        for (std::size_t s2 = 0; s2 < d; ++s2) {
          const cplx w = o(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2));
          if (w == cplx(0.0)) continue;
          for (std::size_t b = 0; b < chir; ++b)
            acc += std::conj(data[(a * d + s) * chir + b]) * w * data[(a * d + s2) * chir + b];
        }
    return acc;
  }

  double resplit(std::size_t pos, const DenseTensor& theta, const TruncationPolicy& policy, CenterSide side) {
    const std::size_t d1 = sites_[pos].kind.local_dim, d2 = sites_[pos + 1].kind.local_dim;
    const bool tr = tracks_charges();
    auto sp = detail::split_theta(theta, left_labels(pos), tr ? detail::local_charges(d1) : Charges(d1, 0),
                                  tr ? detail::local_charges(d2) : Charges(d2, 0), right_labels(pos + 1), policy,
                                  side);
    sites_[pos].tensor = std::move(sp.left);
    sites_[pos + 1].tensor = std::move(sp.right);
    if (tr) bonds_[pos + 1] = std::move(sp.mid);
    center_ = side == CenterSide::Left ? pos : pos + 1;
    discarded_ += sp.discarded_weight;
    return sp.discarded_weight;
  }

  /// Move the center across the bond (i, i+1); i is the current center for
  /// Right moves and i+1 for Left moves.
  void shift_center(std::size_t i, CenterSide to) {
    const bool tr = tracks_charges();
    const TruncationPolicy prune{static_cast<std::size_t>(-1), 1e-28};
    if (to == CenterSide::Right) {
      const auto& t = sites_[i].tensor;
      const std::size_t d = t.extent(1);
      DenseTensor theta = t.reshape({t.extent(0), d, 1, t.extent(2)});
      auto sp = detail::split_theta(theta, left_labels(i), tr ? detail::local_charges(d) : Charges(d, 0), Charges{0},
                                    right_labels(i), prune, CenterSide::Right);
      auto& nxt = sites_[i + 1].tensor;
      DenseTensor merged({sp.mid.size(), nxt.extent(1), nxt.extent(2)});
      merged.matrix(1).noalias() = sp.right.matrix(1) * nxt.matrix(1);
      sites_[i].tensor = std::move(sp.left);
      nxt = std::move(merged);
      if (tr) bonds_[i + 1] = std::move(sp.mid);
      center_ = i + 1;
    } else {
      const auto& t = sites_[i + 1].tensor;
      const std::size_t d = t.extent(1);
      DenseTensor theta = t.reshape({t.extent(0), 1, d, t.extent(2)});
      auto sp = detail::split_theta(theta, left_labels(i + 1), Charges{0}, tr ? detail::local_charges(d) : Charges(d, 0),
                                    right_labels(i + 1), prune, CenterSide::Left);
      auto& prv = sites_[i].tensor;
      DenseTensor merged({prv.extent(0), prv.extent(1), sp.mid.size()});
      merged.matrix(2).noalias() = prv.matrix(2) * sp.left.matrix(2);
      sites_[i + 1].tensor = std::move(sp.right);
      prv = std::move(merged);
      if (tr) bonds_[i + 1] = std::move(sp.mid);
      center_ = i;
    }
  }

  std::vector<Site> sites_;
  std::vector<Charges> bonds_;
  std::size_t center_ = 0;
  std::size_t retired_ = 0;
  double discarded_ = 0.0;
};

}  // namespace wgfb
