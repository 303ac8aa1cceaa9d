#pragma once

// Dense complex tensors, pairwise contraction, truncated SVD and the
// exponential of anti-Hermitian generators.
//
// Storage is row-major: the last axis varies fastest. Reshapes never move
// data; permutations do.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "wgfb/errors.hpp"

namespace wgfb {

using cplx = std::complex<double>;
using RowMatrix = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using Shape = std::vector<std::size_t>;

namespace detail {

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace detail

class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(Shape shape) : shape_(std::move(shape)), data_(detail::volume(shape_)) {
    check_shape();
  }

  DenseTensor(Shape shape, std::vector<cplx> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != detail::volume(shape_))
      throw DimensionError("DenseTensor: data length " + std::to_string(data_.size()) +
                           " does not match shape " + detail::shape_str(shape_));
  }

  static DenseTensor identity(std::size_t n) {
    DenseTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  static DenseTensor from_matrix(const RowMatrix& m) {
    DenseTensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    MatrixMap(t.data_.data(), m.rows(), m.cols()) = m;
    return t;
  }

  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<cplx> data() { return data_; }
  std::span<const cplx> data() const { return data_; }

  std::size_t offset(std::span<const std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw DimensionError("DenseTensor: index rank mismatch");
    std::size_t off = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= shape_[i]) throw DimensionError("DenseTensor: index out of range");
      off = off * shape_[i] + idx[i];
    }
    return off;
  }

  cplx& at(std::initializer_list<std::size_t> idx) {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }
  cplx at(std::initializer_list<std::size_t> idx) const {
    return data_[offset(std::span<const std::size_t>(idx.begin(), idx.size()))];
  }

  /// Same data, new extents. The element count must not change.
  DenseTensor reshape(Shape s) const& {
    DenseTensor out = *this;
    return std::move(out).reshape(std::move(s));
  }
  DenseTensor reshape(Shape s) && {
    if (detail::volume(s) != data_.size())
      throw DimensionError("reshape: " + detail::shape_str(shape_) + " -> " + detail::shape_str(s));
    shape_ = std::move(s);
    check_shape();
    return std::move(*this);
  }

  /// out[i_{perm[0]}, i_{perm[1]}, ...] = this[i_0, i_1, ...]
  DenseTensor permute(std::span<const std::size_t> perm) const {
    const std::size_t r = rank();
    if (perm.size() != r) throw DimensionError("permute: rank mismatch");
    std::vector<bool> seen(r, false);
    for (auto p : perm) {
      if (p >= r || seen[p]) throw DimensionError("permute: not a permutation");
      seen[p] = true;
    }
    Shape ns(r);
    for (std::size_t i = 0; i < r; ++i) ns[i] = shape_[perm[i]];
    DenseTensor out(ns);
    if (data_.empty()) return out;
    // strides of the source, arranged in output axis order
    std::vector<std::size_t> src_stride(r, 1), ostride(r);
    for (std::size_t i = r; i-- > 1;) src_stride[i - 1] = src_stride[i] * shape_[i];
    for (std::size_t i = 0; i < r; ++i) ostride[i] = src_stride[perm[i]];
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t n = 0; n < out.data_.size(); ++n) {
      out.data_[n] = data_[src];
      for (std::size_t ax = r; ax-- > 0;) {
        if (++idx[ax] < ns[ax]) {
          src += ostride[ax];
          break;
        }
        src -= ostride[ax] * (ns[ax] - 1);
        idx[ax] = 0;
      }
    }
    return out;
  }
  DenseTensor permute(std::initializer_list<std::size_t> perm) const {
    return permute(std::span<const std::size_t>(perm.begin(), perm.size()));
  }

  /// View as a (rows x rest) row-major matrix where rows is the product of
  /// the first `split` extents.
  MatrixMap matrix(std::size_t split) & {
    auto [r, c] = split_dims(split);
    return MatrixMap(data_.data(), r, c);
  }
  ConstMatrixMap matrix(std::size_t split) const& {
    auto [r, c] = split_dims(split);
    return ConstMatrixMap(data_.data(), r, c);
  }
  /// Owning copy, so a temporary tensor never leaves a dangling map.
  RowMatrix matrix(std::size_t split) && {
    auto [r, c] = split_dims(split);
    return ConstMatrixMap(data_.data(), r, c);
  }

  double norm() const {
    double s = 0.0;
    for (const auto& z : data_) s += std::norm(z);
    return std::sqrt(s);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](const cplx& z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); });
  }

  DenseTensor& operator*=(cplx s) {
    for (auto& z : data_) z *= s;
    return *this;
  }

 private:
  void check_shape() const {
    for (auto e : shape_)
      if (e == 0) throw DimensionError("DenseTensor: zero extent in shape " + detail::shape_str(shape_));
  }

  std::pair<Eigen::Index, Eigen::Index> split_dims(std::size_t split) const {
    if (split > rank()) throw DimensionError("matrix view: split beyond rank");
    std::size_t r = 1;
    for (std::size_t i = 0; i < split; ++i) r *= shape_[i];
    const std::size_t c = r == 0 ? 0 : data_.size() / r;
    return {static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
  }

  Shape shape_;
  std::vector<cplx> data_;
};

using AxisPair = std::pair<std::size_t, std::size_t>;

/// Sum over the paired axes (a-axis, b-axis). Result axes: the free axes of
/// `a` in order, then the free axes of `b` in order.
inline DenseTensor contract_pair(const DenseTensor& a, const DenseTensor& b,
                                 std::span<const AxisPair> paired_axes) {
  std::vector<bool> a_used(a.rank(), false), b_used(b.rank(), false);
  for (auto [ia, ib] : paired_axes) {
    if (ia >= a.rank() || ib >= b.rank())
      throw DimensionError("contract_pair: axis index out of range");
    if (a_used[ia] || b_used[ib]) throw DimensionError("contract_pair: axis paired twice");
    if (a.extent(ia) != b.extent(ib))
      throw DimensionError("contract_pair: extent mismatch on axes (" + std::to_string(ia) + "," +
                           std::to_string(ib) + "): " + std::to_string(a.extent(ia)) + " vs " +
                           std::to_string(b.extent(ib)));
    a_used[ia] = b_used[ib] = true;
  }

  std::vector<std::size_t> pa, pb;
  Shape out_shape;
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (!a_used[i]) {
      pa.push_back(i);
      out_shape.push_back(a.extent(i));
    }
  const std::size_t a_free = pa.size();
  for (auto [ia, ib] : paired_axes) {
    pa.push_back(ia);
    pb.push_back(ib);
  }
  for (std::size_t i = 0; i < b.rank(); ++i)
    if (!b_used[i]) {
      pb.push_back(i);
      out_shape.push_back(b.extent(i));
    }

  const DenseTensor ap = a.permute(pa);
  const DenseTensor bp = b.permute(pb);
  auto am = ap.matrix(a_free);
  auto bm = bp.matrix(paired_axes.size());
  if (out_shape.empty()) out_shape.push_back(1);
  DenseTensor out(out_shape);
  MatrixMap(out.data().data(), am.rows(), bm.cols()).noalias() = am * bm;
  return out;
}

inline DenseTensor contract_pair(const DenseTensor& a, const DenseTensor& b,
                                 std::initializer_list<AxisPair> paired_axes) {
  return contract_pair(a, b, std::span<const AxisPair>(paired_axes.begin(), paired_axes.size()));
}

struct TruncationPolicy {
  std::size_t max_bond = static_cast<std::size_t>(-1);
  double cutoff = 0.0;  ///< allowed discarded weight relative to the total

  void validate() const {
    if (max_bond < 1) throw ContractViolation("TruncationPolicy: max_bond must be >= 1");
    if (!(cutoff >= 0.0 && cutoff < 1.0))
      throw ContractViolation("TruncationPolicy: cutoff must lie in [0, 1)");
  }

  static TruncationPolicy exact() { return {}; }
};

/// Result of a truncated SVD on a matrix: m ~= u * diag(s) * vh.
struct MatrixSvd {
  RowMatrix u;
  std::vector<double> s;
  RowMatrix vh;
  double discarded_weight = 0.0;
  double total_weight = 0.0;
};

namespace detail {

/// Number of singular values to keep under `policy`. Singular values must be
/// sorted descending.
inline std::size_t kept_rank(std::span<const double> s, const TruncationPolicy& policy) {
  if (s.empty()) return 0;
  double total = 0.0;
  for (double v : s) total += v * v;
  std::size_t keep = s.size();
  if (policy.cutoff > 0.0 && total > 0.0) {
    double tail = 0.0;
    while (keep > 1) {
      const double w = s[keep - 1] * s[keep - 1];
      if (tail + w > policy.cutoff * total) break;
      tail += w;
      --keep;
    }
  }
  // Never split a degenerate group.
  const double tol = 1e-12 * std::max(1.0, s[0]);
  while (keep < s.size() && std::abs(s[keep] - s[keep - 1]) <= tol && s[keep] > tol) ++keep;
  keep = std::min(keep, policy.max_bond);
  return std::max<std::size_t>(keep, 1);
}

}  // namespace detail

/// Truncated SVD of a general complex matrix. Deterministic.
template <class Derived>
MatrixSvd truncated_svd(const Eigen::MatrixBase<Derived>& m, const TruncationPolicy& policy) {
  policy.validate();
  if (m.rows() == 0 || m.cols() == 0) throw ContractViolation("truncated_svd: empty matrix");
  Eigen::BDCSVD<RowMatrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) {
    std::ostringstream os;
    os << "truncated_svd: SVD did not converge on " << m.rows() << "x" << m.cols()
       << " matrix (Frobenius norm " << m.norm() << ")";
    throw NumericalError(os.str());
  }
  const auto& sv = svd.singularValues();
  std::vector<double> s(sv.data(), sv.data() + sv.size());
  for (double v : s)
    if (!std::isfinite(v)) throw NumericalError("truncated_svd: non-finite singular value");
  const std::size_t keep = detail::kept_rank(s, policy);

  MatrixSvd out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = s[i] * s[i];
    out.total_weight += w;
    if (i >= keep) out.discarded_weight += w;
  }
  const auto k = static_cast<Eigen::Index>(keep);
  out.u = svd.matrixU().leftCols(k);
  out.vh = svd.matrixV().leftCols(k).adjoint();
  s.resize(keep);
  out.s = std::move(s);
  return out;
}

struct SvdResult {
  DenseTensor left_isometry;          ///< left axes..., bond
  std::vector<double> singular_values;
  DenseTensor right_isometry;         ///< bond, right axes...
  double discarded_weight = 0.0;
};

/// Split `t` into (left axes) x (remaining axes, original order) through a
/// truncated SVD.
inline SvdResult svd_split(const DenseTensor& t, std::span<const std::size_t> left_axes,
                           const TruncationPolicy& policy) {
  if (t.empty()) throw ContractViolation("svd_split: empty tensor");
  const std::size_t r = t.rank();
  if (left_axes.empty() || left_axes.size() >= r)
    throw ContractViolation("svd_split: left axes must be a proper non-empty subset");
  std::vector<bool> is_left(r, false);
  for (auto ax : left_axes) {
    if (ax >= r || is_left[ax]) throw ContractViolation("svd_split: invalid left axis set");
    is_left[ax] = true;
  }
  std::vector<std::size_t> perm(left_axes.begin(), left_axes.end());
  Shape lshape, rshape;
  for (auto ax : left_axes) lshape.push_back(t.extent(ax));
  for (std::size_t i = 0; i < r; ++i)
    if (!is_left[i]) {
      perm.push_back(i);
      rshape.push_back(t.extent(i));
    }
  const DenseTensor tp = t.permute(perm);
  MatrixSvd svd = truncated_svd(tp.matrix(left_axes.size()), policy);
  const std::size_t k = svd.s.size();

  lshape.push_back(k);
  rshape.insert(rshape.begin(), k);
  SvdResult out{DenseTensor::from_matrix(svd.u).reshape(lshape), std::move(svd.s),
                DenseTensor::from_matrix(svd.vh).reshape(rshape), svd.discarded_weight};
  return out;
}

inline SvdResult svd_split(const DenseTensor& t, std::initializer_list<std::size_t> left_axes,
                           const TruncationPolicy& policy) {
  return svd_split(t, std::span<const std::size_t>(left_axes.begin(), left_axes.size()), policy);
}

/// exp(m) for anti-Hermitian m, via the Hermitian eigendecomposition of i*m.
inline DenseTensor unitary_from_generator(const DenseTensor& m) {
  if (m.rank() != 2 || m.extent(0) != m.extent(1))
    throw ContractViolation("unitary_from_generator: generator must be square");
  const auto mm = m.matrix(1);
  const double scale = std::max(1.0, mm.cwiseAbs().maxCoeff());
  const double skew = (mm + mm.adjoint()).cwiseAbs().maxCoeff();
  if (skew > 1e-12 * scale)
    throw ContractViolation("unitary_from_generator: generator is not anti-Hermitian (|m + m^H| = " +
                            std::to_string(skew) + ")");
  const RowMatrix h = cplx(0.0, 1.0) * mm;
  const RowMatrix hh = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<RowMatrix> eig(hh);
  if (eig.info() != Eigen::Success)
    throw NumericalError("unitary_from_generator: eigendecomposition failed");
  const auto& v = eig.eigenvectors();
  Eigen::VectorX<cplx> phases(v.cols());
  for (Eigen::Index i = 0; i < v.cols(); ++i) phases[i] = std::exp(cplx(0.0, -eig.eigenvalues()[i]));
  const RowMatrix u = v * phases.asDiagonal() * v.adjoint();
  return DenseTensor::from_matrix(u);
}

}  // namespace wgfb
