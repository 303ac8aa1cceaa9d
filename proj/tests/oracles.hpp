#pragma once

// Independent reference implementations used by the tests. Nothing here
// calls into the library's contraction, SVD or exponential code.

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using cplx = std::complex<double>;
using Mat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mat random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = cplx(nd(rng), nd(rng));
  return m;
}

inline Mat triple_loop(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      cplx acc = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

/// exp(m) by scaling and squaring around a 40-term Taylor series.
inline Mat taylor_exp(const Mat& m, int terms = 40) {
  double nrm = 0.0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) nrm = std::max(nrm, m.row(i).cwiseAbs().sum());
  int squarings = 0;
  while (nrm > 0.5) {
    nrm *= 0.5;
    ++squarings;
  }
  const Mat x = m / std::pow(2.0, squarings);
  Mat term = Mat::Identity(m.rows(), m.cols());
  Mat sum = term;
  for (int k = 1; k <= terms; ++k) {
    term = triple_loop(term, x) / static_cast<double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = triple_loop(sum, sum);
  return sum;
}

/// Singular values (descending) and the best rank-k approximation from the
/// eigendecomposition of the normal matrix m m^H.
struct NormalSvd {
  std::vector<double> s;
  Mat u;  ///< eigenvectors of m m^H, columns sorted by descending eigenvalue
};

inline NormalSvd normal_svd(const Mat& m) {
  const Mat g = m * m.adjoint();
  Eigen::SelfAdjointEigenSolver<Mat> es(g);
  const auto n = g.rows();
  NormalSvd out;
  out.u = Mat(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = n - 1 - i;
    out.s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()[src])));
    out.u.col(i) = es.eigenvectors().col(src);
  }
  return out;
}

inline Mat rank_k_projection(const NormalSvd& svd, const Mat& m, Eigen::Index k) {
  const Mat uk = svd.u.leftCols(k);
  return uk * (uk.adjoint() * m);
}

/// Dense state vector over sites with local dimensions `dims`, first site
/// slowest.
class StateVector {
 public:
  StateVector(std::vector<std::size_t> dims, std::vector<cplx> amp) : dims_(std::move(dims)), amp_(std::move(amp)) {}

  static StateVector product(const std::vector<std::vector<cplx>>& locals) {
    std::vector<std::size_t> dims;
    std::vector<cplx> amp{1.0};
    for (const auto& l : locals) {
      dims.push_back(l.size());
      std::vector<cplx> next;
      for (auto a : amp)
        for (auto b : l) next.push_back(a * b);
      amp = std::move(next);
    }
    return {dims, amp};
  }

  const std::vector<cplx>& amplitudes() const { return amp_; }
  const std::vector<std::size_t>& dims() const { return dims_; }

  /// Apply a gate to sites (pos, pos+1, ..., pos+w-1); g indices are the
  /// joint local index with the first site slowest.
  void apply(std::size_t pos, std::size_t width, const Mat& g) {
    std::size_t inner = 1, outer = 1, local = 1;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i < pos) outer *= dims_[i];
      else if (i < pos + width) local *= dims_[i];
      else inner *= dims_[i];
    }
    std::vector<cplx> out(amp_.size(), 0.0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t r = 0; r < local; ++r)
        for (std::size_t c = 0; c < local; ++c) {
          const cplx w = g(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
          if (w == cplx(0.0)) continue;
          for (std::size_t i = 0; i < inner; ++i)
            out[(o * local + r) * inner + i] += w * amp_[(o * local + c) * inner + i];
        }
    amp_ = std::move(out);
  }

  void swap(std::size_t pos) {
    const std::size_t d1 = dims_[pos], d2 = dims_[pos + 1];
    Mat p = Mat::Zero(static_cast<Eigen::Index>(d1 * d2), static_cast<Eigen::Index>(d1 * d2));
    for (std::size_t a = 0; a < d1; ++a)
      for (std::size_t b = 0; b < d2; ++b) p(static_cast<Eigen::Index>(b * d1 + a), static_cast<Eigen::Index>(a * d2 + b)) = 1.0;
    apply(pos, 2, p);
    std::swap(dims_[pos], dims_[pos + 1]);
  }

  cplx expectation(std::size_t pos, const Mat& op) const {
    StateVector tmp = *this;
    tmp.apply(pos, 1, op);
    cplx acc = 0.0;
    for (std::size_t i = 0; i < amp_.size(); ++i) acc += std::conj(amp_[i]) * tmp.amp_[i];
    return acc;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<cplx> amp_;
};

/// (sum_k c_k b_k^dag)^n |vac> / sqrt(n!) on N bins of dimension p, built
/// by repeated application of the creation operator.
inline std::vector<cplx> brute_force_pulse(const std::vector<cplx>& c, unsigned n, std::size_t p) {
  const std::size_t nb = c.size();
  std::size_t dim = 1;
  for (std::size_t i = 0; i < nb; ++i) dim *= p;
  std::vector<cplx> psi(dim, 0.0);
  psi[0] = 1.0;
  for (unsigned step = 0; step < n; ++step) {
    std::vector<cplx> next(dim, 0.0);
    for (std::size_t idx = 0; idx < dim; ++idx) {
      if (psi[idx] == cplx(0.0)) continue;
      std::size_t stride = dim;
      for (std::size_t k = 0; k < nb; ++k) {
        stride /= p;
        const std::size_t occ = (idx / stride) % p;
        if (occ + 1 >= p) continue;
        next[idx + stride] += c[k] * std::sqrt(static_cast<double>(occ + 1)) * psi[idx];
      }
    }
    psi = std::move(next);
  }
  double fact = 1.0;
  for (unsigned i = 2; i <= n; ++i) fact *= i;
  for (auto& v : psi) v /= std::sqrt(fact);
  return psi;
}

/// Matrix of b^dag on a p-level bin.
inline Mat creation(std::size_t p) {
  Mat b = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i + 1 < p; ++i) b(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(i)) = std::sqrt(double(i + 1));
  return b;
}

inline Mat number_op(std::size_t p) {
  Mat n = Mat::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < p; ++i) n(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = double(i);
  return n;
}

/// Composite Simpson rule on [a, b] with n (even) intervals.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Dense reference for the stroboscopic protocol. Site 0 is the emitter,
/// then one site per bin. Each step k applies U to (emitter, new bin, bin
/// fed back), with U indexed s * p^2 + new * p + fb.
class DenseFeedback {
 public:
  DenseFeedback(std::size_t n_bins, std::size_t p, std::vector<cplx> psi) : nb_(n_bins), p_(p), psi_(std::move(psi)) {}

  void apply(const Mat& u, std::size_t new_bin, std::size_t fb_bin) {
    const std::size_t sites = nb_ + 1;
    std::vector<std::size_t> stride(sites);
    std::size_t s = 1;
    for (std::size_t i = sites; i-- > 0;) {
      stride[i] = s;
      s *= (i == 0 ? 2 : p_);
    }
    const std::size_t ss = stride[0], sn = stride[1 + new_bin], sf = stride[1 + fb_bin];
    std::vector<cplx> out(psi_.size(), 0.0);
    for (std::size_t idx = 0; idx < psi_.size(); ++idx) {
      if (psi_[idx] == cplx(0.0)) continue;
      const std::size_t a = idx / ss % 2, b = idx / sn % p_, c = idx / sf % p_;
      const std::size_t base = idx - a * ss - b * sn - c * sf;
      const auto col = static_cast<Eigen::Index>(a * p_ * p_ + b * p_ + c);
      for (std::size_t a2 = 0; a2 < 2; ++a2)
        for (std::size_t b2 = 0; b2 < p_; ++b2)
          for (std::size_t c2 = 0; c2 < p_; ++c2) {
            const cplx w = u(static_cast<Eigen::Index>(a2 * p_ * p_ + b2 * p_ + c2), col);
            if (w != cplx(0.0)) out[base + a2 * ss + b2 * sn + c2 * sf] += w * psi_[idx];
          }
    }
    psi_ = std::move(out);
  }

  double excitation() const {
    double e = 0.0;
    const std::size_t half = psi_.size() / 2;
    for (std::size_t i = half; i < psi_.size(); ++i) e += std::norm(psi_[i]);
    return e;
  }

 private:
  std::size_t nb_, p_;
  std::vector<cplx> psi_;
};

/// Emitter (c_g, c_e) times a reservoir state given on n_bins bins.
inline std::vector<cplx> with_emitter(cplx c_g, cplx c_e, const std::vector<cplx>& bath) {
  std::vector<cplx> psi;
  for (auto c : {c_g, c_e})
    for (auto b : bath) psi.push_back(c * b);
  return psi;
}

inline std::vector<cplx> vacuum(std::size_t n_bins, std::size_t p) {
  std::vector<cplx> v(static_cast<std::size_t>(std::pow(double(p), double(n_bins))), 0.0);
  v[0] = 1.0;
  return v;
}

}  // namespace oracle
