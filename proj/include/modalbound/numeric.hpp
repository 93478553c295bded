#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>
#include <utility>

#include "modalbound/error.hpp"
#include "modalbound/rng.hpp"

namespace modalbound {

// Relative cutoff under which eigenvalues/singular values are treated as
// zero throughout the library.
inline constexpr double kRankTol = 1e-10;

struct KahanSum {
  double sum = 0.0;
  double c = 0.0;

  void add(double x) {
    double y = x - c;
    double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }

  double value() const { return sum; }
};

inline double kahan_mean(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("mean of empty range");
  KahanSum s;
  for (double x : xs) s.add(x);
  return s.value() / static_cast<double>(xs.size());
}

// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
inline double sample_sd(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = kahan_mean(xs);
  KahanSum s;
  for (double x : xs) s.add((x - m) * (x - m));
  return std::sqrt(s.value() / static_cast<double>(xs.size() - 1));
}

struct PsdInverse {
  Eigen::MatrixXd inverse;
  int rank = 0;
  bool full_rank = false;
};

// Moore-Penrose pseudo-inverse of a symmetric PSD matrix via its
// eigendecomposition. Eigenvalues below rtol * max |eigenvalue| count as
// zero. The input is symmetrized first to shed floating-point asymmetry.
inline PsdInverse pinv_psd(const Eigen::MatrixXd& m, double rtol = kRankTol) {
  if (m.rows() != m.cols()) throw ConfigError("pinv_psd: matrix not square");
  Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success)
    throw Error("pinv_psd: eigendecomposition failed");
  const auto& vals = es.eigenvalues();
  double cutoff = rtol * std::max(vals.cwiseAbs().maxCoeff(), 0.0);
  Eigen::VectorXd inv_vals = Eigen::VectorXd::Zero(vals.size());
  int rank = 0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] > cutoff && vals[i] > 0.0) {
      inv_vals[i] = 1.0 / vals[i];
      ++rank;
    }
  }
  PsdInverse out;
  out.inverse =
      es.eigenvectors() * inv_vals.asDiagonal() * es.eigenvectors().transpose();
  out.rank = rank;
  out.full_rank = rank == m.rows();
  return out;
}

// Least-squares solution of (X^T X) w = X^T y through the PSD
// pseudo-inverse; returns the minimum-norm solution when X^T X is singular.
inline Eigen::VectorXd solve_normal_equations(const Eigen::MatrixXd& gram,
                                              const Eigen::VectorXd& rhs,
                                              double rtol = kRankTol) {
  return pinv_psd(gram, rtol).inverse * rhs;
}

// d x n matrix with orthonormal columns whose first column is v / ||v||.
// Remaining columns complete the direction to an orthonormal frame.
inline Eigen::MatrixXd orthonormal_completion(const Eigen::VectorXd& v,
                                              int n) {
  const auto d = v.size();
  if (n < 1 || n > d) throw ConfigError("orthonormal_completion: bad width");
  double norm = v.norm();
  if (norm < 1e-300) {
    return Eigen::MatrixXd::Identity(d, d).leftCols(n);
  }
  Eigen::MatrixXd col = v / norm;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(col);
  Eigen::MatrixXd q = qr.householderQ();
  if ((q.col(0) - col.col(0)).norm() > (q.col(0) + col.col(0)).norm()) {
    q.col(0) = -q.col(0);
  }
  return q.leftCols(n);
}

// Deterministic d x n Gaussian matrix orthonormalized by QR, with the sign
// convention that R's diagonal is nonnegative.
inline Eigen::MatrixXd random_orthonormal(int d, int n, StreamKey key) {
  if (n < 1 || n > d) throw ConfigError("random_orthonormal: need 1 <= n <= d");
  StreamRng rng(key);
  Eigen::MatrixXd g(d, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, n);
  Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  return q;
}

// Shortest-repr formatting that round-trips doubles exactly.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

// FNV-1a content digest, printed as 16 hex chars. Used to tie results to
// the exact inputs that produced them.
class Digest {
 public:
  Digest& feed(std::string_view s) {
    for (char c : s) {
      h_ ^= static_cast<unsigned char>(c);
      h_ *= 0x100000001B3ull;
    }
    return feed_sep();
  }

  Digest& feed(double v) { return feed_u64(std::bit_cast<std::uint64_t>(v)); }
  Digest& feed(std::uint64_t v) { return feed_u64(v); }
  Digest& feed(int v) { return feed_u64(static_cast<std::uint64_t>(v)); }

  Digest& feed(const Eigen::MatrixXd& m) {
    feed_u64(static_cast<std::uint64_t>(m.rows()));
    feed_u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) feed(m(i, j));
    return *this;
  }

  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h_));
    return std::string(buf);
  }

 private:
  Digest& feed_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h_ ^= (v >> (8 * i)) & 0xFFu;
      h_ *= 0x100000001B3ull;
    }
    return feed_sep();
  }

  Digest& feed_sep() {
    h_ ^= 0x1Fu;
    h_ *= 0x100000001B3ull;
    return *this;
  }

  std::uint64_t h_ = 0xCBF29CE484222325ull;
};

}  // namespace modalbound
