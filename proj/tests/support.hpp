#pragma once

// Shared helpers for the unit suites: random matrix generators and
// finite-difference oracles, independent of the library implementation paths
// they are used to check.

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <functional>

#include "sngd/rng.hpp"

namespace test_support {

inline Eigen::MatrixXd random_matrix(int rows, int cols, sngd::Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

inline Eigen::VectorXd random_vector(int n, sngd::Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

// Well-conditioned SPD matrix A A^T + I.
inline Eigen::MatrixXd random_spd(int n, sngd::Rng& rng) {
  Eigen::MatrixXd a = random_matrix(n, n, rng);
  return a * a.transpose() + Eigen::MatrixXd::Identity(n, n);
}

inline Eigen::MatrixXd random_symmetric(int n, sngd::Rng& rng) {
  Eigen::MatrixXd a = random_matrix(n, n, rng);
  return 0.5 * (a + a.transpose());
}

// Symmetric matrix with a prescribed spectrum, Q diag(eigs) Q^T.
inline Eigen::MatrixXd matrix_with_spectrum(const Eigen::VectorXd& eigs, sngd::Rng& rng) {
  const int n = static_cast<int>(eigs.size());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, rng));
  Eigen::MatrixXd q = qr.householderQ();
  return q * eigs.asDiagonal() * q.transpose();
}

// Central-difference gradient of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Central-difference Jacobian of a vector function.
inline Eigen::MatrixXd fd_jacobian(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-5) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd jac(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const Eigen::VectorXd fp = f(xp);
    xp[i] = x[i] - h;
    const Eigen::VectorXd fm = f(xp);
    xp[i] = x[i];
    jac.col(i) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

inline double rel_frobenius(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace test_support
