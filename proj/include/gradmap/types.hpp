#pragma once

#include <complex>
#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace gradmap {

using Complex = std::complex<double>;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;
using VecR = Eigen::VectorXd;
using MatR = Eigen::MatrixXd;
using SpMatR = Eigen::SparseMatrix<double>;

// [x]^+ with subgradient 0 at x = 0.
inline double pos(double x) { return x > 0.0 ? x : 0.0; }
inline double pos_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

// clip with inside-derivative (1) at the boundary.
inline double clip(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}
inline double clip_grad(double x, double lo, double hi) {
  return (x >= lo && x <= hi) ? 1.0 : 0.0;
}

// sign with subgradient 0 at 0 (|x| kink convention).
inline double sgn0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Complex <-> stacked real-imaginary layout [Re; Im].
inline VecR stack_ri(const VecC& z) {
  VecR r(2 * z.size());
  r.head(z.size()) = z.real();
  r.tail(z.size()) = z.imag();
  return r;
}
inline VecC unstack_ri(const VecR& r) {
  const Eigen::Index n = r.size() / 2;
  VecC z(n);
  z.real() = r.head(n);
  z.imag() = r.tail(n);
  return z;
}

}  // namespace gradmap
