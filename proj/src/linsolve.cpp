#include "gradmap/linsolve.hpp"

#include <cmath>

namespace gradmap {

KrylovResult bicgstab(const MatVec& apply, const VecR& b, double tol,
                      int max_iter) {
  const Eigen::Index n = b.size();
  KrylovResult res;
  res.x = VecR::Zero(n);

  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  const double thresh = tol * bnorm;

  VecR r = b;  // x0 = 0
  VecR r0 = r;
  VecR p = VecR::Zero(n), v = VecR::Zero(n);
  double rho = 1.0, alpha = 1.0, omega = 1.0;

  for (int k = 0; k < max_iter; ++k) {
    const double rho_new = r0.dot(r);
    if (rho_new == 0.0 || !std::isfinite(rho_new)) break;
    if (k == 0) {
      p = r;
    } else {
      const double beta = (rho_new / rho) * (alpha / omega);
      p = r + beta * (p - omega * v);
    }
    rho = rho_new;
    v = apply(p);
    const double r0v = r0.dot(v);
    if (r0v == 0.0 || !std::isfinite(r0v)) break;
    alpha = rho / r0v;
    VecR s = r - alpha * v;
    if (s.norm() <= thresh) {
      res.x += alpha * p;
      res.converged = true;
      res.iterations = k + 1;
      res.residual = s.norm();
      return res;
    }
    VecR t = apply(s);
    const double tt = t.dot(t);
    if (tt == 0.0 || !std::isfinite(tt)) break;
    omega = t.dot(s) / tt;
    if (omega == 0.0 || !std::isfinite(omega)) break;
    res.x += alpha * p + omega * s;
    r = s - omega * t;
    res.iterations = k + 1;
    res.residual = r.norm();
    if (res.residual <= thresh) {
      res.converged = true;
      return res;
    }
  }
  return res;
}

KrylovResult dense_solve(const MatVec& apply, const VecR& b) {
  const Eigen::Index n = b.size();
  MatR a(n, n);
  VecR e = VecR::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    e(j) = 1.0;
    a.col(j) = apply(e);
    e(j) = 0.0;
  }
  KrylovResult res;
  res.x = a.partialPivLu().solve(b);
  res.residual = (b - a * res.x).norm();
  res.converged = res.x.allFinite();
  res.iterations = static_cast<int>(n);
  return res;
}

}  // namespace gradmap
