#pragma once

#include <functional>

#include "gradmap/types.hpp"

namespace gradmap {

struct KrylovResult {
  VecR x;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

using MatVec = std::function<VecR(const VecR&)>;

// Restart-free BiCGSTAB for A x = b with matrix-free products.
// Converges when ||b - A x|| <= tol * ||b||.
KrylovResult bicgstab(const MatVec& apply, const VecR& b, double tol,
                      int max_iter);

// Dense fallback: materialises A column by column and LU-solves.
KrylovResult dense_solve(const MatVec& apply, const VecR& b);

}  // namespace gradmap
