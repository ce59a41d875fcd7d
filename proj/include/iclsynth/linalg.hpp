#pragma once

#include "iclsynth/tensor.hpp"

namespace icls {

struct EigenSym {
    Tensor values;   // (n), ascending
    Tensor vectors;  // (n x n), column j pairs with values[j]
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
EigenSym symmetric_eigen(const Tensor& a, int max_sweeps = 64);

// tr((s1 s2)^{1/2}) for symmetric PSD inputs, via sqrt(s1) s2 sqrt(s1).
// Eigenvalues below -1e-8 raise NumericError; small negatives clamp to zero.
double trace_sqrt_product(const Tensor& s1, const Tensor& s2);

// Cholesky solve of a symmetric positive-definite system; b is (n) or (n x m).
Tensor solve_spd(const Tensor& a, const Tensor& b);

}  // namespace icls
