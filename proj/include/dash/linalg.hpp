#pragma once

#include "dash/common.hpp"

namespace dash {

/// Relative ridge added to every Gram-type system: eps * mean(diag(A)) * I.
inline constexpr double kRidgeEpsilon = 1e-10;
/// Refinement steps against the unregularized A after the ridged solve.
inline constexpr int kRefinementSteps = 1;

/// Solves X * A = B for X, where A is a symmetric positive (semi)definite
/// R x R Gram-type matrix. A small relative ridge is added to A first; if the
/// regularized system is still not positive definite, SolverError is thrown
/// naming `context`. The ridged factor then drives kRefinementSteps of
/// iterative refinement, each kept only if it lowers the residual, so the
/// ridge bias shrinks from about eps * cond(A) to its square. When B has more rows than A,
/// the refined inverse of A is applied instead.
Matrix solve_gram_right(const Matrix& a, const Matrix& b, const SliceId& context = {});

/// Row-vector convenience wrapper of solve_gram_right.
RowVector solve_gram_right(const Matrix& a, const RowVector& b, const SliceId& context = {});

/// Khatri-Rao (column-wise Kronecker) product: column r is kron(A(:,r), B(:,r)).
/// With A = V (J x R) and B = U (I x R), row i + j*I matches vec(X)(i + j*I).
Matrix khatri_rao(const Matrix& a, const Matrix& b);

/// Returns (M + M^T) / 2.
Matrix symmetrized(const Matrix& m);

} // namespace dash
