#include "dash/linalg.hpp"

#include <cmath>

namespace dash {

namespace {

// Gram systems are usually tiny (R x R); this bound keeps them on the stack.
constexpr Index kSmall = 32;
using SmallMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kSmall, kSmall>;

// Cholesky solve of X A = B. A single row goes through the vector kernels,
// which are much lighter than the blocked ones at this size.
template <class Work>
Work llt_solve(const Eigen::LLT<Work>& llt, const Work& b) {
    if (b.rows() == 1) {
        using Column = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, Work::MaxRowsAtCompileTime, 1>;
        return llt.solve(Column(b.row(0).transpose())).transpose();
    }
    return llt.solve(b.transpose()).transpose();
}

// Ridged solve followed by iterative refinement against A. A step is kept
// only if it lowers the residual.
template <class Work>
Work refined_solve(const Eigen::LLT<Work>& llt, const Work& a, const Work& b) {
    Work x = llt_solve(llt, b);
    Work residual = b;
    residual.noalias() -= x.lazyProduct(a);
    double residual_norm = residual.norm();
    for (int step = 0; step < kRefinementSteps && residual_norm > 0.0; ++step) {
        Work next = x;
        next += llt_solve(llt, residual);
        Work next_residual = b;
        next_residual.noalias() -= next.lazyProduct(a);
        const double next_norm = next_residual.norm();
        if (!(next_norm < residual_norm)) {
            break;
        }
        x = next;
        residual = next_residual;
        residual_norm = next_norm;
    }
    return x;
}

template <class Work>
Matrix solve_with(const Matrix& a, const Matrix& b, const SliceId& context) {
    const Index n = a.rows();
    const double mean_diag = a.diagonal().mean();
    Work regularized = a;
    regularized.diagonal().array() += kRidgeEpsilon * mean_diag;

    // X A = B  <=>  A^T X^T = B^T, and A is symmetric.
    Eigen::LLT<Work> llt(regularized);
    if (!(mean_diag > 0.0) || llt.info() != Eigen::Success) {
        throw SolverError("singular " + std::to_string(n) + "x" + std::to_string(n) +
                              " system beyond ridge tolerance",
                          context);
    }
    const Work gram = a;
    if (b.rows() <= n) {
        return refined_solve<Work>(llt, gram, Work(b));
    }
    // More right-hand sides than unknowns: refine the inverse once and apply
    // it with a single product.
    const Work inverse = refined_solve<Work>(llt, gram, Work::Identity(n, n));
    return b * inverse;
}

} // namespace

Matrix solve_gram_right(const Matrix& a, const Matrix& b, const SliceId& context) {
    if (a.rows() != a.cols() || b.cols() != a.rows()) {
        throw InvalidArgument("solve_gram_right: shape mismatch");
    }
    if (!a.allFinite() || !b.allFinite()) {
        throw SolverError("non-finite values in normal equations", context);
    }
    Matrix x = a.rows() <= kSmall ? solve_with<SmallMatrix>(a, b, context) : solve_with<Matrix>(a, b, context);
    if (!x.allFinite()) {
        throw SolverError("solve produced non-finite values", context);
    }
    return x;
}

RowVector solve_gram_right(const Matrix& a, const RowVector& b, const SliceId& context) {
    return solve_gram_right(a, Matrix(b), context).row(0);
}

Matrix khatri_rao(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw InvalidArgument("khatri_rao: column counts differ");
    }
    Matrix out(a.rows() * b.rows(), a.cols());
    for (Index r = 0; r < a.cols(); ++r) {
        for (Index j = 0; j < a.rows(); ++j) {
            out.col(r).segment(j * b.rows(), b.rows()) = a(j, r) * b.col(r);
        }
    }
    return out;
}

Matrix symmetrized(const Matrix& m) {
    return 0.5 * (m + m.transpose());
}

} // namespace dash
