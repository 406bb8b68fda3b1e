#include "dash/parafac2.hpp"

#include "dash/linalg.hpp"
#include "parallel.hpp"

#include <cmath>
#include <random>

namespace dash {

void FactorSet::validate() const {
    const Index r = v.cols();
    if (ids.size() != u.size()) {
        throw InvalidArgument("factor set has " + std::to_string(ids.size()) + " ids for " +
                              std::to_string(u.size()) + " U blocks");
    }
    if (w.rows() != static_cast<Index>(u.size()) || w.cols() != r) {
        throw InvalidArgument("W must be K x R");
    }
    for (std::size_t k = 0; k < u.size(); ++k) {
        if (u[k].cols() != r) {
            throw InvalidArgument("U block of slice '" + ids[k] + "' has wrong rank");
        }
    }
}

Matrix reconstruct(const FactorSet& factors, std::size_t k) {
    if (k >= factors.u.size()) {
        throw InvalidArgument("reconstruct: slice index out of range");
    }
    const Index k_row = static_cast<Index>(k);
    return (factors.u[k] * factors.w.row(k_row).asDiagonal()) * factors.v.transpose();
}

double parafac2_loss(const IrregularTensor& tensor, const FactorSet& factors) {
    double loss = 0.0;
    for (std::size_t k = 0; k < tensor.size(); ++k) {
        loss += (tensor[k].rows - reconstruct(factors, k)).squaredNorm();
    }
    return loss;
}

namespace {

Matrix random_uniform(Index rows, Index cols, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix m(rows, cols);
    // Fill column by column so the draw order is fixed.
    for (Index c = 0; c < cols; ++c) {
        for (Index r = 0; r < rows; ++r) {
            m(r, c) = unit(rng);
        }
    }
    return m;
}

// Closest column-orthonormal matrix to `m` in Frobenius norm (polar factor).
Matrix polar_factor(const Matrix& m, const SliceId& id) {
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Matrix q = svd.matrixU() * svd.matrixV().transpose();
    if (!q.allFinite()) {
        throw SolverError("SVD failed while fitting Q_k", id);
    }
    return q;
}

// Top-`rank` eigenvectors of sum_k X_k^T X_k, largest first.
Matrix leading_eigenvectors(const IrregularTensor& tensor, Index rank) {
    Matrix cross = Matrix::Zero(tensor.columns(), tensor.columns());
    for (const auto& s : tensor.slices()) {
        cross.selfadjointView<Eigen::Lower>().rankUpdate(s.rows.transpose());
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cross.selfadjointView<Eigen::Lower>());
    if (eig.info() != Eigen::Success) {
        throw SolverError("eigendecomposition of sum X_k^T X_k failed");
    }
    // Eigenvalues come in ascending order.
    return eig.eigenvectors().rightCols(rank).rowwise().reverse();
}

} // namespace

AlsResult parafac2_als(const IrregularTensor& tensor, const AlsOptions& options) {
    const Index rank = options.rank;
    const std::size_t n_slices = tensor.size();
    if (n_slices == 0) {
        throw InvalidArgument("parafac2_als: empty tensor");
    }
    if (rank < 1 || options.max_iters < 1) {
        throw InvalidArgument("parafac2_als: rank and iteration count must be positive");
    }
    Index min_rows = tensor[0].num_rows();
    for (const auto& s : tensor.slices()) {
        min_rows = std::min(min_rows, s.num_rows());
        if (!s.rows.allFinite()) {
            throw SolverError("slice contains non-finite values", s.id);
        }
    }
    if (rank > tensor.columns() || rank > min_rows) {
        throw InvalidArgument("parafac2_als: rank " + std::to_string(rank) +
                              " exceeds min(J, min I_k) = " +
                              std::to_string(std::min(tensor.columns(), min_rows)));
    }

    const Index cols = tensor.columns();
    Matrix v, h;
    if (options.init == AlsInit::Random) {
        std::mt19937_64 rng(options.seed);
        v = random_uniform(cols, rank, rng);
        h = random_uniform(rank, rank, rng);
    } else {
        v = leading_eigenvectors(tensor, rank);
        h = Matrix::Identity(rank, rank);
    }
    Matrix w = Matrix::Ones(static_cast<Index>(n_slices), rank);

    std::vector<Matrix> q(n_slices);
    std::vector<Matrix> y(n_slices); // Q_k^T X_k, R x J
    std::vector<double> slice_loss(n_slices, 0.0);
    const Execution& exec = options.execution;

    AlsResult result;
    const double norm_x = tensor.squared_norm();
    double previous = 0.0;
    double data_norm = 0.0;
    for (const auto& slice : tensor.slices()) {
        data_norm += slice.rows.squaredNorm();
    }

    for (int iter = 0; iter < options.max_iters; ++iter) {
        detail::for_each_index(n_slices, exec, [&](std::size_t k) {
            const Matrix& x = tensor[k].rows;
            const RowVector s_k = w.row(static_cast<Index>(k));
            const Matrix target = x * (v * s_k.asDiagonal()) * h.transpose();
            q[k] = polar_factor(target, tensor[k].id);
            y[k] = q[k].transpose() * x;
        });

        // One CP-ALS sweep on Y(r, j, k) ~ H diag(W(k,:)) V^T.
        {
            Matrix mttkrp = Matrix::Zero(rank, rank);
            detail::accumulate_over(n_slices, exec, mttkrp, [&](std::size_t k, Matrix& acc) {
                acc.noalias() += y[k] * (v * w.row(static_cast<Index>(k)).asDiagonal());
            });
            const Matrix gram = (v.transpose() * v).cwiseProduct(w.transpose() * w);
            h = solve_gram_right(gram, mttkrp);
        }
        {
            Matrix mttkrp = Matrix::Zero(cols, rank);
            detail::accumulate_over(n_slices, exec, mttkrp, [&](std::size_t k, Matrix& acc) {
                acc.noalias() += y[k].transpose() * (h * w.row(static_cast<Index>(k)).asDiagonal());
            });
            const Matrix gram = (h.transpose() * h).cwiseProduct(w.transpose() * w);
            v = solve_gram_right(gram, mttkrp);
        }
        {
            const Matrix gram = (h.transpose() * h).cwiseProduct(v.transpose() * v);
            detail::for_each_index(n_slices, exec, [&](std::size_t k) {
                const RowVector rhs = (h.transpose() * y[k] * v).diagonal().transpose();
                w.row(static_cast<Index>(k)) = solve_gram_right(gram, rhs, tensor[k].id);
            });
        }

        detail::for_each_index(n_slices, exec, [&](std::size_t k) {
            const Matrix u = q[k] * h;
            slice_loss[k] = (tensor[k].rows -
                             (u * w.row(static_cast<Index>(k)).asDiagonal()) * v.transpose())
                                .squaredNorm();
        });
        double loss = 0.0;
        for (double l : slice_loss) {
            loss += l;
        }
        result.loss_log.push_back(loss);

        if (iter > 0) {
            const double change = std::abs(previous - loss) / std::max(previous, 1e-300);
            if (change < options.tolerance) {
                break;
            }
        }
        // An exact fit ends at rounding noise, where the relative change jitters.
        if (loss <= kExactFit * data_norm) {
            break;
        }
        previous = loss;
    }

    result.factors.ids.reserve(n_slices);
    result.factors.u.reserve(n_slices);
    for (std::size_t k = 0; k < n_slices; ++k) {
        result.factors.ids.push_back(tensor[k].id);
        result.factors.u.push_back(q[k] * h);
    }
    result.factors.w = std::move(w);
    result.factors.v = std::move(v);
    result.q = std::move(q);
    result.h = std::move(h);
    result.relative_error =
        norm_x > 0.0 ? std::sqrt(result.loss_log.back() / norm_x) : std::sqrt(result.loss_log.back());
    return result;
}

} // namespace dash
