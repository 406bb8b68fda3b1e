#pragma once

#include "dash/tensor.hpp"

#include <vector>

namespace dash {

/// PARAFAC2 factors: X_k ~ U_k diag(W(k,:)) V^T.
///
/// S_k is never stored as a matrix; row k of W holds its diagonal.
struct FactorSet {
    std::vector<SliceId> ids;
    std::vector<Matrix> u; // u[k] is I_k x R
    Matrix w;              // K x R
    Matrix v;              // J x R

    Index rank() const { return v.cols(); }
    std::size_t size() const { return u.size(); }

    /// Throws InvalidArgument unless all shapes agree.
    void validate() const;
};

/// Starting point of the ALS.
///   Svd:    V = top-R eigenvectors of sum_k X_k^T X_k, H = I, W = ones.
///   Random: V and H uniform in [0, 1) from the seed, W = ones.
enum class AlsInit { Svd, Random };

inline constexpr double kExactFit = 1e-28;

struct AlsOptions {
    Index rank = 10;
    AlsInit init = AlsInit::Svd;
    int max_iters = 10;
    /// Stop once |loss_prev - loss| / loss_prev drops below this, or once the
    /// loss is below kExactFit times the squared norm of the data.
    double tolerance = 1e-8;
    std::uint64_t seed = 0;
    Execution execution;
};

struct AlsResult {
    FactorSet factors;
    std::vector<Matrix> q; // column-orthonormal I_k x R
    Matrix h;              // R x R, U_k = Q_k H
    std::vector<double> loss_log; // loss after each sweep
    double relative_error = 0.0;  // ||X - X_hat||_F / ||X||_F
};

/// Direct-fitting PARAFAC2-ALS: per sweep, Q_k from the polar factor of
/// X_k V S_k H^T, then one CP-ALS sweep over the R x J x K tensor Q_k^T X_k
/// updating H, V and W.
AlsResult parafac2_als(const IrregularTensor& tensor, const AlsOptions& options);

/// U_k diag(W(k,:)) V^T.
Matrix reconstruct(const FactorSet& factors, std::size_t k);

/// Sum over slices of ||X_k - U_k S_k V^T||_F^2.
double parafac2_loss(const IrregularTensor& tensor, const FactorSet& factors);

} // namespace dash
