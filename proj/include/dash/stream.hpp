#pragma once

#include "dash/parafac2.hpp"
#include "dash/tensor.hpp"

#include <optional>
#include <unordered_map>
#include <vector>

namespace dash {

inline constexpr double kDefaultForgetting = 0.7;
inline constexpr Index kDefaultRank = 10;

/// Frozen, forgetting-weighted summaries of everything ingested so far.
///
///   c_k = sum over data of slice k of vec(X)^T (V kr U)     (length R)
///   D_k = sum of U^T U                                       (R x R)
///   F   = sum over all slices of X^T U S_k                   (J x R)
///   G   = sum over all slices of S_k U^T U S_k               (R x R)
///
/// Each term is multiplied by lambda once per later update that touches it:
/// c_k and D_k decay only when slice k receives rows, F and G decay at every
/// update.
struct HelperState {
    std::vector<Vector> c; // indexed like StreamState::ids
    std::vector<Matrix> d;
    Matrix f;
    Matrix g;
    double lambda = kDefaultForgetting;
};

/// Factors and helpers of a running stream.
///
/// U_k is kept as the list of blocks appended at each update, so appending is
/// O(new rows) and the old blocks stay available for global-error reporting.
struct StreamState {
    std::vector<SliceId> ids;
    std::vector<std::vector<Matrix>> u_blocks;
    Matrix w; // one row per slice seen
    Matrix v; // J x R
    HelperState helpers;
    std::int64_t update_index = 0;

    Index rank() const { return v.cols(); }
    Index columns() const { return v.rows(); }
    std::size_t size() const { return ids.size(); }

    std::optional<std::size_t> find(const SliceId& id) const;
    Index slice_rows(std::size_t k) const;
    /// Vertical concatenation of the U blocks of slice k.
    Matrix u(std::size_t k) const;
    /// Snapshot as a plain FactorSet with concatenated U_k.
    FactorSet factors() const;

    /// Rebuilds the id lookup table; call after editing `ids` directly.
    void reindex();
    /// Throws InvalidArgument unless shapes and helper sizes agree.
    void validate() const;

private:
    std::unordered_map<SliceId, std::size_t> index_;
};

/// Helper matrices for an initial tensor and the factors fitted on it.
HelperState init_helpers(const IrregularTensor& tensor, const FactorSet& factors, double lambda);

/// Builds a stream from static factors. U_k becomes the first block of each
/// slice.
StreamState make_stream_state(const IrregularTensor& tensor, const FactorSet& factors,
                              double lambda);

/// New row factors: solves U_new (S_k V^T V S_k) = X_new V S_k. When no weight
/// is much smaller than the largest this is X_new V (V^T V)^{-1} S_k^{-1};
/// otherwise the ridged per-slice system is solved.
Matrix update_u_new(const Matrix& x_new, const Matrix& v, const RowVector& s_k,
                    const SliceId& slice = {});

/// vec(X)^T (V kr U) as a row vector, i.e. sum_{i,j} X(i,j) U(i,r) V(j,r).
RowVector khatri_rao_projection(const Matrix& x, const Matrix& u, const Matrix& v);

struct CdUpdate {
    Vector c;
    Matrix d;
};

/// c_new = lambda c_old + vec(X_new)^T (V kr U_new), D_new = lambda D_old + U_new^T U_new.
/// A slice with no helpers yet uses zero priors.
CdUpdate accumulate_cd(const Vector* c_old, const Matrix* d_old, double lambda,
                       const Matrix& x_new, const Matrix& u_new, const Matrix& v);

/// Same, reading the priors for `slice` from `helpers` when present.
CdUpdate accumulate_cd(const HelperState& helpers, std::optional<std::size_t> slice,
                       const Matrix& x_new, const Matrix& u_new, const Matrix& v);

/// Solves w (V^T V * D_new) = c_new^T.
RowVector update_s_row(const Vector& c_new, const Matrix& d_new, const Matrix& v,
                       const SliceId& slice = {});

/// One slice's share of the F/G increments.
struct BatchContribution {
    const Matrix* x_new;
    const Matrix* u_new;
    RowVector s_k;
};

struct FgUpdate {
    Matrix f;
    Matrix g;
};

/// F_new = lambda F_old + sum X_new^T U_new S_k, G_new = lambda G_old + sum S_k U_new^T U_new S_k.
FgUpdate accumulate_fg(const Matrix& f_old, const Matrix& g_old, double lambda,
                       const std::vector<BatchContribution>& contributions);

/// Solves V G_new = F_new.
Matrix update_v(const Matrix& f_new, const Matrix& g_new);

struct UpdateOptions {
    /// Passes of the U/S/V sweep over the same batch. Each pass restarts from
    /// the helpers held before the batch.
    int passes = 1;
    Execution execution;
};

/// What one update produced for one slice. `x_new` points into the batch.
struct SliceUpdate {
    std::size_t slice; // index into StreamState::ids
    const Matrix* x_new;
    Matrix u_new;
    bool is_new = false;
    RowVector s_used; // S_k when U_new was solved
    Vector c_new;
    Matrix d_new;
};

struct UpdateResult {
    std::vector<SliceUpdate> slices; // batch order: existing rows, then new slices
    Matrix v_before;
    Matrix v_used; // V during steps 1 and 2 of the last pass
    Matrix f_new;
    Matrix g_new;
};

/// Consumes one (already normalized) batch. Existing slices gain a U block,
/// new slices gain a U block, a W row and helper entries, V is refreshed and
/// update_index advances. On error the state is left unchanged.
UpdateResult dash_update(StreamState& state, const UpdateBatch& batch,
                         const UpdateOptions& options = {});

} // namespace dash
