#pragma once

#include "dash/common.hpp"

#include <map>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dash {

/// One slice X_k of an irregular tensor. Row i holds time step
/// `first_time_step + i`.
struct SliceMatrix {
    SliceId id;
    Matrix rows;
    std::int64_t first_time_step = 0;

    Index num_rows() const { return rows.rows(); }
    std::int64_t end_time_step() const { return first_time_step + rows.rows(); }
};

/// Ordered collection of slices sharing the column count J.
class IrregularTensor {
public:
    IrregularTensor() = default;
    explicit IrregularTensor(Index columns) : columns_(columns) {}

    /// Appends a slice. Throws InvalidArgument on a duplicate id, a column
    /// count mismatch or an empty slice.
    void add_slice(SliceMatrix slice);

    Index columns() const { return columns_; }
    std::size_t size() const { return slices_.size(); }
    bool empty() const { return slices_.empty(); }

    const SliceMatrix& operator[](std::size_t k) const { return slices_[k]; }
    SliceMatrix& operator[](std::size_t k) { return slices_[k]; }

    const std::vector<SliceMatrix>& slices() const { return slices_; }

    std::optional<std::size_t> find(const SliceId& id) const;
    bool contains(const SliceId& id) const { return index_.count(id) != 0; }

    Index total_rows() const;
    double squared_norm() const;

    /// First time step covered by any slice and one past the last.
    std::pair<std::int64_t, std::int64_t> time_span() const;

private:
    Index columns_ = 0;
    std::vector<SliceMatrix> slices_;
    std::unordered_map<SliceId, std::size_t> index_;
};

/// Rows for one slice inside an update batch.
struct SliceRows {
    SliceId id;
    Matrix rows;
    std::int64_t first_time_step = 0;
};

/// Data arriving at one update: new rows of slices that already exist and
/// whole new slices.
struct UpdateBatch {
    std::int64_t update_index = 0; // 1-based
    std::vector<SliceRows> existing_rows;
    std::vector<SliceRows> new_slices;
    std::pair<std::int64_t, std::int64_t> cycle_span{0, 0}; // inclusive

    bool empty() const { return existing_rows.empty() && new_slices.empty(); }
    Index total_new_rows() const;

    /// Shape checks against J. Throws InvalidArgument.
    void validate(Index columns) const;
};

/// Running per-column min/max per slice.
struct ColumnRange {
    RowVector minimum;
    RowVector maximum;
};

class ColumnStats {
public:
    bool contains(const SliceId& id) const { return ranges_.count(id) != 0; }
    const ColumnRange& at(const SliceId& id) const;
    const std::map<SliceId, ColumnRange>& ranges() const { return ranges_; }
    bool empty() const { return ranges_.empty(); }

    /// Widens the range of `id` so it covers every row of `rows`.
    void observe(const SliceId& id, const Matrix& rows);

    void set(const SliceId& id, ColumnRange range);

    static ColumnStats from_tensor(const IrregularTensor& tensor);

private:
    std::map<SliceId, ColumnRange> ranges_;
};

enum class StatsPolicy {
    /// Each batch is scaled with stats from strictly earlier data; stats then
    /// absorb the batch. A slice seen for the first time is scaled by its own
    /// first rows.
    CausalFrozen,
    /// Stats are fixed up front (usually from the full dataset) and never
    /// change.
    Global,
};

/// Min-max scales one block of rows: (x - min) / (max - min), with 0 for
/// degenerate columns.
Matrix apply_min_max(const Matrix& rows, const ColumnRange& range);

std::pair<UpdateBatch, ColumnStats> normalize_batch(const UpdateBatch& batch, ColumnStats stats,
                                                    StatsPolicy policy);

/// Initial-tensor counterpart of normalize_batch.
std::pair<IrregularTensor, ColumnStats> normalize_tensor(const IrregularTensor& tensor,
                                                         ColumnStats stats, StatsPolicy policy);

/// Splits a tensor along the time axis into an initial tensor plus update
/// batches of `update_cycle` time steps each.
struct ReplayPlan {
    IrregularTensor initial;
    std::vector<UpdateBatch> batches;
    std::int64_t init_boundary = 0; // first time step not in the initial tensor
};

ReplayPlan replay(const IrregularTensor& tensor, double init_fraction, std::int64_t update_cycle);

/// Appends the rows of a batch to an accumulated tensor (existing slices grow,
/// new slices are added). Used by baselines and bookkeeping.
void append_batch(IrregularTensor& tensor, const UpdateBatch& batch);

} // namespace dash
