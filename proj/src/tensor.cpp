#include "dash/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dash {

void IrregularTensor::add_slice(SliceMatrix slice) {
    if (slice.rows.rows() < 1) {
        throw InvalidArgument("slice '" + slice.id + "' has no rows");
    }
    if (slices_.empty() && columns_ == 0) {
        columns_ = slice.rows.cols();
    }
    if (slice.rows.cols() != columns_) {
        throw InvalidArgument("slice '" + slice.id + "' has " + std::to_string(slice.rows.cols()) +
                              " columns, expected " + std::to_string(columns_));
    }
    if (index_.count(slice.id)) {
        throw InvalidArgument("duplicate slice id '" + slice.id + "'");
    }
    index_.emplace(slice.id, slices_.size());
    slices_.push_back(std::move(slice));
}

std::optional<std::size_t> IrregularTensor::find(const SliceId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

Index IrregularTensor::total_rows() const {
    Index n = 0;
    for (const auto& s : slices_) {
        n += s.rows.rows();
    }
    return n;
}

double IrregularTensor::squared_norm() const {
    double n = 0.0;
    for (const auto& s : slices_) {
        n += s.rows.squaredNorm();
    }
    return n;
}

std::pair<std::int64_t, std::int64_t> IrregularTensor::time_span() const {
    if (slices_.empty()) {
        return {0, 0};
    }
    std::int64_t lo = std::numeric_limits<std::int64_t>::max();
    std::int64_t hi = std::numeric_limits<std::int64_t>::min();
    for (const auto& s : slices_) {
        lo = std::min(lo, s.first_time_step);
        hi = std::max(hi, s.end_time_step());
    }
    return {lo, hi};
}

Index UpdateBatch::total_new_rows() const {
    Index n = 0;
    for (const auto& e : existing_rows) {
        n += e.rows.rows();
    }
    for (const auto& e : new_slices) {
        n += e.rows.rows();
    }
    return n;
}

void UpdateBatch::validate(Index columns) const {
    if (empty()) {
        throw InvalidArgument("update batch " + std::to_string(update_index) + " is empty");
    }
    auto check = [&](const SliceRows& s) {
        if (s.rows.rows() < 1) {
            throw InvalidArgument("batch entry for slice '" + s.id + "' has no rows");
        }
        if (s.rows.cols() != columns) {
            throw InvalidArgument("batch entry for slice '" + s.id + "' has " +
                                  std::to_string(s.rows.cols()) + " columns, expected " +
                                  std::to_string(columns));
        }
    };
    std::vector<SliceId> ids;
    for (const auto& s : existing_rows) {
        check(s);
        ids.push_back(s.id);
    }
    for (const auto& s : new_slices) {
        check(s);
        ids.push_back(s.id);
    }
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw InvalidArgument("batch " + std::to_string(update_index) +
                              " lists a slice id more than once");
    }
}

const ColumnRange& ColumnStats::at(const SliceId& id) const {
    auto it = ranges_.find(id);
    if (it == ranges_.end()) {
        throw InvalidArgument("no column stats for slice '" + id + "'");
    }
    return it->second;
}

void ColumnStats::observe(const SliceId& id, const Matrix& rows) {
    RowVector lo = rows.colwise().minCoeff();
    RowVector hi = rows.colwise().maxCoeff();
    auto it = ranges_.find(id);
    if (it == ranges_.end()) {
        ranges_.emplace(id, ColumnRange{std::move(lo), std::move(hi)});
        return;
    }
    it->second.minimum = it->second.minimum.cwiseMin(lo);
    it->second.maximum = it->second.maximum.cwiseMax(hi);
}

void ColumnStats::set(const SliceId& id, ColumnRange range) {
    if (range.minimum.size() != range.maximum.size()) {
        throw InvalidArgument("column range size mismatch for slice '" + id + "'");
    }
    if ((range.maximum.array() < range.minimum.array()).any()) {
        throw InvalidArgument("column range with max < min for slice '" + id + "'");
    }
    ranges_[id] = std::move(range);
}

ColumnStats ColumnStats::from_tensor(const IrregularTensor& tensor) {
    ColumnStats stats;
    for (const auto& s : tensor.slices()) {
        stats.observe(s.id, s.rows);
    }
    return stats;
}

Matrix apply_min_max(const Matrix& rows, const ColumnRange& range) {
    if (range.minimum.size() != rows.cols()) {
        throw InvalidArgument("column range has " + std::to_string(range.minimum.size()) +
                              " entries for " + std::to_string(rows.cols()) + " columns");
    }
    Matrix out(rows.rows(), rows.cols());
    for (Index j = 0; j < rows.cols(); ++j) {
        const double span = range.maximum(j) - range.minimum(j);
        if (span > 0.0) {
            out.col(j) = (rows.col(j).array() - range.minimum(j)) / span;
        } else {
            out.col(j).setZero();
        }
    }
    return out;
}

namespace {

// Scales one block. Under the causal policy a slice without history is scaled
// by its own rows; in every case the block is scaled before it is absorbed.
Matrix scale_block(const SliceId& id, const Matrix& rows, const ColumnStats& stats,
                   StatsPolicy policy) {
    if (stats.contains(id)) {
        return apply_min_max(rows, stats.at(id));
    }
    if (policy == StatsPolicy::Global) {
        throw InvalidArgument("global column stats do not cover slice '" + id + "'");
    }
    ColumnStats own;
    own.observe(id, rows);
    return apply_min_max(rows, own.at(id));
}

} // namespace

std::pair<UpdateBatch, ColumnStats> normalize_batch(const UpdateBatch& batch, ColumnStats stats,
                                                    StatsPolicy policy) {
    UpdateBatch out = batch;
    for (auto& s : out.existing_rows) {
        s.rows = scale_block(s.id, s.rows, stats, policy);
    }
    for (auto& s : out.new_slices) {
        s.rows = scale_block(s.id, s.rows, stats, policy);
    }
    if (policy == StatsPolicy::CausalFrozen) {
        for (const auto& s : batch.existing_rows) {
            stats.observe(s.id, s.rows);
        }
        for (const auto& s : batch.new_slices) {
            stats.observe(s.id, s.rows);
        }
    }
    return {std::move(out), std::move(stats)};
}

std::pair<IrregularTensor, ColumnStats> normalize_tensor(const IrregularTensor& tensor,
                                                         ColumnStats stats, StatsPolicy policy) {
    IrregularTensor out(tensor.columns());
    for (const auto& s : tensor.slices()) {
        out.add_slice({s.id, scale_block(s.id, s.rows, stats, policy), s.first_time_step});
    }
    if (policy == StatsPolicy::CausalFrozen) {
        for (const auto& s : tensor.slices()) {
            stats.observe(s.id, s.rows);
        }
    }
    return {std::move(out), std::move(stats)};
}

ReplayPlan replay(const IrregularTensor& tensor, double init_fraction, std::int64_t update_cycle) {
    if (!(init_fraction > 0.0 && init_fraction < 1.0)) {
        throw InvalidArgument("init_fraction must lie in (0, 1)");
    }
    if (update_cycle < 1) {
        throw InvalidArgument("update_cycle must be at least 1");
    }
    if (tensor.empty()) {
        throw InvalidArgument("cannot replay an empty tensor");
    }

    const auto [start, end] = tensor.time_span();
    const std::int64_t duration = end - start;
    // Guard against 0.2 * 1000 landing a hair above 200.
    const auto init_steps = static_cast<std::int64_t>(
        std::ceil(init_fraction * static_cast<double>(duration) - 1e-9));

    ReplayPlan plan;
    plan.init_boundary = start + init_steps;
    plan.initial = IrregularTensor(tensor.columns());

    for (const auto& s : tensor.slices()) {
        if (s.first_time_step < plan.init_boundary) {
            const std::int64_t n = std::min<std::int64_t>(s.num_rows(),
                                                          plan.init_boundary - s.first_time_step);
            plan.initial.add_slice({s.id, s.rows.topRows(n), s.first_time_step});
        }
    }
    if (plan.initial.empty()) {
        throw InvalidArgument("initialization window [" + std::to_string(start) + ", " +
                              std::to_string(plan.init_boundary) + ") contains no slice data");
    }

    std::int64_t update_index = 0;
    for (std::int64_t lo = plan.init_boundary; lo < end; lo += update_cycle) {
        const std::int64_t hi = std::min(end, lo + update_cycle); // exclusive
        UpdateBatch batch;
        batch.cycle_span = {lo, hi - 1};
        for (const auto& s : tensor.slices()) {
            const std::int64_t from = std::max(lo, s.first_time_step);
            const std::int64_t to = std::min(hi, s.end_time_step());
            if (from >= to) {
                continue;
            }
            SliceRows rows{s.id, s.rows.middleRows(from - s.first_time_step, to - from), from};
            if (s.first_time_step >= lo) {
                batch.new_slices.push_back(std::move(rows));
            } else {
                batch.existing_rows.push_back(std::move(rows));
            }
        }
        // Windows where no slice is active carry nothing to update.
        if (batch.empty()) {
            continue;
        }
        batch.update_index = ++update_index;
        plan.batches.push_back(std::move(batch));
    }
    return plan;
}

void append_batch(IrregularTensor& tensor, const UpdateBatch& batch) {
    for (const auto& e : batch.existing_rows) {
        auto k = tensor.find(e.id);
        if (!k) {
            throw InvalidArgument("batch " + std::to_string(batch.update_index) +
                                  " extends unknown slice '" + e.id + "'");
        }
        auto& slice = tensor[*k];
        Matrix grown(slice.rows.rows() + e.rows.rows(), slice.rows.cols());
        grown << slice.rows, e.rows;
        slice.rows = std::move(grown);
    }
    for (const auto& e : batch.new_slices) {
        tensor.add_slice({e.id, e.rows, e.first_time_step});
    }
}

} // namespace dash
