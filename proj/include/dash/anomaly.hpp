#pragma once

#include "dash/common.hpp"

#include <map>
#include <optional>
#include <vector>

namespace dash {

inline constexpr int kDefaultWindow = 5;

/// Mean absolute deviation between X_new and U_new diag(s_k) V^T.
double slice_error(const Matrix& x_new, const Matrix& u_new, const RowVector& s_k, const Matrix& v);

struct SliceContribution {
    const Matrix* x_new;
    const Matrix* u_new;
    RowVector s_k;
};

/// Mean of slice_error over the slices that received rows in the batch.
/// Throws InvalidArgument on an empty list.
double tensor_error(const std::vector<SliceContribution>& contributions, const Matrix& v);

/// Trailing-window threshold: mean + population std of the up to `window`
/// values strictly before position t. Empty while fewer than two prior values
/// exist.
std::vector<std::optional<double>> moving_threshold(const std::vector<double>& series, int window);

/// Errors recorded while streaming.
struct ErrorSeries {
    struct SlicePoint {
        std::int64_t update_index;
        double error;
    };
    std::vector<std::int64_t> update_index;
    std::vector<double> tensor_error;
    std::map<SliceId, std::vector<SlicePoint>> slice_error;

    void add_update(std::int64_t update, double te) {
        update_index.push_back(update);
        tensor_error.push_back(te);
    }
    void add_slice(std::int64_t update, const SliceId& id, double se) {
        slice_error[id].push_back({update, se});
    }
};

enum class AnomalyLevel { Tensor, Slice };

struct AnomalyFlag {
    AnomalyLevel level = AnomalyLevel::Tensor;
    std::int64_t update_index = 0;
    SliceId slice; // empty for tensor-level flags
    double score = 0.0;
    double threshold = 0.0;
};

/// Flags every update whose tensor error, and every (update, slice) whose
/// slice error, exceeds its moving threshold. Tensor-level flags come first;
/// each level is sorted by score, highest first.
std::vector<AnomalyFlag> detect(const ErrorSeries& errors, int window = kDefaultWindow);

} // namespace dash
