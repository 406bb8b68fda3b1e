#include "dash/anomaly.hpp"

#include <algorithm>
#include <cmath>

namespace dash {

double slice_error(const Matrix& x_new, const Matrix& u_new, const RowVector& s_k, const Matrix& v) {
    if (x_new.rows() < 1 || u_new.rows() != x_new.rows() || v.rows() != x_new.cols() ||
        u_new.cols() != v.cols() || s_k.size() != v.cols()) {
        throw InvalidArgument("slice_error: shape mismatch");
    }
    const Matrix residual = x_new - (u_new * s_k.asDiagonal()) * v.transpose();
    return residual.cwiseAbs().sum() / static_cast<double>(x_new.size());
}

double tensor_error(const std::vector<SliceContribution>& contributions, const Matrix& v) {
    if (contributions.empty()) {
        throw InvalidArgument("tensor_error: batch has no slices");
    }
    double sum = 0.0;
    for (const auto& c : contributions) {
        sum += slice_error(*c.x_new, *c.u_new, c.s_k, v);
    }
    return sum / static_cast<double>(contributions.size());
}

std::vector<std::optional<double>> moving_threshold(const std::vector<double>& series, int window) {
    if (window < 2) {
        throw InvalidArgument("moving_threshold: window must be at least 2");
    }
    std::vector<std::optional<double>> out(series.size());
    for (std::size_t t = 0; t < series.size(); ++t) {
        const std::size_t n = std::min<std::size_t>(t, static_cast<std::size_t>(window));
        if (n < 2) {
            continue;
        }
        double mean = 0.0;
        for (std::size_t i = t - n; i < t; ++i) {
            mean += series[i];
        }
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = t - n; i < t; ++i) {
            var += (series[i] - mean) * (series[i] - mean);
        }
        var /= static_cast<double>(n);
        out[t] = mean + std::sqrt(var);
    }
    return out;
}

std::vector<AnomalyFlag> detect(const ErrorSeries& errors, int window) {
    std::vector<AnomalyFlag> tensor_flags;
    const auto te_threshold = moving_threshold(errors.tensor_error, window);
    for (std::size_t t = 0; t < errors.tensor_error.size(); ++t) {
        if (te_threshold[t] && errors.tensor_error[t] > *te_threshold[t]) {
            tensor_flags.push_back({AnomalyLevel::Tensor, errors.update_index[t], {},
                                    errors.tensor_error[t], *te_threshold[t]});
        }
    }

    std::vector<AnomalyFlag> slice_flags;
    for (const auto& [id, points] : errors.slice_error) {
        std::vector<double> series;
        series.reserve(points.size());
        for (const auto& p : points) {
            series.push_back(p.error);
        }
        const auto threshold = moving_threshold(series, window);
        for (std::size_t t = 0; t < series.size(); ++t) {
            if (threshold[t] && series[t] > *threshold[t]) {
                slice_flags.push_back(
                    {AnomalyLevel::Slice, points[t].update_index, id, series[t], *threshold[t]});
            }
        }
    }

    auto by_score = [](const AnomalyFlag& a, const AnomalyFlag& b) {
        if (a.score != b.score) {
            return a.score > b.score;
        }
        if (a.update_index != b.update_index) {
            return a.update_index < b.update_index;
        }
        return a.slice < b.slice;
    };
    std::sort(tensor_flags.begin(), tensor_flags.end(), by_score);
    std::sort(slice_flags.begin(), slice_flags.end(), by_score);
    tensor_flags.insert(tensor_flags.end(), slice_flags.begin(), slice_flags.end());
    return tensor_flags;
}

} // namespace dash
