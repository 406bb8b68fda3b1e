#pragma once

#include "dash/anomaly.hpp"
#include "dash/parafac2.hpp"
#include "dash/stream.hpp"
#include "dash/tensor.hpp"

#include <optional>
#include <vector>

namespace dash {

/// Tensor-level error of the newest batch under the factors produced by the
/// update that consumed it (last U block of each slice, current W and V).
double local_error(const StreamState& state, const UpdateBatch& batch);

/// Slice errors for the same quantity, in batch order.
std::vector<std::pair<SliceId, double>> batch_slice_errors(const StreamState& state,
                                                           const UpdateBatch& batch);

/// Two-term global error: mean slice MAD over the rows held before the batch
/// (`history` holds exactly those rows; reconstructed with the matching leading
/// rows of U_k and the current W, V) plus local_error of the batch.
double global_error(const StreamState& state, const IrregularTensor& history,
                    const UpdateBatch& batch);

enum class Normalization { None, Causal, Global };

struct ExperimentConfig {
    Index rank = kDefaultRank;
    double lambda = kDefaultForgetting;
    std::int64_t update_cycle = 20;
    double init_fraction = 0.2;
    int als_iters = 10;
    AlsInit als_init = AlsInit::Svd;
    std::uint64_t seed = 0;
    /// Static ALS refit on all data so far after every update, from a random
    /// init seeded with seed + update_index.
    bool baseline = false;
    int baseline_iters = 10;
    Normalization normalization = Normalization::Causal;
    int passes = 1;
    bool track_global = true;
    Execution execution;
};

struct UpdateReport {
    std::int64_t update_index = 0;
    double dash_seconds = 0.0;
    std::optional<double> baseline_seconds;
    std::optional<double> baseline_local_error;
    double local_error = 0.0;
    std::optional<double> global_error;
    Index new_rows = 0;       // sum of I_k,new
    std::size_t new_slices = 0; // L
    std::size_t touched_slices = 0;
};

struct ExperimentResult {
    std::vector<UpdateReport> reports;
    ErrorSeries errors;
    std::vector<double> init_loss;
    double init_relative_error = 0.0;
    std::int64_t init_boundary = 0;
    StreamState state;
    std::optional<ColumnStats> stats; // normalization stats after the last batch

};

/// Initialize on the first `init_fraction` of the time axis, then replay the
/// rest batch by batch. Wall times cover only the factor and helper math.
ExperimentResult run_experiment(const IrregularTensor& tensor, const ExperimentConfig& config);

struct CyclePoint {
    std::int64_t cycle = 0;
    std::size_t batches = 0;
    double median_seconds = 0.0;
    double median_rows = 0.0;
    std::vector<double> seconds;
    std::vector<Index> rows;
};

struct ScalingSummary {
    std::vector<CyclePoint> points;
    double slope = 0.0;
    double intercept = 0.0;
};

/// Times DASH updates for each update cycle (sharing one initialization) and
/// fits log(median time) against log(median new rows). `repeats` re-runs each
/// sweep and keeps the per-batch minimum, which filters scheduler noise.
ScalingSummary run_scaling_bench(const IrregularTensor& tensor, const std::vector<std::int64_t>& cycles,
                                 const ExperimentConfig& config, int repeats = 3);

struct SweepPoint {
    double lambda = 0.0;
    double mean_local = 0.0;
    double se_local = 0.0;
    double mean_global = 0.0;
    double se_global = 0.0;
};

std::vector<SweepPoint> run_lambda_sweep(const IrregularTensor& tensor, const std::vector<double>& lambdas,
                                         const ExperimentConfig& config);

// Small statistics helpers.
double mean_of(const std::vector<double>& x);
/// Sample standard deviation (n - 1).
double stddev_of(const std::vector<double>& x);
double standard_error_of(const std::vector<double>& x);
double median_of(std::vector<double> x);
/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
};
/// Least-squares line through (log x, log y).
LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y);

} // namespace dash
