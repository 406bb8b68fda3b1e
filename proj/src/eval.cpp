#include "dash/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace dash {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t require_slice(const StreamState& state, const SliceId& id) {
    auto k = state.find(id);
    if (!k) {
        throw InvalidArgument("slice '" + id + "' is not part of the stream");
    }
    return *k;
}

template <typename Visit>
void for_each_batch_slice(const UpdateBatch& batch, Visit&& visit) {
    for (const auto& e : batch.existing_rows) {
        visit(e);
    }
    for (const auto& e : batch.new_slices) {
        visit(e);
    }
}

} // namespace

std::vector<std::pair<SliceId, double>> batch_slice_errors(const StreamState& state,
                                                           const UpdateBatch& batch) {
    std::vector<std::pair<SliceId, double>> out;
    for_each_batch_slice(batch, [&](const SliceRows& e) {
        const std::size_t k = require_slice(state, e.id);
        const Matrix& u_new = state.u_blocks[k].back();
        if (u_new.rows() != e.rows.rows()) {
            throw InvalidArgument("latest U block of slice '" + e.id + "' does not match the batch");
        }
        out.emplace_back(e.id, slice_error(e.rows, u_new, state.w.row(static_cast<Index>(k)), state.v));
    });
    return out;
}

double local_error(const StreamState& state, const UpdateBatch& batch) {
    const auto errors = batch_slice_errors(state, batch);
    if (errors.empty()) {
        throw InvalidArgument("local_error: empty batch");
    }
    double sum = 0.0;
    for (const auto& [id, e] : errors) {
        sum += e;
    }
    return sum / static_cast<double>(errors.size());
}

double global_error(const StreamState& state, const IrregularTensor& history,
                    const UpdateBatch& batch) {
    double old_term = 0.0;
    for (const auto& s : history.slices()) {
        const std::size_t k = require_slice(state, s.id);
        const Index rows = s.num_rows();
        Matrix u_old(rows, state.rank());
        Index filled = 0;
        for (const auto& block : state.u_blocks[k]) {
            if (filled >= rows) {
                break;
            }
            const Index take = std::min(block.rows(), rows - filled);
            u_old.middleRows(filled, take) = block.topRows(take);
            filled += take;
        }
        if (filled != rows) {
            throw InvalidArgument("global_error: history of slice '" + s.id +
                                  "' is longer than its U factor");
        }
        old_term += slice_error(s.rows, u_old, state.w.row(static_cast<Index>(k)), state.v);
    }
    if (!history.empty()) {
        old_term /= static_cast<double>(history.size());
    }
    return old_term + local_error(state, batch);
}

namespace {

struct PreparedStream {
    IrregularTensor initial;
    std::vector<UpdateBatch> batches; // normalized
    std::int64_t init_boundary = 0;
    std::optional<ColumnStats> stats; // after the last batch
};

PreparedStream prepare(const IrregularTensor& tensor, double init_fraction, std::int64_t cycle,
                       Normalization normalization) {
    ReplayPlan plan = replay(tensor, init_fraction, cycle);
    PreparedStream out;
    out.init_boundary = plan.init_boundary;
    switch (normalization) {
    case Normalization::None:
        out.initial = std::move(plan.initial);
        out.batches = std::move(plan.batches);
        break;
    case Normalization::Causal: {
        auto [initial, stats] = normalize_tensor(plan.initial, {}, StatsPolicy::CausalFrozen);
        out.initial = std::move(initial);
        for (const auto& b : plan.batches) {
            auto [nb, next] = normalize_batch(b, std::move(stats), StatsPolicy::CausalFrozen);
            stats = std::move(next);
            out.batches.push_back(std::move(nb));
        }
        out.stats = std::move(stats);
        break;
    }
    case Normalization::Global: {
        const ColumnStats stats = ColumnStats::from_tensor(tensor);
        out.initial = normalize_tensor(plan.initial, stats, StatsPolicy::Global).first;
        for (const auto& b : plan.batches) {
            out.batches.push_back(normalize_batch(b, stats, StatsPolicy::Global).first);
        }
        out.stats = stats;
        break;
    }
    }
    return out;
}

AlsOptions als_options(const ExperimentConfig& config, int iters, std::uint64_t seed) {
    AlsOptions o;
    o.rank = config.rank;
    o.max_iters = iters;
    o.init = config.als_init;
    o.seed = seed;
    o.execution = config.execution;
    return o;
}

void validate(const ExperimentConfig& config) {
    if (config.rank < 1) {
        throw InvalidArgument("rank must be at least 1");
    }
    if (!(config.lambda > 0.0 && config.lambda <= 1.0)) {
        throw InvalidArgument("lambda must lie in (0, 1]");
    }
}

} // namespace

ExperimentResult run_experiment(const IrregularTensor& tensor, const ExperimentConfig& config) {
    validate(config);
    PreparedStream stream = prepare(tensor, config.init_fraction, config.update_cycle, config.normalization);

    AlsResult init = parafac2_als(stream.initial, als_options(config, config.als_iters, config.seed));
    ExperimentResult result;
    result.init_loss = init.loss_log;
    result.init_relative_error = init.relative_error;
    result.init_boundary = stream.init_boundary;
    result.stats = std::move(stream.stats);
    result.state = make_stream_state(stream.initial, init.factors, config.lambda);

    UpdateOptions update_options;
    update_options.passes = config.passes;
    update_options.execution = config.execution;

    // Refits run in a second pass so neither method's timing follows the
    // other's memory traffic.
    IrregularTensor refit_history = config.baseline ? stream.initial : IrregularTensor(tensor.columns());
    IrregularTensor history = std::move(stream.initial);
    for (const auto& batch : stream.batches) {
        UpdateReport report;
        report.update_index = batch.update_index;
        report.new_rows = batch.total_new_rows();
        report.new_slices = batch.new_slices.size();
        report.touched_slices = batch.existing_rows.size() + batch.new_slices.size();

        const auto start = Clock::now();
        try {
            dash_update(result.state, batch, update_options);
        } catch (const Error& e) {
            throw Error("update " + std::to_string(batch.update_index) + ": " + e.what());
        }
        report.dash_seconds = seconds_since(start);

        const auto slice_errors = batch_slice_errors(result.state, batch);
        double sum = 0.0;
        for (const auto& [id, e] : slice_errors) {
            sum += e;
            result.errors.add_slice(batch.update_index, id, e);
        }
        report.local_error = sum / static_cast<double>(slice_errors.size());
        result.errors.add_update(batch.update_index, report.local_error);
        if (config.track_global) {
            report.global_error = global_error(result.state, history, batch);
            append_batch(history, batch);
        }
        result.reports.push_back(report);
    }

    if (config.baseline) {
        for (std::size_t b = 0; b < stream.batches.size(); ++b) {
            const UpdateBatch& batch = stream.batches[b];
            UpdateReport& report = result.reports[b];
            append_batch(refit_history, batch);
            const auto refit_start = Clock::now();
            // The refit starts from a fresh random init every update.
            AlsOptions refit_options = als_options(
                config, config.baseline_iters, config.seed + static_cast<std::uint64_t>(batch.update_index));
            refit_options.init = AlsInit::Random;
            AlsResult refit = parafac2_als(refit_history, refit_options);
            report.baseline_seconds = seconds_since(refit_start);

            double bsum = 0.0;
            std::size_t count = 0;
            for_each_batch_slice(batch, [&](const SliceRows& e) {
                const std::size_t k = *refit_history.find(e.id);
                const Matrix& u = refit.factors.u[k];
                const Index n = e.rows.rows();
                bsum += slice_error(e.rows, u.bottomRows(n), refit.factors.w.row(static_cast<Index>(k)),
                                    refit.factors.v);
                ++count;
            });
            report.baseline_local_error = bsum / static_cast<double>(count);
        }
    }
    return result;
}

ScalingSummary run_scaling_bench(const IrregularTensor& tensor, const std::vector<std::int64_t>& cycles,
                                 const ExperimentConfig& config, int repeats) {
    validate(config);
    if (cycles.size() < 2) {
        throw InvalidArgument("scaling bench needs at least two update cycles");
    }
    repeats = std::max(repeats, 1);

    UpdateOptions update_options;
    update_options.passes = config.passes;
    update_options.execution = config.execution;

    ScalingSummary summary;
    std::optional<StreamState> initial_state;
    for (std::int64_t cycle : cycles) {
        PreparedStream stream = prepare(tensor, config.init_fraction, cycle, config.normalization);
        if (!initial_state) {
            AlsResult init = parafac2_als(stream.initial, als_options(config, config.als_iters, config.seed));
            initial_state = make_stream_state(stream.initial, init.factors, config.lambda);
        }
        CyclePoint point;
        point.cycle = cycle;
        point.batches = stream.batches.size();
        point.seconds.assign(stream.batches.size(), std::numeric_limits<double>::infinity());
        for (const auto& b : stream.batches) {
            point.rows.push_back(b.total_new_rows());
        }
        for (int rep = 0; rep < repeats; ++rep) {
            StreamState state = *initial_state;
            for (std::size_t i = 0; i < stream.batches.size(); ++i) {
                const auto start = Clock::now();
                dash_update(state, stream.batches[i], update_options);
                point.seconds[i] = std::min(point.seconds[i], seconds_since(start));
            }
        }
        point.median_seconds = median_of(point.seconds);
        std::vector<double> rows(point.rows.begin(), point.rows.end());
        point.median_rows = median_of(rows);
        summary.points.push_back(std::move(point));
    }

    std::vector<double> xs, ys;
    for (const auto& p : summary.points) {
        xs.push_back(p.median_rows);
        ys.push_back(p.median_seconds);
    }
    const LineFit fit = loglog_fit(xs, ys);
    summary.slope = fit.slope;
    summary.intercept = fit.intercept;
    return summary;
}

std::vector<SweepPoint> run_lambda_sweep(const IrregularTensor& tensor, const std::vector<double>& lambdas,
                                         const ExperimentConfig& config) {
    std::vector<SweepPoint> out;
    for (double lambda : lambdas) {
        ExperimentConfig c = config;
        c.lambda = lambda;
        c.track_global = true;
        c.baseline = false;
        const ExperimentResult r = run_experiment(tensor, c);
        std::vector<double> local, global;
        for (const auto& rep : r.reports) {
            local.push_back(rep.local_error);
            global.push_back(*rep.global_error);
        }
        out.push_back({lambda, mean_of(local), standard_error_of(local), mean_of(global),
                       standard_error_of(global)});
    }
    return out;
}

double mean_of(const std::vector<double>& x) {
    if (x.empty()) {
        return 0.0;
    }
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double stddev_of(const std::vector<double>& x) {
    if (x.size() < 2) {
        return 0.0;
    }
    const double m = mean_of(x);
    double ss = 0.0;
    for (double v : x) {
        ss += (v - m) * (v - m);
    }
    return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double standard_error_of(const std::vector<double>& x) {
    if (x.size() < 2) {
        return 0.0;
    }
    return stddev_of(x) / std::sqrt(static_cast<double>(x.size()));
}

double median_of(std::vector<double> x) {
    if (x.empty()) {
        throw InvalidArgument("median of an empty sample");
    }
    std::sort(x.begin(), x.end());
    const std::size_t n = x.size();
    return n % 2 == 1 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& x) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) {
            ++j;
        }
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = rank;
        }
        i = j + 1;
    }
    return ranks;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double mx = mean_of(x);
    const double my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        return 0.0;
    }
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InvalidArgument("spearman: need two samples of equal length >= 2");
    }
    return pearson(average_ranks(x), average_ranks(y));
}

LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw InvalidArgument("loglog_fit: need two samples of equal length >= 2");
    }
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
            throw InvalidArgument("loglog_fit: values must be positive");
        }
        lx.push_back(std::log(x[i]));
        ly.push_back(std::log(y[i]));
    }
    const double mx = mean_of(lx);
    const double my = mean_of(ly);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sxy += (lx[i] - mx) * (ly[i] - my);
        sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    if (sxx == 0.0) {
        throw InvalidArgument("loglog_fit: x values are all equal");
    }
    LineFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    return fit;
}

} // namespace dash
