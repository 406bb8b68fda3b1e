// Runs the ten acceptance checks and prints one PASS/FAIL line per check.
// Exit status is the number of failed checks.

#include "support/oracles.hpp"

#include "dash/anomaly.hpp"
#include "dash/eval.hpp"
#include "dash/io.hpp"
#include "dash/stream.hpp"
#include "dash/synth.hpp"

#include <chrono>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace dash;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Index min_rows(const IrregularTensor& t) {
    Index m = t[0].num_rows();
    for (const auto& s : t.slices()) {
        m = std::min(m, s.num_rows());
    }
    return m;
}

FactorSet fit(const IrregularTensor& t, Index rank, std::uint64_t seed, int iters = 10) {
    AlsOptions o;
    o.rank = rank;
    o.seed = seed;
    o.max_iters = iters;
    return parafac2_als(t, o).factors;
}

double rel(const Matrix& residual, const Matrix& reference) { return oracle::relative(residual, reference); }

Outcome residuals() {
    oracle::Gen gen(1001);
    double worst_u = 0.0, worst_w = 0.0, worst_v = 0.0;
    std::size_t updates = 0;
    for (int run = 0; run < 50; ++run) {
        auto stream = oracle::random_stream(gen, 30, 20, 5, gen.integer(10, 15));
        const Index r = std::min<Index>(gen.integer(1, 5), std::min(stream.initial.columns(), min_rows(stream.initial)));
        StreamState state = make_stream_state(stream.initial, fit(stream.initial, r, run), gen.uniform(0.1, 1.0));
        for (const auto& b : stream.batches) {
            const UpdateResult res = dash_update(state, b);
            const Matrix gram = res.v_used.transpose() * res.v_used;
            for (const auto& s : res.slices) {
                const Matrix rhs = *s.x_new * res.v_used * s.s_used.asDiagonal();
                const Matrix lhs = gram.cwiseProduct(s.s_used.transpose() * s.s_used);
                worst_u = std::max(worst_u, rel(s.u_new * lhs - rhs, rhs));
                const RowVector w = state.w.row(static_cast<Index>(s.slice));
                const Matrix c = s.c_new.transpose();
                worst_w = std::max(worst_w, rel(w * gram.cwiseProduct(s.d_new) - c, c));
            }
            worst_v = std::max(worst_v, rel(state.v * res.g_new - res.f_new, res.f_new));
            ++updates;
        }
    }
    const double worst = std::max({worst_u, worst_w, worst_v});
    return {worst <= 1e-8, fmt("%zu updates, worst relative residual U %.2e, W %.2e, V %.2e (bound 1e-8)", updates,
                               worst_u, worst_w, worst_v)};
}

Outcome ledger_exactness() {
    oracle::Gen gen(1002);
    double worst = 0.0;
    for (int run = 0; run < 20; ++run) {
        auto stream = oracle::random_stream(gen, 30, 20, 5, gen.integer(10, 15));
        const Index r = std::min<Index>(gen.integer(1, 5), std::min(stream.initial.columns(), min_rows(stream.initial)));
        const double lambda = gen.uniform(0.1, 1.0);
        const FactorSet f = fit(stream.initial, r, run);
        StreamState state = make_stream_state(stream.initial, f, lambda);
        oracle::Ledger ledger(lambda);
        ledger.record_initial(stream.initial, f);
        for (const auto& b : stream.batches) {
            const UpdateResult res = dash_update(state, b);
            std::vector<oracle::Ledger::Item> items;
            for (const auto& s : res.slices) {
                items.push_back({state.ids[s.slice], *s.x_new, s.u_new, state.w.row(static_cast<Index>(s.slice))});
            }
            ledger.record_update(items, res.v_used);
            for (std::size_t k = 0; k < state.size(); ++k) {
                worst = std::max(worst, (state.helpers.c[k] - ledger.c(state.ids[k])).cwiseAbs().maxCoeff());
                worst = std::max(worst, (state.helpers.d[k] - ledger.d(state.ids[k])).cwiseAbs().maxCoeff());
            }
            worst = std::max(worst, (state.helpers.f - ledger.f()).cwiseAbs().maxCoeff());
            worst = std::max(worst, (state.helpers.g - ledger.g()).cwiseAbs().maxCoeff());
        }
    }
    return {worst <= 1e-10, fmt("20 runs, worst absolute helper deviation %.2e (bound 1e-10)", worst)};
}

Outcome least_squares() {
    oracle::Gen gen(1003);
    double worst_u = 0.0, worst_w = 0.0;
    for (int n = 0; n < 200; ++n) {
        const Index r = gen.integer(1, 5);
        const Index j = gen.integer(static_cast<int>(r), 20);
        const Index rows = gen.integer(static_cast<int>(r), 30);
        const Matrix v = gen.matrix(j, r);
        const RowVector s = gen.positive_row(r);
        const Matrix x = gen.matrix(rows, j);
        const Matrix u = update_u_new(x, v, s);
        const Matrix u_ref = oracle::u_least_squares(x, v, s);
        worst_u = std::max(worst_u, rel(u - u_ref, u_ref));

        // From scratch with lambda 1 and one batch: c = vec(X)^T (V kr U), D = U^T U.
        const Matrix uu = gen.matrix(rows, r);
        const CdUpdate cd = accumulate_cd(nullptr, nullptr, 1.0, x, uu, v);
        const RowVector w = update_s_row(cd.c, cd.d, v);
        const RowVector w_ref = oracle::w_least_squares(x, uu, v);
        worst_w = std::max(worst_w, rel(w - w_ref, w_ref));
    }
    const double worst = std::max(worst_u, worst_w);
    return {worst <= 1e-8,
            fmt("200 instances, worst relative gap U %.2e, W %.2e (bound 1e-8)", worst_u, worst_w)};
}

Outcome planted_recovery() {
    SynthParams p;
    p.slices = 20;
    p.columns = 15;
    p.rank = 3;
    p.duration = 120;
    p.structured_steps = 60;
    const IrregularTensor t = synthesize(p, 1004);
    const ReplayPlan plan = replay(t, 0.5, 6);
    AlsOptions o;
    o.rank = 3;
    o.max_iters = 3000;
    const AlsResult init = parafac2_als(plan.initial, o);
    StreamState state = make_stream_state(plan.initial, init.factors, 1.0);
    double worst = 0.0;
    for (const auto& b : plan.batches) {
        dash_update(state, b);
        worst = std::max(worst, local_error(state, b));
    }
    const bool pass = init.relative_error < 1e-6 && worst < 1e-6 && plan.batches.size() == 10;
    return {pass, fmt("init relative error %.2e after %zu sweeps, worst local error %.2e over %zu batches",
                      init.relative_error, init.loss_log.size(), worst, plan.batches.size())};
}

Outcome linear_scaling() {
    SynthParams p;
    p.slices = 200;
    p.columns = 30;
    p.rank = 10;
    p.duration = 1000;
    p.noise = 0.01;
    const IrregularTensor t = synthesize(p, 1005);
    ExperimentConfig c;
    c.rank = 10;
    c.normalization = Normalization::None;
    c.execution.deterministic = true;
    c.track_global = false;
    const ScalingSummary s = run_scaling_bench(t, {20, 40, 60, 80, 100}, c, 3);
    std::string detail = fmt("slope %.3f (target 1 +/- 0.25);", s.slope);
    for (const auto& pt : s.points) {
        detail += fmt(" %lld:%.0f rows/%.2fms", static_cast<long long>(pt.cycle), pt.median_rows,
                      pt.median_seconds * 1e3);
    }
    return {std::abs(s.slope - 1.0) <= 0.25, detail};
}

Outcome growth() {
    SynthParams p;
    p.slices = 50;
    p.columns = 20;
    p.rank = 5;
    p.duration = 1000;
    p.noise = 0.01;
    const IrregularTensor t = synthesize(p, 1006);
    ExperimentConfig c;
    c.rank = 5;
    c.update_cycle = 20;
    c.baseline = true;
    c.track_global = false;
    c.execution.deterministic = true;
    const ExperimentResult r = run_experiment(t, c);
    std::vector<double> index, dash_t, refit_t;
    for (const auto& rep : r.reports) {
        index.push_back(static_cast<double>(rep.update_index));
        dash_t.push_back(rep.dash_seconds);
        refit_t.push_back(*rep.baseline_seconds);
    }
    const double rho_dash = spearman(index, dash_t);
    const double rho_refit = spearman(index, refit_t);
    return {r.reports.size() == 40 && rho_dash < 0.5 && rho_refit > 0.9,
            fmt("%zu updates, Spearman(time, index): DASH %.3f (< 0.5), refit %.3f (> 0.9); "
                "median times %.3fms vs %.3fms",
                r.reports.size(), rho_dash, rho_refit, median_of(dash_t) * 1e3, median_of(refit_t) * 1e3)};
}

Outcome forgetting_tradeoff() {
    SynthParams p;
    p.slices = 30;
    p.columns = 12;
    p.rank = 3;
    p.duration = 600;
    p.noise = 0.01;
    p.drift = 0.004;
    const IrregularTensor t = synthesize(p, 1007);
    ExperimentConfig c;
    c.rank = 3;
    c.update_cycle = 10;
    c.execution.deterministic = true;
    const auto points = run_lambda_sweep(t, {0.1, 0.3, 0.5, 0.7, 0.9}, c);
    int local_breaks = 0, global_breaks = 0;
    bool within_se = true;
    std::string detail;
    for (std::size_t i = 0; i < points.size(); ++i) {
        detail += fmt(" l=%.1f local %.4g global %.4g;", points[i].lambda, points[i].mean_local,
                      points[i].mean_global);
        if (i == 0) {
            continue;
        }
        const auto& a = points[i - 1];
        const auto& b = points[i];
        if (b.mean_local < a.mean_local) {
            ++local_breaks;
            within_se = within_se && a.mean_local - b.mean_local < std::max(a.se_local, b.se_local);
        }
        if (b.mean_global > a.mean_global) {
            ++global_breaks;
            within_se = within_se && b.mean_global - a.mean_global < std::max(a.se_global, b.se_global);
        }
    }
    const bool pass = local_breaks <= 1 && global_breaks <= 1 && within_se;
    return {pass, fmt("violations local %d, global %d;", local_breaks, global_breaks) + detail};
}

Outcome anomaly_detection() {
    constexpr double sigma = 0.05;
    SynthParams p;
    p.slices = 20;
    p.columns = 12;
    p.rank = 3;
    p.duration = 500;
    p.noise = sigma;

    ExperimentConfig c;
    c.rank = 3;
    c.update_cycle = 10;
    c.track_global = false;
    c.execution.deterministic = true;
    // Per-slice min-max scaling breaks the shared V of the planted model and
    // lifts the error floor well above the noise, so detection runs on raw data.
    c.normalization = Normalization::None;

    // Steps 300..304 fall in the batch covering [300, 309], which is update 21
    // with a 100-step warm-up and cycle 10.
    const std::int64_t first = 300;
    const std::int64_t expected = 21;
    SynthParams with_slice = p;
    with_slice.anomalies.push_back({std::size_t{7}, first, first + 4, 10.0 * sigma});
    SynthParams with_batch = p;
    with_batch.anomalies.push_back({std::nullopt, first, first + 4, 10.0 * sigma});

    auto flagged = [&](const SynthParams& params, AnomalyLevel level, const SliceId& id) {
        const ExperimentResult r = run_experiment(synthesize(params, 1008), c);
        for (const auto& f : detect(r.errors, 5)) {
            if (f.level == level && f.update_index == expected && (id.empty() || f.slice == id)) {
                return true;
            }
        }
        return false;
    };
    const bool slice_hit = flagged(with_slice, AnomalyLevel::Slice, synth_slice_id(7));
    const bool batch_hit = flagged(with_batch, AnomalyLevel::Tensor, "");

    std::size_t tensor_flags = 0, tensor_checked = 0, slice_flags = 0, slice_checked = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ExperimentResult r = run_experiment(synthesize(p, 2000 + seed), c);
        for (const auto& t : moving_threshold(r.errors.tensor_error, 5)) {
            tensor_checked += t ? 1 : 0;
        }
        for (const auto& [id, points] : r.errors.slice_error) {
            std::vector<double> series;
            for (const auto& pt : points) {
                series.push_back(pt.error);
            }
            for (const auto& t : moving_threshold(series, 5)) {
                slice_checked += t ? 1 : 0;
            }
        }
        for (const auto& f : detect(r.errors, 5)) {
            (f.level == AnomalyLevel::Tensor ? tensor_flags : slice_flags) += 1;
        }
    }
    // The same rule applied to independent draws, for scale.
    oracle::Gen gen(77);
    std::size_t iid_flags = 0;
    constexpr std::size_t iid_trials = 200000;
    for (std::size_t n = 0; n < iid_trials; ++n) {
        std::vector<double> series(6);
        for (double& e : series) {
            e = gen.normal();
        }
        iid_flags += *moving_threshold(series, 5)[5] < series[5] ? 1 : 0;
    }
    const double iid = static_cast<double>(iid_flags) / static_cast<double>(iid_trials);

    const double fpr = static_cast<double>(tensor_flags) / static_cast<double>(tensor_checked);
    const double slice_fpr = static_cast<double>(slice_flags) / static_cast<double>(slice_checked);
    return {slice_hit && batch_hit && fpr <= 0.10,
            fmt("slice anomaly flagged: %s, batch-wide anomaly flagged: %s; clean tensor-level FPR %.3f "
                "(%zu/%zu, bound 0.10), slice-level %.3f; the rule flags %.3f of iid draws",
                slice_hit ? "yes" : "no", batch_hit ? "yes" : "no", fpr, tensor_flags, tensor_checked, slice_fpr,
                iid)};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_state(const StreamState& a, const StreamState& b) {
    auto eq = [](const Matrix& x, const Matrix& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() &&
               std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
    };
    if (a.ids != b.ids || !eq(a.v, b.v) || !eq(a.w, b.w) || !eq(a.helpers.f, b.helpers.f) ||
        !eq(a.helpers.g, b.helpers.g)) {
        return false;
    }
    for (std::size_t k = 0; k < a.size(); ++k) {
        if (!eq(a.helpers.c[k], b.helpers.c[k]) || !eq(a.helpers.d[k], b.helpers.d[k]) ||
            !eq(a.u(k), b.u(k))) {
            return false;
        }
    }
    return true;
}

Outcome determinism() {
    const fs::path dir = fs::temp_directory_path() / "dash_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SynthParams p;
    p.slices = 15;
    p.columns = 10;
    p.rank = 3;
    p.duration = 300;
    p.noise = 0.05;
    p.late_fraction = 0.3;
    p.late_start_min = 80;
    const IrregularTensor t = synthesize(p, 1009);
    ExperimentConfig c;
    c.rank = 3;
    c.update_cycle = 10;
    c.seed = 5;
    c.execution.deterministic = true;

    // Wall-clock columns are the only nondeterministic part of a report.
    auto write_run = [&](const std::string& tag) {
        ExperimentResult r = run_experiment(t, c);
        for (auto& rep : r.reports) {
            rep.dash_seconds = 0.0;
        }
        io::write_reports_csv(dir / (tag + "_reports.csv"), r.reports);
        io::write_tensor_errors_csv(dir / (tag + "_tensor.csv"), r.errors, 5);
        io::write_slice_errors_csv(dir / (tag + "_slices.csv"), r.errors, 5);
        io::write_anomalies_json(dir / (tag + "_anomalies.json"), detect(r.errors, 5));
        io::Checkpoint cp{r.state, c.normalization, r.stats};
        io::save_checkpoint(dir / (tag + "_checkpoint.json"), cp);
        return r;
    };
    const ExperimentResult a = write_run("a");
    write_run("b");
    bool identical = true;
    for (const auto* name : {"reports.csv", "tensor.csv", "slices.csv", "anomalies.json", "checkpoint.json"}) {
        identical = identical && slurp(dir / (std::string("a_") + name)) == slurp(dir / (std::string("b_") + name));
    }

    // Resume: stream half the batches, save, load, stream the rest.
    const ReplayPlan plan = replay(t, c.init_fraction, c.update_cycle);
    auto [initial, stats] = normalize_tensor(plan.initial, {}, StatsPolicy::CausalFrozen);
    AlsOptions o;
    o.rank = c.rank;
    o.max_iters = c.als_iters;
    o.seed = c.seed;
    StreamState full = make_stream_state(initial, parafac2_als(initial, o).factors, c.lambda);
    StreamState half = full;
    ColumnStats full_stats = stats;
    ColumnStats half_stats = stats;
    const std::size_t cut = plan.batches.size() / 2;
    bool resumed_ok = true;
    for (std::size_t n = 0; n < plan.batches.size(); ++n) {
        auto [nb, ns] = normalize_batch(plan.batches[n], std::move(full_stats), StatsPolicy::CausalFrozen);
        full_stats = std::move(ns);
        dash_update(full, nb);
    }
    for (const auto format : {io::CheckpointFormat::Json, io::CheckpointFormat::Binary}) {
        StreamState s = half;
        ColumnStats st = half_stats;
        for (std::size_t n = 0; n < plan.batches.size(); ++n) {
            if (n == cut) {
                io::save_checkpoint(dir / "mid", {s, Normalization::Causal, st}, format);
                io::Checkpoint back = io::load_checkpoint(dir / "mid");
                s = std::move(back.state);
                st = std::move(*back.stats);
            }
            auto [nb, ns] = normalize_batch(plan.batches[n], std::move(st), StatsPolicy::CausalFrozen);
            st = std::move(ns);
            dash_update(s, nb);
        }
        resumed_ok = resumed_ok && same_state(s, full);
    }
    const bool matches_experiment = same_state(full, a.state);
    return {identical && resumed_ok && matches_experiment,
            fmt("repeat runs byte-identical: %s; resumed from checkpoint (json, binary) equals uninterrupted: %s; "
                "equals experiment harness: %s",
                identical ? "yes" : "no", resumed_ok ? "yes" : "no", matches_experiment ? "yes" : "no")};
}

Outcome metric_oracles() {
    oracle::Gen gen(1010);
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        auto stream = oracle::random_stream(gen, 10, 8, 3, 3);
        const Index r = std::min<Index>(gen.integer(1, 3), std::min(stream.initial.columns(), min_rows(stream.initial)));
        StreamState state = make_stream_state(stream.initial, fit(stream.initial, r, n, 3), gen.uniform(0.1, 1.0));
        IrregularTensor history = stream.initial;
        for (const auto& b : stream.batches) {
            const UpdateResult res = dash_update(state, b);
            std::vector<SliceContribution> contributions;
            std::vector<const Matrix*> xs, us;
            std::vector<RowVector> ss;
            for (const auto& s : res.slices) {
                const RowVector w = state.w.row(static_cast<Index>(s.slice));
                const Matrix& u = state.u_blocks[s.slice].back();
                worst = std::max(worst, std::abs(slice_error(*s.x_new, u, w, state.v) -
                                                 oracle::slice_error(*s.x_new, u, w, state.v)));
                contributions.push_back({s.x_new, &u, w});
                xs.push_back(s.x_new);
                us.push_back(&u);
                ss.push_back(w);
            }
            worst = std::max(worst, std::abs(tensor_error(contributions, state.v) -
                                             oracle::tensor_error(xs, us, ss, state.v)));
            worst = std::max(worst, std::abs(global_error(state, history, b) - oracle::global_error(state, history, b)));
            append_batch(history, b);
        }
    }
    return {worst <= 1e-12, fmt("100 instances, worst absolute gap %.2e (bound 1e-12)", worst)};
}

struct Criterion {
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"normal-equation residuals", 60, residuals},
        {"helper ledger exactness", 60, ledger_exactness},
        {"least-squares oracles", 30, least_squares},
        {"planted-model recovery", 60, planted_recovery},
        {"linear update-time scaling", 300, linear_scaling},
        {"streaming vs refit growth", 300, growth},
        {"forgetting-factor trade-off", 300, forgetting_tradeoff},
        {"anomaly detection", 120, anomaly_detection},
        {"determinism and checkpoint resume", 60, determinism},
        {"metric formula oracles", 10, metric_oracles},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = seconds < c.limit_seconds;
        const bool pass = o.pass && in_time;
        failed += pass ? 0 : 1;
        std::printf("%s %2zu %s: %s [%.2fs, limit %.0fs%s]\n", pass ? "PASS" : "FAIL", i + 1, c.name,
                    o.detail.c_str(), seconds, c.limit_seconds, in_time ? "" : ", too slow");
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed;
}
