#include "dash/cli.hpp"

#include "dash/io.hpp"
#include "dash/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace dash::cli {

using nlohmann::json;
namespace fs = std::filesystem;

void RunConfig::validate() const {
    if (rank < 1) {
        throw InvalidArgument("--rank must be at least 1");
    }
    if (!(lambda > 0.0 && lambda <= 1.0)) {
        throw InvalidArgument("--lambda must lie in (0, 1]");
    }
    if (update_cycle < 1) {
        throw InvalidArgument("--cycle must be at least 1");
    }
    if (!(init_fraction > 0.0 && init_fraction < 1.0)) {
        throw InvalidArgument("--init-fraction must lie in (0, 1)");
    }
    if (iters < 1) {
        throw InvalidArgument("--iters must be at least 1");
    }
    if (window < 2) {
        throw InvalidArgument("--window must be at least 2");
    }
    if (passes < 1) {
        throw InvalidArgument("--passes must be at least 1");
    }
}

ExperimentConfig RunConfig::experiment() const {
    ExperimentConfig c;
    c.rank = rank;
    c.lambda = lambda;
    c.update_cycle = update_cycle;
    c.init_fraction = init_fraction;
    c.als_iters = iters;
    c.als_init = als_init;
    c.baseline_iters = iters;
    c.seed = seed;
    c.baseline = baseline;
    c.normalization = normalization;
    c.passes = passes;
    c.execution.deterministic = deterministic;
    return c;
}

namespace {

json config_json(const RunConfig& c) {
    return {{"command", c.command},
            {"dataset", c.dataset},
            {"synth", c.synth},
            {"rank", c.rank},
            {"lambda", c.lambda},
            {"cycle", c.update_cycle},
            {"init_fraction", c.init_fraction},
            {"iters", c.iters},
            {"als_init", c.als_init == AlsInit::Svd ? "svd" : "random"},
            {"seed", c.seed},
            {"window", c.window},
            {"deterministic", c.deterministic},
            {"baseline", c.baseline},
            {"normalize", io::to_string(c.normalization)},
            {"passes", c.passes}};
}

std::string config_hash(const RunConfig& c) {
    json j = config_json(c);
    j.erase("command");
    return io::fnv1a_hex(j.dump());
}

IrregularTensor load_input(const RunConfig& c) {
    if (!c.dataset.empty()) {
        return io::load_dataset(c.dataset);
    }
    if (!c.synth.empty()) {
        return synthesize(parse_synth_spec(c.synth), c.seed);
    }
    throw InvalidArgument("one of --dataset or --synth is required");
}

/// Records what a command wrote so runs can be audited later.
class Outputs {
public:
    Outputs(const RunConfig& config, std::ostream& log) : config_(config), log_(log) {
        fs::create_directories(config.out);
    }

    fs::path path(const std::string& name) {
        files_.push_back(name);
        return fs::path(config_.out) / name;
    }

    void write_json(const std::string& name, const json& doc) {
        std::ofstream f(path(name), std::ios::trunc);
        f << doc.dump(2) << '\n';
        if (!f) {
            throw InvalidArgument("cannot write " + (fs::path(config_.out) / name).string());
        }
    }

    void finish(json extra = json::object()) {
        json manifest = {{"format_version", io::kFormatVersion},
                         {"command", config_.command},
                         {"config", config_json(config_)},
                         {"config_hash", config_hash(config_)},
                         {"outputs", files_}};
        for (auto& [key, value] : extra.items()) {
            manifest[key] = value;
        }
        std::ofstream f(fs::path(config_.out) / "run_manifest.json", std::ios::trunc);
        f << manifest.dump(2) << '\n';
        if (!f) {
            throw InvalidArgument("cannot write run_manifest.json");
        }
        log_ << "wrote " << files_.size() + 1 << " outputs to " << config_.out << " (listed in run_manifest.json)\n";
    }

private:
    const RunConfig& config_;
    std::ostream& log_;
    std::vector<std::string> files_;
};

json stats_json(const std::vector<double>& x) {
    if (x.empty()) {
        return nullptr;
    }
    return {{"mean", mean_of(x)}, {"std", stddev_of(x)}, {"median", median_of(x)}, {"n", x.size()}};
}

json reports_summary(const std::vector<UpdateReport>& reports) {
    std::vector<double> dash_t, base_t, local, global, base_local, index;
    for (const auto& r : reports) {
        index.push_back(static_cast<double>(r.update_index));
        dash_t.push_back(r.dash_seconds);
        local.push_back(r.local_error);
        if (r.global_error) {
            global.push_back(*r.global_error);
        }
        if (r.baseline_seconds) {
            base_t.push_back(*r.baseline_seconds);
            base_local.push_back(*r.baseline_local_error);
        }
    }
    json s = {{"updates", reports.size()},
              {"dash_seconds", stats_json(dash_t)},
              {"local_error", stats_json(local)},
              {"global_error", stats_json(global)}};
    if (!base_t.empty()) {
        s["baseline_seconds"] = stats_json(base_t);
        s["baseline_local_error"] = stats_json(base_local);
    }
    if (reports.size() >= 2) {
        s["dash_time_spearman"] = spearman(index, dash_t);
        if (base_t.size() == reports.size()) {
            s["baseline_time_spearman"] = spearman(index, base_t);
        }
    }
    return s;
}

io::CheckpointFormat checkpoint_format(bool binary) {
    return binary ? io::CheckpointFormat::Binary : io::CheckpointFormat::Json;
}

std::string checkpoint_name(bool binary) { return binary ? "checkpoint.bin" : "checkpoint.json"; }

int cmd_synth(const RunConfig& c, std::ostream& out) {
    if (c.synth.empty()) {
        throw InvalidArgument("synth needs --synth <spec>");
    }
    const IrregularTensor tensor = synthesize(parse_synth_spec(c.synth), c.seed);
    Outputs outputs(c, out);
    io::save_dataset(c.out, tensor);
    outputs.path("manifest.json");
    out << "synthesized " << tensor.size() << " slices, " << tensor.total_rows() << " rows, J=" << tensor.columns()
        << '\n';
    outputs.finish();
    return 0;
}

int cmd_split(const RunConfig& c, std::ostream& out) {
    const IrregularTensor tensor = load_input(c);
    const ReplayPlan plan = replay(tensor, c.init_fraction, c.update_cycle);
    Outputs outputs(c, out);
    io::save_dataset(fs::path(c.out) / "initial", plan.initial);
    outputs.path("initial/manifest.json");
    for (const auto& b : plan.batches) {
        char name[32];
        std::snprintf(name, sizeof name, "batch_%04lld", static_cast<long long>(b.update_index));
        io::save_batch(fs::path(c.out) / name, b);
        outputs.path(std::string(name) + "/manifest.json");
    }
    out << "initial tensor: " << plan.initial.size() << " slices before time step " << plan.init_boundary << '\n'
        << "batches: " << plan.batches.size() << '\n';
    outputs.finish({{"init_boundary", plan.init_boundary}, {"batches", plan.batches.size()}});
    return 0;
}

int cmd_init(const RunConfig& c, bool binary, std::ostream& out) {
    if (c.normalization == Normalization::Global) {
        throw InvalidArgument("global normalization needs the whole dataset up front; use replay, or "
                              "--normalize causal|none for checkpoint streams");
    }
    const IrregularTensor raw = load_input(c);
    io::Checkpoint cp;
    cp.normalization = c.normalization;
    IrregularTensor tensor;
    switch (c.normalization) {
    case Normalization::None:
        tensor = raw;
        break;
    case Normalization::Causal:
    case Normalization::Global: {
        auto [normalized, stats] = normalize_tensor(raw, {}, StatsPolicy::CausalFrozen);
        tensor = std::move(normalized);
        cp.stats = std::move(stats);
        break;
    }
    }
    const ExperimentConfig e = c.experiment();
    AlsOptions options;
    options.rank = e.rank;
    options.max_iters = e.als_iters;
    options.init = e.als_init;
    options.seed = e.seed;
    options.execution = e.execution;
    const AlsResult als = parafac2_als(tensor, options);
    cp.state = make_stream_state(tensor, als.factors, c.lambda);

    Outputs outputs(c, out);
    io::save_checkpoint(outputs.path(checkpoint_name(binary)), cp, checkpoint_format(binary));
    io::save_factors(fs::path(c.out) / "factors", als.factors, als.loss_log);
    outputs.path("factors/factors.json");

    char line[128];
    std::snprintf(line, sizeof line, "init loss %.10g, relative error %.6g after %zu iterations\n",
                  als.loss_log.back(), als.relative_error, als.loss_log.size());
    out << line;
    outputs.finish({{"init_loss", als.loss_log}, {"relative_error", als.relative_error}});
    return 0;
}

int cmd_update(const RunConfig& c, const std::string& checkpoint, const std::string& batch_dir, bool binary,
               std::ostream& out) {
    if (checkpoint.empty() || batch_dir.empty()) {
        throw InvalidArgument("update needs --checkpoint and --batch");
    }
    io::Checkpoint cp = io::load_checkpoint(checkpoint);
    UpdateBatch batch = io::load_batch(batch_dir);
    batch.update_index = cp.state.update_index + 1;

    if (cp.normalization != Normalization::None) {
        if (!cp.stats) {
            throw InvalidArgument(checkpoint + ": normalized checkpoint has no column stats");
        }
        const StatsPolicy policy =
            cp.normalization == Normalization::Global ? StatsPolicy::Global : StatsPolicy::CausalFrozen;
        auto [normalized, stats] = normalize_batch(batch, std::move(*cp.stats), policy);
        batch = std::move(normalized);
        cp.stats = std::move(stats);
    }

    UpdateOptions options;
    options.passes = c.passes;
    options.execution.deterministic = c.deterministic;
    const auto start = std::chrono::steady_clock::now();
    dash_update(cp.state, batch, options);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    UpdateReport report;
    report.update_index = cp.state.update_index;
    report.dash_seconds = seconds;
    report.new_rows = batch.total_new_rows();
    report.new_slices = batch.new_slices.size();
    report.touched_slices = batch.existing_rows.size() + batch.new_slices.size();
    const auto slice_errors = batch_slice_errors(cp.state, batch);
    report.local_error = local_error(cp.state, batch);

    Outputs outputs(c, out);
    io::save_checkpoint(outputs.path(checkpoint_name(binary)), cp, checkpoint_format(binary));
    json se = json::object();
    for (const auto& [id, e] : slice_errors) {
        se[id] = e;
    }
    char name[32];
    std::snprintf(name, sizeof name, "update_%04lld.json", static_cast<long long>(report.update_index));
    outputs.write_json(name, {{"update_index", report.update_index},
                              {"dash_seconds", report.dash_seconds},
                              {"local_error", report.local_error},
                              {"new_rows", report.new_rows},
                              {"new_slices", report.new_slices},
                              {"slice_errors", se}});
    char line[128];
    std::snprintf(line, sizeof line, "update %lld: %lld new rows, local error %.6g\n",
                  static_cast<long long>(report.update_index), static_cast<long long>(report.new_rows),
                  report.local_error);
    out << line;
    outputs.finish();
    return 0;
}

int cmd_replay(const RunConfig& c, bool binary, std::ostream& out) {
    const IrregularTensor tensor = load_input(c);
    const ExperimentResult r = run_experiment(tensor, c.experiment());
    const auto flags = detect(r.errors, c.window);
    const std::string hash = config_hash(c);

    Outputs outputs(c, out);
    io::write_reports_csv(outputs.path("reports_" + hash + ".csv"), r.reports);
    json summary = reports_summary(r.reports);
    summary["config"] = config_json(c);
    summary["init_loss"] = r.init_loss;
    summary["init_relative_error"] = r.init_relative_error;
    summary["init_boundary"] = r.init_boundary;
    std::size_t tensor_flags = 0;
    for (const auto& f : flags) {
        tensor_flags += f.level == AnomalyLevel::Tensor ? 1 : 0;
    }
    summary["anomalies"] = {{"tensor", tensor_flags}, {"slice", flags.size() - tensor_flags}};
    outputs.write_json("summary_" + hash + ".json", summary);
    io::write_anomalies_json(outputs.path("anomalies.json"), flags);
    io::write_tensor_errors_csv(outputs.path("tensor_errors.csv"), r.errors, c.window);
    io::write_slice_errors_csv(outputs.path("slice_errors.csv"), r.errors, c.window);

    io::Checkpoint cp;
    cp.state = r.state;
    cp.normalization = c.normalization;
    cp.stats = r.stats;
    io::save_checkpoint(outputs.path(checkpoint_name(binary)), cp, checkpoint_format(binary));

    char line[160];
    std::snprintf(line, sizeof line, "%zu updates, init relative error %.6g, mean local error %.6g, %zu flags\n",
                  r.reports.size(), r.init_relative_error, summary["local_error"].is_null()
                                                               ? 0.0
                                                               : summary["local_error"]["mean"].get<double>(),
                  flags.size());
    out << line;
    for (const auto& f : flags) {
        if (f.level == AnomalyLevel::Tensor) {
            std::snprintf(line, sizeof line, "  tensor anomaly at update %lld: %.6g > %.6g\n",
                          static_cast<long long>(f.update_index), f.score, f.threshold);
            out << line;
        }
    }
    outputs.finish();
    return 0;
}

int cmd_bench(const RunConfig& c, const std::vector<std::int64_t>& cycles, int repeats, std::ostream& out) {
    const IrregularTensor tensor = load_input(c);
    ExperimentConfig e = c.experiment();
    e.track_global = false;
    const ScalingSummary s = run_scaling_bench(tensor, cycles, e, repeats);
    const std::string hash = config_hash(c);

    Outputs outputs(c, out);
    {
        std::ofstream csv(outputs.path("bench_" + hash + ".csv"), std::ios::trunc);
        csv << "cycle,batches,median_rows,median_seconds\n";
        for (const auto& p : s.points) {
            char row[128];
            std::snprintf(row, sizeof row, "%lld,%zu,%.17g,%.17g\n", static_cast<long long>(p.cycle), p.batches,
                          p.median_rows, p.median_seconds);
            csv << row;
        }
    }
    json points = json::array();
    for (const auto& p : s.points) {
        points.push_back({{"cycle", p.cycle},
                          {"batches", p.batches},
                          {"median_rows", p.median_rows},
                          {"median_seconds", p.median_seconds}});
    }
    json summary = {{"config", config_json(c)}, {"points", points}, {"slope", s.slope}, {"intercept", s.intercept}};

    char line[128];
    for (const auto& p : s.points) {
        std::snprintf(line, sizeof line, "cycle %4lld: median rows %8.0f, median time %.6g s\n",
                      static_cast<long long>(p.cycle), p.median_rows, p.median_seconds);
        out << line;
    }
    std::snprintf(line, sizeof line, "log-log slope %.4f\n", s.slope);
    out << line;

    if (c.baseline) {
        ExperimentConfig growth = c.experiment();
        growth.track_global = false;
        const ExperimentResult r = run_experiment(tensor, growth);
        summary["growth"] = reports_summary(r.reports);
        io::write_reports_csv(outputs.path("growth_" + hash + ".csv"), r.reports);
        if (summary["growth"].contains("baseline_time_spearman")) {
            std::snprintf(line, sizeof line, "time vs update index (Spearman): dash %.3f, refit %.3f\n",
                          summary["growth"]["dash_time_spearman"].get<double>(),
                          summary["growth"]["baseline_time_spearman"].get<double>());
            out << line;
        }
    }
    outputs.write_json("bench_" + hash + ".json", summary);
    outputs.finish();
    return 0;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dual-way streaming PARAFAC2 (DASH)", "dash"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML or INI file with option values (flags take precedence)");

    RunConfig c;
    std::string normalize = "causal";
    std::string als_init = "svd";
    auto* dataset = app.add_option("--dataset", c.dataset, "Dataset directory (manifest.json + CSVs)")
                        ->envname("DASH_DATASET");
    app.add_option("--synth", c.synth, "Synthetic tensor spec, e.g. K=20,J=15,R=3,T=200,sigma=0.01")
        ->envname("DASH_SYNTH")
        ->excludes(dataset);
    app.add_option("--rank", c.rank, "Target rank R")->envname("DASH_RANK")->capture_default_str();
    app.add_option("--lambda", c.lambda, "Forgetting factor in (0, 1]")->envname("DASH_LAMBDA")->capture_default_str();
    app.add_option("--cycle", c.update_cycle, "Update cycle in time steps")->envname("DASH_CYCLE")->capture_default_str();
    app.add_option("--init-fraction", c.init_fraction, "Share of the time axis used for initialization")
        ->envname("DASH_INIT_FRACTION")
        ->capture_default_str();
    app.add_option("--iters", c.iters, "ALS iterations (initialization and refit baseline)")
        ->envname("DASH_ITERS")
        ->capture_default_str();
    app.add_option("--als-init", als_init, "ALS starting point: svd or random")
        ->envname("DASH_ALS_INIT")
        ->check(CLI::IsMember({"svd", "random"}))
        ->capture_default_str();
    app.add_option("--seed", c.seed, "Seed for every random draw")->envname("DASH_SEED")->capture_default_str();
    app.add_option("--window", c.window, "Anomaly threshold window")->envname("DASH_WINDOW")->capture_default_str();
    app.add_option("--out", c.out, "Output directory")->envname("DASH_OUT")->capture_default_str();
    app.add_flag("--deterministic", c.deterministic, "Serial reductions in a fixed order")
        ->envname("DASH_DETERMINISTIC");
    app.add_flag("--baseline", c.baseline, "Also time a full ALS refit after every update")
        ->envname("DASH_BASELINE");
    app.add_option("--normalize", normalize, "Min-max normalization: none, causal or global")
        ->envname("DASH_NORMALIZE")
        ->check(CLI::IsMember({"none", "causal", "global"}))
        ->capture_default_str();
    app.add_option("--passes", c.passes, "Algorithm passes per batch")->envname("DASH_PASSES")->capture_default_str();

    bool binary = false;
    std::string checkpoint, batch_dir;
    std::vector<std::int64_t> cycles{20, 40, 60, 80, 100};
    int repeats = 3;

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset to --out");
    auto* split = app.add_subcommand("split", "Write the initial tensor and one directory per batch");
    auto* init = app.add_subcommand("init", "Fit static PARAFAC2 and write a stream checkpoint");
    init->add_flag("--binary", binary, "Binary checkpoint instead of JSON");
    auto* update = app.add_subcommand("update", "Apply one batch to a checkpoint");
    update->add_option("--checkpoint", checkpoint, "Checkpoint to continue from")->required();
    update->add_option("--batch", batch_dir, "Batch directory")->required();
    update->add_flag("--binary", binary, "Binary checkpoint instead of JSON");
    auto* replay_cmd = app.add_subcommand("replay", "Initialize, stream every batch and detect anomalies");
    replay_cmd->add_flag("--binary", binary, "Binary checkpoint instead of JSON");
    auto* bench = app.add_subcommand("bench", "Update-time scaling over several update cycles");
    bench->add_option("--cycles", cycles, "Update cycles to sweep")->delimiter(',')->capture_default_str();
    bench->add_option("--repeats", repeats, "Timing repeats per cycle (minimum kept)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        c.normalization = io::parse_normalization(normalize);
        c.als_init = als_init == "random" ? AlsInit::Random : AlsInit::Svd;
        c.command = app.get_subcommands().front()->get_name();
        c.validate();
        if (*synth) {
            return cmd_synth(c, out);
        }
        if (*split) {
            return cmd_split(c, out);
        }
        if (*init) {
            return cmd_init(c, binary, out);
        }
        if (*update) {
            return cmd_update(c, checkpoint, batch_dir, binary, out);
        }
        if (*replay_cmd) {
            return cmd_replay(c, binary, out);
        }
        if (*bench) {
            return cmd_bench(c, cycles, repeats, out);
        }
    } catch (const std::exception& e) {
        err << "dash: error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

} // namespace dash::cli
