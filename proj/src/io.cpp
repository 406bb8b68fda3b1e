#include "dash/io.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dash::io {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'D', 'A', 'S', 'H', 'C', 'K', 'P', 'T'};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

// Parses one comma separated line; false if any field is not a number.
bool parse_row(std::string_view line, std::vector<double>& out) {
    out.clear();
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        std::string_view field =
            trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (!field.empty() && field.front() == '+') {
            field.remove_prefix(1);
        }
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
        if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
            return false;
        }
        out.push_back(value);
        if (comma == std::string_view::npos) {
            return true;
        }
        start = comma + 1;
    }
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) {
        throw InvalidArgument("cannot open " + path.string());
    }
    return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) {
        throw InvalidArgument("cannot write " + path.string());
    }
    return out;
}

json read_json(const fs::path& path) {
    auto in = open_in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& doc) {
    auto out = open_out(path);
    out << doc.dump(2) << '\n';
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string file_stem_for(std::size_t k, const SliceId& id) {
    std::string safe;
    for (char ch : id) {
        const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') ||
                        ch == '-' || ch == '_' || ch == '.';
        safe.push_back(ok ? ch : '_');
    }
    char prefix[16];
    std::snprintf(prefix, sizeof prefix, "%04zu_", k);
    return prefix + safe;
}

json matrix_to_json(const Matrix& m) {
    std::vector<double> data(m.data(), m.data() + m.size());
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const json& j) {
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const auto& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
        throw InvalidArgument("matrix entry has inconsistent shape");
    }
    Matrix m(rows, cols);
    for (Index i = 0; i < rows * cols; ++i) {
        m.data()[i] = data[static_cast<std::size_t>(i)].get<double>();
    }
    return m;
}

json vector_to_json(const Eigen::Ref<const Matrix>& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

struct Entry {
    SliceId id;
    std::string file;
    std::int64_t first_time_step = 0;
};

std::vector<Entry> parse_entries(const json& list, const fs::path& manifest) {
    if (!list.is_array()) {
        throw InvalidArgument(manifest.string() + ": slice list must be an array");
    }
    std::vector<Entry> out;
    for (const auto& item : list) {
        try {
            Entry e;
            e.id = item.at("id").get<std::string>();
            e.file = item.at("file").get<std::string>();
            e.first_time_step = item.value("first_time_step", std::int64_t{0});
            out.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw InvalidArgument(manifest.string() + ": bad slice entry: " + ex.what());
        }
    }
    return out;
}

json entries_to_json(const std::vector<Entry>& entries) {
    json list = json::array();
    for (const auto& e : entries) {
        list.push_back({{"id", e.id}, {"file", e.file}, {"first_time_step", e.first_time_step}});
    }
    return list;
}

void check_version(const json& doc, const fs::path& path) {
    if (doc.is_object() && doc.contains("format_version") &&
        doc.at("format_version").get<int>() != kFormatVersion) {
        throw InvalidArgument(path.string() + ": unsupported format_version " +
                              doc.at("format_version").dump());
    }
}

std::vector<SliceRows> load_rows(const std::vector<Entry>& entries, const fs::path& dir) {
    std::vector<SliceRows> out;
    for (const auto& e : entries) {
        out.push_back({e.id, read_csv_matrix(dir / e.file), e.first_time_step});
    }
    return out;
}

std::vector<Entry> save_rows(const std::vector<SliceRows>& rows, const fs::path& dir, std::size_t offset) {
    std::vector<Entry> entries;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const std::string file = file_stem_for(offset + k, rows[k].id) + ".csv";
        write_csv_matrix(dir / file, rows[k].rows);
        entries.push_back({rows[k].id, file, rows[k].first_time_step});
    }
    return entries;
}

json checkpoint_to_json(const Checkpoint& cp) {
    const StreamState& s = cp.state;
    s.validate();
    json slices = json::array();
    for (std::size_t k = 0; k < s.size(); ++k) {
        json blocks = json::array();
        for (const auto& b : s.u_blocks[k]) {
            blocks.push_back(matrix_to_json(b));
        }
        slices.push_back({{"id", s.ids[k]},
                          {"u_blocks", std::move(blocks)},
                          {"w", vector_to_json(s.w.row(static_cast<Index>(k)).transpose())},
                          {"c", vector_to_json(s.helpers.c[k])},
                          {"d", matrix_to_json(s.helpers.d[k])}});
    }
    json doc = {{"format_version", kFormatVersion},
                {"kind", "dash-checkpoint"},
                {"rank", s.rank()},
                {"columns", s.columns()},
                {"lambda", s.helpers.lambda},
                {"update_index", s.update_index},
                {"normalization", to_string(cp.normalization)},
                {"slices", std::move(slices)},
                {"v", matrix_to_json(s.v)},
                {"f", matrix_to_json(s.helpers.f)},
                {"g", matrix_to_json(s.helpers.g)}};
    if (cp.stats) {
        json stats = json::array();
        for (const auto& [id, range] : cp.stats->ranges()) {
            stats.push_back({{"id", id},
                             {"min", vector_to_json(range.minimum.transpose())},
                             {"max", vector_to_json(range.maximum.transpose())}});
        }
        doc["column_stats"] = std::move(stats);
    } else {
        doc["column_stats"] = nullptr;
    }
    return doc;
}

RowVector row_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    RowVector r(static_cast<Index>(values.size()));
    for (std::size_t i = 0; i < values.size(); ++i) {
        r(static_cast<Index>(i)) = values[i];
    }
    return r;
}

Checkpoint checkpoint_from_json(const json& doc) {
    if (doc.value("kind", std::string{}) != "dash-checkpoint") {
        throw InvalidArgument("not a checkpoint document");
    }
    Checkpoint cp;
    StreamState& s = cp.state;
    const Index rank = doc.at("rank").get<Index>();
    s.helpers.lambda = doc.at("lambda").get<double>();
    s.update_index = doc.at("update_index").get<std::int64_t>();
    cp.normalization = parse_normalization(doc.value("normalization", std::string{"causal"}));
    s.v = matrix_from_json(doc.at("v"));
    s.helpers.f = matrix_from_json(doc.at("f"));
    s.helpers.g = matrix_from_json(doc.at("g"));
    const auto& slices = doc.at("slices");
    s.w.resize(static_cast<Index>(slices.size()), rank);
    for (std::size_t k = 0; k < slices.size(); ++k) {
        const auto& item = slices[k];
        s.ids.push_back(item.at("id").get<std::string>());
        std::vector<Matrix> blocks;
        for (const auto& b : item.at("u_blocks")) {
            blocks.push_back(matrix_from_json(b));
        }
        s.u_blocks.push_back(std::move(blocks));
        const RowVector w = row_from_json(item.at("w"));
        if (w.size() != rank) {
            throw InvalidArgument("checkpoint: W row of slice '" + s.ids.back() + "' has wrong length");
        }
        s.w.row(static_cast<Index>(k)) = w;
        s.helpers.c.push_back(row_from_json(item.at("c")).transpose());
        s.helpers.d.push_back(matrix_from_json(item.at("d")));
    }
    s.reindex();
    s.validate();
    if (doc.contains("column_stats") && !doc.at("column_stats").is_null()) {
        ColumnStats stats;
        for (const auto& item : doc.at("column_stats")) {
            stats.set(item.at("id").get<std::string>(),
                      {row_from_json(item.at("min")), row_from_json(item.at("max"))});
        }
        cp.stats = std::move(stats);
    }
    return cp;
}

} // namespace

Matrix read_csv_matrix(const fs::path& path) {
    auto in = open_in(path);
    std::vector<std::vector<double>> rows;
    std::vector<double> values;
    std::string line;
    std::size_t line_no = 0;
    std::size_t blank_at = 0; // first blank line after data, 0 if none
    bool seen_first = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view view = trim(line);
        if (view.empty()) {
            if (seen_first && blank_at == 0) {
                blank_at = line_no;
            }
            continue;
        }
        if (blank_at != 0) {
            throw InvalidArgument(path.string() + ":" + std::to_string(blank_at) +
                                  ": blank line inside the data (gaps are not supported)");
        }
        const bool numeric = parse_row(view, values);
        if (!numeric) {
            if (!seen_first) {
                seen_first = true; // header
                continue;
            }
            throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": non-numeric row");
        }
        seen_first = true;
        if (!rows.empty() && values.size() != rows.front().size()) {
            throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(rows.front().size()) + " columns, found " +
                                  std::to_string(values.size()));
        }
        rows.push_back(values);
    }
    if (rows.empty()) {
        throw InvalidArgument(path.string() + ": no data rows");
    }
    Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
        }
    }
    return m;
}

void write_csv_matrix(const fs::path& path, const Matrix& m) {
    auto out = open_out(path);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            if (j > 0) {
                out << ',';
            }
            out << format_double(m(i, j));
        }
        out << '\n';
    }
}

IrregularTensor load_dataset(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    const json doc = read_json(manifest);
    check_version(doc, manifest);
    const json& list = doc.is_array() ? doc : doc.at("slices");
    const auto entries = parse_entries(list, manifest);
    if (entries.empty()) {
        throw InvalidArgument(manifest.string() + ": no slices listed");
    }
    IrregularTensor tensor;
    for (auto& s : load_rows(entries, dir)) {
        try {
            if (tensor.empty()) {
                tensor = IrregularTensor(s.rows.cols());
            }
            tensor.add_slice({s.id, std::move(s.rows), s.first_time_step});
        } catch (const InvalidArgument& e) {
            throw InvalidArgument(manifest.string() + ": " + e.what());
        }
    }
    return tensor;
}

void save_dataset(const fs::path& dir, const IrregularTensor& tensor) {
    std::vector<SliceRows> rows;
    for (const auto& s : tensor.slices()) {
        rows.push_back({s.id, s.rows, s.first_time_step});
    }
    fs::create_directories(dir);
    const auto entries = save_rows(rows, dir, 0);
    write_json(dir / "manifest.json", {{"format_version", kFormatVersion}, {"slices", entries_to_json(entries)}});
}

UpdateBatch load_batch(const fs::path& dir) {
    const fs::path manifest = dir / "manifest.json";
    const json doc = read_json(manifest);
    check_version(doc, manifest);
    UpdateBatch batch;
    try {
        batch.update_index = doc.value("update_index", std::int64_t{0});
        if (doc.contains("cycle_span")) {
            const auto span = doc.at("cycle_span").get<std::vector<std::int64_t>>();
            if (span.size() != 2) {
                throw InvalidArgument(manifest.string() + ": cycle_span needs two entries");
            }
            batch.cycle_span = {span[0], span[1]};
        }
    } catch (const json::exception& e) {
        throw InvalidArgument(manifest.string() + ": " + e.what());
    }
    const json empty = json::array();
    batch.existing_rows = load_rows(parse_entries(doc.value("existing", empty), manifest), dir);
    batch.new_slices = load_rows(parse_entries(doc.value("new", empty), manifest), dir);
    if (batch.empty()) {
        throw InvalidArgument(manifest.string() + ": batch has no rows");
    }
    return batch;
}

void save_batch(const fs::path& dir, const UpdateBatch& batch) {
    fs::create_directories(dir);
    const auto existing = save_rows(batch.existing_rows, dir, 0);
    const auto fresh = save_rows(batch.new_slices, dir, batch.existing_rows.size());
    write_json(dir / "manifest.json", {{"format_version", kFormatVersion},
                                       {"update_index", batch.update_index},
                                       {"cycle_span", {batch.cycle_span.first, batch.cycle_span.second}},
                                       {"existing", entries_to_json(existing)},
                                       {"new", entries_to_json(fresh)}});
}

void save_factors(const fs::path& dir, const FactorSet& factors, const std::vector<double>& loss_log) {
    factors.validate();
    fs::create_directories(dir);
    json slices = json::array();
    for (std::size_t k = 0; k < factors.size(); ++k) {
        const std::string file = "U_" + file_stem_for(k, factors.ids[k]) + ".csv";
        write_csv_matrix(dir / file, factors.u[k]);
        slices.push_back({{"id", factors.ids[k]}, {"file", file}});
    }
    write_csv_matrix(dir / "V.csv", factors.v);
    write_csv_matrix(dir / "W.csv", factors.w);
    json log = json::array();
    for (std::size_t i = 0; i < loss_log.size(); ++i) {
        log.push_back({{"iteration", i + 1}, {"loss", loss_log[i]}});
    }
    write_json(dir / "factors.json", {{"format_version", kFormatVersion},
                                      {"rank", factors.rank()},
                                      {"slices", std::move(slices)},
                                      {"v", "V.csv"},
                                      {"w", "W.csv"},
                                      {"iterations", std::move(log)}});
}

FactorSet load_factors(const fs::path& dir) {
    const json doc = read_json(dir / "factors.json");
    check_version(doc, dir / "factors.json");
    FactorSet f;
    for (const auto& item : doc.at("slices")) {
        f.ids.push_back(item.at("id").get<std::string>());
        f.u.push_back(read_csv_matrix(dir / item.at("file").get<std::string>()));
    }
    f.v = read_csv_matrix(dir / doc.value("v", std::string{"V.csv"}));
    f.w = read_csv_matrix(dir / doc.value("w", std::string{"W.csv"}));
    f.validate();
    return f;
}

void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint, CheckpointFormat format) {
    const json doc = checkpoint_to_json(checkpoint);
    if (format == CheckpointFormat::Json) {
        write_json(path, doc);
        return;
    }
    const std::vector<std::uint8_t> cbor = json::to_cbor(doc);
    auto out = open_out(path, std::ios::binary);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(cbor.data()), static_cast<std::streamsize>(cbor.size()));
    if (!out) {
        throw InvalidArgument("cannot write " + path.string());
    }
}

Checkpoint load_checkpoint(const fs::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        json doc;
        if (bytes.size() >= sizeof kMagic && std::equal(kMagic, kMagic + sizeof kMagic, bytes.begin())) {
            doc = json::from_cbor(bytes.begin() + sizeof kMagic, bytes.end());
        } else {
            doc = json::parse(bytes.begin(), bytes.end());
        }
        check_version(doc, path);
        return checkpoint_from_json(doc);
    } catch (const json::exception& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
}

void write_reports_csv(const fs::path& path, const std::vector<UpdateReport>& reports) {
    auto out = open_out(path);
    out << "update_index,dash_seconds,baseline_seconds,local_error,global_error,baseline_local_error,"
           "new_rows,new_slices,touched_slices\n";
    auto opt = [](const std::optional<double>& x) { return x ? format_double(*x) : std::string{}; };
    for (const auto& r : reports) {
        out << r.update_index << ',' << format_double(r.dash_seconds) << ',' << opt(r.baseline_seconds) << ','
            << format_double(r.local_error) << ',' << opt(r.global_error) << ',' << opt(r.baseline_local_error)
            << ',' << r.new_rows << ',' << r.new_slices << ',' << r.touched_slices << '\n';
    }
}

void write_anomalies_json(const fs::path& path, const std::vector<AnomalyFlag>& flags) {
    json list = json::array();
    for (const auto& f : flags) {
        json item = {{"level", f.level == AnomalyLevel::Tensor ? "tensor" : "slice"},
                     {"update_index", f.update_index},
                     {"score", f.score},
                     {"threshold", f.threshold}};
        if (f.level == AnomalyLevel::Slice) {
            item["slice"] = f.slice;
        }
        list.push_back(std::move(item));
    }
    write_json(path, list);
}

void write_tensor_errors_csv(const fs::path& path, const ErrorSeries& errors, int window) {
    const auto thresholds = moving_threshold(errors.tensor_error, window);
    auto out = open_out(path);
    out << "update_index,tensor_error,threshold\n";
    for (std::size_t t = 0; t < errors.tensor_error.size(); ++t) {
        out << errors.update_index[t] << ',' << format_double(errors.tensor_error[t]) << ','
            << (thresholds[t] ? format_double(*thresholds[t]) : std::string{}) << '\n';
    }
}

void write_slice_errors_csv(const fs::path& path, const ErrorSeries& errors, int window) {
    auto out = open_out(path);
    out << "update_index,slice_id,slice_error,threshold\n";
    for (const auto& [id, points] : errors.slice_error) {
        std::vector<double> series;
        for (const auto& p : points) {
            series.push_back(p.error);
        }
        const auto thresholds = moving_threshold(series, window);
        for (std::size_t t = 0; t < points.size(); ++t) {
            out << points[t].update_index << ',' << id << ',' << format_double(points[t].error) << ','
                << (thresholds[t] ? format_double(*thresholds[t]) : std::string{}) << '\n';
        }
    }
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        hash ^= ch;
        hash *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

std::string to_string(Normalization n) {
    switch (n) {
    case Normalization::None:
        return "none";
    case Normalization::Causal:
        return "causal";
    case Normalization::Global:
        return "global";
    }
    return "causal";
}

Normalization parse_normalization(const std::string& text) {
    if (text == "none") {
        return Normalization::None;
    }
    if (text == "causal") {
        return Normalization::Causal;
    }
    if (text == "global") {
        return Normalization::Global;
    }
    throw InvalidArgument("unknown normalization '" + text + "' (expected none, causal or global)");
}

} // namespace dash::io
