#pragma once

#include "dash/anomaly.hpp"
#include "dash/eval.hpp"
#include "dash/parafac2.hpp"
#include "dash/stream.hpp"
#include "dash/tensor.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dash::io {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

/// Reads a numeric CSV. A non-numeric first line is taken as a header and
/// skipped; trailing blank lines are ignored. Any other blank or non-numeric
/// line is rejected, since rows must be contiguous time steps.
Matrix read_csv_matrix(const fs::path& path);
/// Writes with 17 significant digits so values read back exactly.
void write_csv_matrix(const fs::path& path, const Matrix& m);

/// Dataset directory: manifest.json plus one CSV per slice.
///
///   {"format_version": 1,
///    "slices": [{"id": "AAPL", "file": "AAPL.csv", "first_time_step": 0}, ...]}
///
/// A bare array of slice entries is accepted too.
IrregularTensor load_dataset(const fs::path& dir);
void save_dataset(const fs::path& dir, const IrregularTensor& tensor);

/// Batch directory for `dash update`: manifest.json plus one CSV per entry.
///
///   {"format_version": 1, "update_index": 3, "cycle_span": [40, 59],
///    "existing": [{"id": ..., "file": ..., "first_time_step": ...}],
///    "new": [...]}
UpdateBatch load_batch(const fs::path& dir);
void save_batch(const fs::path& dir, const UpdateBatch& batch);

/// U_k, V and W as CSV plus factors.json (rank, slice ids and files, loss log).
void save_factors(const fs::path& dir, const FactorSet& factors,
                  const std::vector<double>& loss_log = {});
FactorSet load_factors(const fs::path& dir);

enum class CheckpointFormat { Json, Binary };

/// Everything `dash update` needs to continue a stream.
struct Checkpoint {
    StreamState state;
    Normalization normalization = Normalization::Causal;
    std::optional<ColumnStats> stats;
};

/// JSON stores doubles in shortest round-trip form, so loading is bit-exact.
/// Binary is the magic "DASHCKPT" followed by the same document as CBOR,
/// which keeps every double as its raw 8 bytes.
void save_checkpoint(const fs::path& path, const Checkpoint& checkpoint,
                     CheckpointFormat format = CheckpointFormat::Json);
/// Detects the format from the first bytes.
Checkpoint load_checkpoint(const fs::path& path);

void write_reports_csv(const fs::path& path, const std::vector<UpdateReport>& reports);
void write_anomalies_json(const fs::path& path, const std::vector<AnomalyFlag>& flags);
/// update_index, tensor_error, threshold (blank while undefined).
void write_tensor_errors_csv(const fs::path& path, const ErrorSeries& errors, int window);
/// update_index, slice_id, slice_error, threshold.
void write_slice_errors_csv(const fs::path& path, const ErrorSeries& errors, int window);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& text);

} // namespace dash::io
