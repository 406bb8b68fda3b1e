#pragma once

#include "dash/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dash {

/// A bias added to a block of time steps of one slice (or of every slice when
/// `slice` is empty). Each column gets +magnitude or -magnitude following a
/// seeded sign pattern.
struct AnomalySpec {
    std::optional<std::size_t> slice;
    std::int64_t first_step = 0;
    std::int64_t last_step = 0; // inclusive
    double magnitude = 0.0;
};

/// Parameters of the planted PARAFAC2 generator.
///
/// Every slice runs until `duration`. A `late_fraction` share of the slices
/// starts at a uniform time step in [late_start_min, duration - min_rows] so
/// that new slices show up while streaming; the rest start at 0.
///
/// Row factors are smooth (sums of sinusoids). For slices with at least
/// `rank` rows before `structured_steps`, the rows in that prefix are mapped
/// to Q_k H with Q_k column-orthonormal, which makes the prefix an exact
/// PARAFAC2 tensor. `structured_steps == 0` applies this to whole slices.
///
/// `drift` rotates V over time (radians per time step) in the planes spanned by
/// consecutive column pairs.
struct SynthParams {
    std::size_t slices = 10;
    Index columns = 8;
    Index rank = 3;
    std::int64_t duration = 100;
    double late_fraction = 0.0;
    std::int64_t late_start_min = 0;
    std::int64_t min_rows = 0; // 0 means `rank`
    double noise = 0.0;
    double drift = 0.0;
    std::int64_t structured_steps = 0;
    std::vector<AnomalySpec> anomalies;
};

IrregularTensor synthesize(const SynthParams& params, std::uint64_t seed);

/// Parses "K=20,J=15,R=3,T=200,sigma=0.01,late=0.2,drift=0.001" style specs.
/// Anomalies use `anomaly=<slice|*>:<first>:<last>:<magnitude>` and may repeat.
SynthParams parse_synth_spec(const std::string& spec);

/// Slice ids produced by the generator: "s000", "s001", ...
SliceId synth_slice_id(std::size_t k);

} // namespace dash
