#pragma once

#include "dash/eval.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace dash::cli {

/// Settings shared by every subcommand after flags, environment variables and
/// the config file have been merged.
struct RunConfig {
    std::string command;
    std::string dataset;
    std::string synth;
    Index rank = kDefaultRank;
    double lambda = kDefaultForgetting;
    std::int64_t update_cycle = 20;
    double init_fraction = 0.2;
    int iters = 10;
    AlsInit als_init = AlsInit::Svd;
    std::uint64_t seed = 0;
    int window = kDefaultWindow;
    std::string out = "dash_out";
    bool deterministic = false;
    bool baseline = false;
    Normalization normalization = Normalization::Causal;
    int passes = 1;

    /// Throws InvalidArgument when a field is out of range.
    void validate() const;
    ExperimentConfig experiment() const;
};

/// Entry point of the `dash` tool. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace dash::cli
