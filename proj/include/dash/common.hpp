#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dash {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/// Slice keys are opaque strings (ticker symbols, sensor names, ...).
using SliceId = std::string;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: shape mismatches, bad parameters, broken files.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A linear solve or SVD could not be completed. Carries the slice it was
/// working on when one applies.
class SolverError : public Error {
public:
    SolverError(const std::string& what, SliceId slice = {})
        : Error(slice.empty() ? what : what + " (slice '" + slice + "')"),
          slice_(std::move(slice)) {}

    const SliceId& slice() const noexcept { return slice_; }

private:
    SliceId slice_;
};

/// Reduction order for sums over slices. `deterministic` forces a fixed serial
/// order so results are reproducible bit for bit.
struct Execution {
    bool deterministic = true;
};

} // namespace dash
