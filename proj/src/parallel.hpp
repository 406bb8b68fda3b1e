#pragma once

#include "dash/common.hpp"

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dash::detail {

/// Runs body(k) for k in [0, n). Iterations must be independent.
template <typename Body>
void for_each_index(std::size_t n, const Execution& exec, Body&& body) {
#ifdef _OPENMP
    if (!exec.deterministic) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
        for (std::ptrdiff_t k = 0; k < count; ++k) {
            body(static_cast<std::size_t>(k));
        }
        return;
    }
#endif
    for (std::size_t k = 0; k < n; ++k) {
        body(static_cast<std::size_t>(k));
    }
}

/// Sums term(k, acc) contributions into `total`. `term` adds its share into the
/// accumulator it is handed. Deterministic mode accumulates in index order;
/// parallel mode combines per-thread partial sums in completion order.
template <typename Term>
void accumulate_over(std::size_t n, const Execution& exec, Matrix& total, Term&& term) {
#ifdef _OPENMP
    if (!exec.deterministic && n > 1) {
        const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel
        {
            Matrix local = Matrix::Zero(total.rows(), total.cols());
#pragma omp for schedule(dynamic, 4) nowait
            for (std::ptrdiff_t k = 0; k < count; ++k) {
                term(static_cast<std::size_t>(k), local);
            }
#pragma omp critical(dash_accumulate)
            total += local;
        }
        return;
    }
#endif
    for (std::size_t k = 0; k < n; ++k) {
        term(k, total);
    }
}

} // namespace dash::detail
