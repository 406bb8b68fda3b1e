#include "dash/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

namespace dash {

SliceId synth_slice_id(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "s%03zu", k);
    return buf;
}

namespace {

// Rotates consecutive coordinate pairs (0,1), (2,3), ... by `angle`.
Matrix rotate_rows(const Matrix& v, double angle) {
    Matrix out = v;
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    for (Index j = 0; j + 1 < v.rows(); j += 2) {
        out.row(j) = c * v.row(j) - s * v.row(j + 1);
        out.row(j + 1) = s * v.row(j) + c * v.row(j + 1);
    }
    return out;
}

} // namespace

IrregularTensor synthesize(const SynthParams& p, std::uint64_t seed) {
    const Index rank = p.rank;
    const std::int64_t min_rows = p.min_rows > 0 ? p.min_rows : rank;
    if (p.slices == 0 || p.columns < 1 || rank < 1) {
        throw InvalidArgument("synthesize: K, J and R must be positive");
    }
    if (rank > p.columns || rank > min_rows || p.duration < min_rows) {
        throw InvalidArgument("synthesize: rank " + std::to_string(rank) +
                              " exceeds min(J, min I_k)");
    }
    if (p.late_fraction < 0.0 || p.late_fraction > 1.0) {
        throw InvalidArgument("synthesize: late fraction must lie in [0, 1]");
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Matrix v0(p.columns, rank);
    for (Index i = 0; i < v0.size(); ++i) {
        v0.data()[i] = gauss(rng);
    }
    Matrix h = Matrix::Identity(rank, rank);
    for (Index i = 0; i < h.size(); ++i) {
        h.data()[i] += 0.3 * (unit(rng) - 0.5);
    }
    Matrix w(static_cast<Index>(p.slices), rank);
    for (Index i = 0; i < w.size(); ++i) {
        w.data()[i] = 0.1 + 3.0 * unit(rng);
    }

    const auto late_count = static_cast<std::size_t>(std::lround(p.late_fraction * p.slices));
    std::vector<std::size_t> order(p.slices);
    for (std::size_t k = 0; k < p.slices; ++k) {
        order[k] = k;
    }
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::int64_t> starts(p.slices, 0);
    const std::int64_t latest = p.duration - min_rows;
    const std::int64_t earliest = std::clamp<std::int64_t>(p.late_start_min, 0, latest);
    std::uniform_int_distribution<std::int64_t> start_dist(earliest, latest);
    for (std::size_t i = 0; i < late_count; ++i) {
        starts[order[i]] = start_dist(rng);
    }

    constexpr double two_pi = 2.0 * std::numbers::pi;
    IrregularTensor tensor(p.columns);
    for (std::size_t k = 0; k < p.slices; ++k) {
        const std::int64_t start = starts[k];
        const Index n = p.duration - start;

        Matrix z(n, rank);
        for (Index r = 0; r < rank; ++r) {
            const double f1 = two_pi / (10.0 + 70.0 * unit(rng));
            const double f2 = two_pi / (5.0 + 25.0 * unit(rng));
            const double p1 = two_pi * unit(rng);
            const double p2 = two_pi * unit(rng);
            for (Index t = 0; t < n; ++t) {
                const double g = static_cast<double>(start + t);
                z(t, r) = 1.0 + 0.5 * std::sin(f1 * g + p1) + 0.3 * std::sin(f2 * g + p2);
            }
        }

        const Index prefix = p.structured_steps == 0
                                 ? n
                                 : std::clamp<Index>(p.structured_steps - start, 0, n);
        Matrix u;
        if (prefix >= rank) {
            // Prefix rows become sqrt(prefix) * Q H with Q column-orthonormal.
            Eigen::HouseholderQR<Matrix> qr(z.topRows(prefix));
            Matrix upper = qr.matrixQR().topRows(rank).triangularView<Eigen::Upper>();
            Matrix basis = upper.triangularView<Eigen::Upper>().solve<Eigen::OnTheRight>(
                Matrix::Identity(rank, rank));
            u = z * basis * (std::sqrt(static_cast<double>(prefix)) * h);
        } else {
            u = z * h;
        }

        Matrix x(n, p.columns);
        const RowVector s_k = w.row(static_cast<Index>(k));
        for (Index t = 0; t < n; ++t) {
            const Matrix v_t = p.drift == 0.0 ? v0 : rotate_rows(v0, p.drift * (start + t));
            x.row(t) = (u.row(t).array() * s_k.array()).matrix() * v_t.transpose();
        }
        tensor.add_slice({synth_slice_id(k), std::move(x), start});
    }

    if (p.noise > 0.0) {
        for (std::size_t k = 0; k < tensor.size(); ++k) {
            Matrix& x = tensor[k].rows;
            for (Index i = 0; i < x.size(); ++i) {
                x.data()[i] += p.noise * gauss(rng);
            }
        }
    }

    for (const auto& a : p.anomalies) {
        if (a.slice && *a.slice >= tensor.size()) {
            throw InvalidArgument("synthesize: anomaly targets slice " + std::to_string(*a.slice) +
                                  " of " + std::to_string(tensor.size()));
        }
        RowVector signs(p.columns);
        for (Index j = 0; j < p.columns; ++j) {
            signs(j) = unit(rng) < 0.5 ? -1.0 : 1.0;
        }
        for (std::size_t k = 0; k < tensor.size(); ++k) {
            if (a.slice && *a.slice != k) {
                continue;
            }
            auto& s = tensor[k];
            const std::int64_t from = std::max(a.first_step, s.first_time_step);
            const std::int64_t to = std::min(a.last_step + 1, s.end_time_step());
            for (std::int64_t t = from; t < to; ++t) {
                s.rows.row(t - s.first_time_step) += a.magnitude * signs;
            }
        }
    }
    return tensor;
}

SynthParams parse_synth_spec(const std::string& spec) {
    SynthParams p;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) {
            continue;
        }
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw InvalidArgument("synth spec entry '" + item + "' is not key=value");
        }
        const std::string key = item.substr(0, eq);
        const std::string value = item.substr(eq + 1);
        try {
            if (key == "K") {
                p.slices = std::stoul(value);
            } else if (key == "J") {
                p.columns = std::stol(value);
            } else if (key == "R") {
                p.rank = std::stol(value);
            } else if (key == "T") {
                p.duration = std::stoll(value);
            } else if (key == "sigma") {
                p.noise = std::stod(value);
            } else if (key == "late") {
                p.late_fraction = std::stod(value);
            } else if (key == "late_min") {
                p.late_start_min = std::stoll(value);
            } else if (key == "min_rows") {
                p.min_rows = std::stoll(value);
            } else if (key == "drift") {
                p.drift = std::stod(value);
            } else if (key == "structured") {
                p.structured_steps = std::stoll(value);
            } else if (key == "anomaly") {
                AnomalySpec a;
                std::stringstream parts(value);
                std::string slice, first, last, mag;
                if (!std::getline(parts, slice, ':') || !std::getline(parts, first, ':') ||
                    !std::getline(parts, last, ':') || !std::getline(parts, mag, ':')) {
                    throw InvalidArgument("anomaly must be <slice|*>:<first>:<last>:<magnitude>");
                }
                if (slice != "*") {
                    a.slice = std::stoul(slice);
                }
                a.first_step = std::stoll(first);
                a.last_step = std::stoll(last);
                a.magnitude = std::stod(mag);
                p.anomalies.push_back(a);
            } else {
                throw InvalidArgument("unknown synth spec key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            throw InvalidArgument("bad value for synth spec key '" + key + "': '" + value + "'");
        }
    }
    return p;
}

} // namespace dash
