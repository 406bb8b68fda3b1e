#include "dash/stream.hpp"

#include "dash/linalg.hpp"
#include "parallel.hpp"

#include <unordered_set>

namespace dash {

std::optional<std::size_t> StreamState::find(const SliceId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return it->second;
}

Index StreamState::slice_rows(std::size_t k) const {
    Index n = 0;
    for (const auto& b : u_blocks[k]) {
        n += b.rows();
    }
    return n;
}

Matrix StreamState::u(std::size_t k) const {
    Matrix out(slice_rows(k), rank());
    Index row = 0;
    for (const auto& b : u_blocks[k]) {
        out.middleRows(row, b.rows()) = b;
        row += b.rows();
    }
    return out;
}

FactorSet StreamState::factors() const {
    FactorSet f;
    f.ids = ids;
    f.u.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        f.u.push_back(u(k));
    }
    f.w = w;
    f.v = v;
    return f;
}

void StreamState::reindex() {
    index_.clear();
    for (std::size_t k = 0; k < ids.size(); ++k) {
        if (!index_.emplace(ids[k], k).second) {
            throw InvalidArgument("duplicate slice id '" + ids[k] + "' in stream state");
        }
    }
}

void StreamState::validate() const {
    const Index r = rank();
    const std::size_t n = ids.size();
    if (u_blocks.size() != n || helpers.c.size() != n || helpers.d.size() != n) {
        throw InvalidArgument("stream state: per-slice arrays disagree in length");
    }
    if (w.rows() != static_cast<Index>(n) || w.cols() != r) {
        throw InvalidArgument("stream state: W must have one row per slice and R columns");
    }
    if (helpers.f.rows() != v.rows() || helpers.f.cols() != r || helpers.g.rows() != r ||
        helpers.g.cols() != r) {
        throw InvalidArgument("stream state: F must be J x R and G must be R x R");
    }
    if (!(helpers.lambda >= 0.0 && helpers.lambda <= 1.0)) {
        throw InvalidArgument("stream state: lambda must lie in [0, 1]");
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (helpers.c[k].size() != r || helpers.d[k].rows() != r || helpers.d[k].cols() != r) {
            throw InvalidArgument("stream state: helper shapes wrong for slice '" + ids[k] + "'");
        }
        for (const auto& b : u_blocks[k]) {
            if (b.cols() != r) {
                throw InvalidArgument("stream state: U block rank wrong for slice '" + ids[k] + "'");
            }
        }
    }
    if (index_.size() != n) {
        throw InvalidArgument("stream state: id index out of date");
    }
}

RowVector khatri_rao_projection(const Matrix& x, const Matrix& u, const Matrix& v) {
    if (x.rows() != u.rows() || x.cols() != v.rows() || u.cols() != v.cols()) {
        throw InvalidArgument("khatri_rao_projection: shape mismatch");
    }
    // sum_i U(i,r) (X V)(i,r)
    return (u.cwiseProduct(x * v)).colwise().sum();
}

HelperState init_helpers(const IrregularTensor& tensor, const FactorSet& factors, double lambda) {
    factors.validate();
    if (factors.size() != tensor.size() || factors.v.rows() != tensor.columns()) {
        throw InvalidArgument("init_helpers: factors do not match the tensor");
    }
    const Index r = factors.rank();
    HelperState h;
    h.lambda = lambda;
    h.f = Matrix::Zero(tensor.columns(), r);
    h.g = Matrix::Zero(r, r);
    for (std::size_t k = 0; k < tensor.size(); ++k) {
        const Matrix& x = tensor[k].rows;
        const Matrix& u = factors.u[k];
        if (u.rows() != x.rows() || factors.ids[k] != tensor[k].id) {
            throw InvalidArgument("init_helpers: U block does not match slice '" + tensor[k].id + "'");
        }
        const RowVector s_k = factors.w.row(static_cast<Index>(k));
        const Matrix gram = symmetrized(u.transpose() * u);
        h.c.push_back(khatri_rao_projection(x, u, factors.v).transpose());
        h.d.push_back(gram);
        h.f.noalias() += x.transpose() * (u * s_k.asDiagonal());
        h.g.noalias() += s_k.asDiagonal() * gram * s_k.asDiagonal();
    }
    h.g = symmetrized(h.g);
    return h;
}

StreamState make_stream_state(const IrregularTensor& tensor, const FactorSet& factors,
                              double lambda) {
    StreamState state;
    state.helpers = init_helpers(tensor, factors, lambda);
    state.ids = factors.ids;
    for (const auto& u : factors.u) {
        state.u_blocks.push_back({u});
    }
    state.w = factors.w;
    state.v = factors.v;
    state.reindex();
    return state;
}

namespace {

// S_k V^T V S_k with S_k away from zero: U_new = X V (V^T V)^{-1} S_k^{-1}, so a
// single factor of V^T V serves every slice. Near-zero weights fall back to
// the ridged per-slice system.
constexpr double kWeightSpread = 1e-3;

bool spread_weights(const RowVector& s) {
    const double top = s.cwiseAbs().maxCoeff();
    return top > 0.0 && s.cwiseAbs().minCoeff() >= kWeightSpread * top;
}

// F and G increments from every new row at once: xs stacks the X_new blocks
// and us the matching U_new S_k blocks.
FgUpdate stacked_fg(const Matrix& f_old, const Matrix& g_old, double lambda, const Matrix& xs,
                    const Matrix& us) {
    FgUpdate out{lambda * f_old, lambda * g_old};
    out.f.noalias() += xs.transpose() * us;
    out.g.noalias() += us.transpose() * us;
    out.g = symmetrized(out.g);
    return out;
}

} // namespace

Matrix update_u_new(const Matrix& x_new, const Matrix& v, const RowVector& s_k,
                    const SliceId& slice) {
    if (x_new.rows() < 1 || x_new.cols() != v.rows() || s_k.size() != v.cols()) {
        throw InvalidArgument("update_u_new: shape mismatch");
    }
    const Matrix gram = v.transpose() * v;
    if (spread_weights(s_k)) {
        return x_new * solve_gram_right(gram, v, slice) * s_k.cwiseInverse().asDiagonal();
    }
    const Matrix lhs = gram.cwiseProduct(s_k.transpose() * s_k);
    const Matrix rhs = x_new * (v * s_k.asDiagonal());
    return solve_gram_right(lhs, rhs, slice);
}

CdUpdate accumulate_cd(const Vector* c_old, const Matrix* d_old, double lambda,
                       const Matrix& x_new, const Matrix& u_new, const Matrix& v) {
    const Index r = v.cols();
    CdUpdate out;
    out.c = khatri_rao_projection(x_new, u_new, v).transpose();
    out.d = symmetrized(u_new.transpose() * u_new);
    if (c_old != nullptr) {
        if (c_old->size() != r) {
            throw InvalidArgument("accumulate_cd: c_old has wrong length");
        }
        out.c += lambda * *c_old;
    }
    if (d_old != nullptr) {
        if (d_old->rows() != r || d_old->cols() != r) {
            throw InvalidArgument("accumulate_cd: D_old has wrong shape");
        }
        out.d += lambda * *d_old;
    }
    return out;
}

CdUpdate accumulate_cd(const HelperState& helpers, std::optional<std::size_t> slice,
                       const Matrix& x_new, const Matrix& u_new, const Matrix& v) {
    if (slice && *slice < helpers.c.size()) {
        return accumulate_cd(&helpers.c[*slice], &helpers.d[*slice], helpers.lambda, x_new, u_new, v);
    }
    return accumulate_cd(nullptr, nullptr, helpers.lambda, x_new, u_new, v);
}

RowVector update_s_row(const Vector& c_new, const Matrix& d_new, const Matrix& v,
                       const SliceId& slice) {
    if (c_new.size() != v.cols() || d_new.rows() != v.cols() || d_new.cols() != v.cols()) {
        throw InvalidArgument("update_s_row: shape mismatch");
    }
    const Matrix lhs = (v.transpose() * v).cwiseProduct(d_new);
    return solve_gram_right(lhs, RowVector(c_new.transpose()), slice);
}

FgUpdate accumulate_fg(const Matrix& f_old, const Matrix& g_old, double lambda,
                       const std::vector<BatchContribution>& contributions) {
    Index total = 0;
    for (const auto& c : contributions) {
        total += c.x_new->rows();
    }
    Matrix xs(total, f_old.rows());
    Matrix us(total, g_old.rows());
    Index offset = 0;
    for (const auto& c : contributions) {
        const Index n = c.x_new->rows();
        xs.middleRows(offset, n) = *c.x_new;
        us.middleRows(offset, n) = *c.u_new * c.s_k.asDiagonal();
        offset += n;
    }
    return stacked_fg(f_old, g_old, lambda, xs, us);
}

Matrix update_v(const Matrix& f_new, const Matrix& g_new) {
    if (g_new.rows() != g_new.cols() || f_new.cols() != g_new.rows()) {
        throw InvalidArgument("update_v: shape mismatch");
    }
    return solve_gram_right(g_new, f_new);
}

UpdateResult dash_update(StreamState& state, const UpdateBatch& batch,
                         const UpdateOptions& options) {
    if (options.passes < 1) {
        throw InvalidArgument("dash_update: passes must be at least 1");
    }
    batch.validate(state.columns());
    const Index r = state.rank();
    const double lambda = state.helpers.lambda;
    const Execution& exec = options.execution;

    UpdateResult result;
    result.v_before = state.v;
    auto& entries = result.slices;
    entries.reserve(batch.existing_rows.size() + batch.new_slices.size());

    for (const auto& e : batch.existing_rows) {
        auto k = state.find(e.id);
        if (!k) {
            throw InvalidArgument("batch " + std::to_string(batch.update_index) +
                                  " has rows for unknown slice '" + e.id + "'");
        }
        SliceUpdate s;
        s.slice = *k;
        s.x_new = &e.rows;
        s.s_used = state.w.row(static_cast<Index>(*k));
        entries.push_back(std::move(s));
    }
    std::unordered_set<SliceId> fresh;
    for (const auto& e : batch.new_slices) {
        if (state.find(e.id) || !fresh.insert(e.id).second) {
            throw InvalidArgument("batch " + std::to_string(batch.update_index) + " re-introduces slice '" +
                                  e.id + "'");
        }
        SliceUpdate s;
        s.slice = state.size() + (fresh.size() - 1);
        s.x_new = &e.rows;
        s.is_new = true;
        // A brand-new slice starts from S_k = I.
        s.s_used = RowVector::Ones(r);
        entries.push_back(std::move(s));
    }

    auto slice_id = [&](const SliceUpdate& s) -> const SliceId& {
        return s.is_new ? batch.new_slices[s.slice - state.size()].id : state.ids[s.slice];
    };

    // Every new row stacked once, so the products with X_new run as single
    // products over the whole batch.
    std::vector<Index> offset(entries.size() + 1, 0);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        offset[i + 1] = offset[i] + entries[i].x_new->rows();
    }
    Matrix x_all(offset.back(), state.columns());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        x_all.middleRows(offset[i], entries[i].x_new->rows()) = *entries[i].x_new;
    }
    auto rows_of = [&](std::size_t i) { return offset[i + 1] - offset[i]; };

    Matrix v = state.v;
    std::vector<RowVector> w_rows(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        w_rows[i] = entries[i].s_used;
    }

    for (int pass = 0; pass < options.passes; ++pass) {
        const Matrix gram_v = v.transpose() * v;
        result.v_used = v;
        Matrix v_both(v.rows(), 2 * r);
        v_both << v, solve_gram_right(gram_v, v);
        // [X V, X V (V^T V)^{-1}] for every row.
        const Matrix xv_all = x_all * v_both;

        // Step 1: U_new for every slice in the batch, with the current V and S_k.
        detail::for_each_index(entries.size(), exec, [&](std::size_t i) {
            auto& s = entries[i];
            s.s_used = w_rows[i];
            const auto xv = xv_all.block(offset[i], 0, rows_of(i), r);
            if (spread_weights(s.s_used)) {
                s.u_new = xv_all.block(offset[i], r, rows_of(i), r) * s.s_used.cwiseInverse().asDiagonal();
                return;
            }
            const Matrix lhs = gram_v.cwiseProduct(s.s_used.transpose() * s.s_used);
            s.u_new = solve_gram_right(lhs, Matrix(xv * s.s_used.asDiagonal()), slice_id(s));
        });

        // Step 2: c_k, D_k and W(k,:).
        detail::for_each_index(entries.size(), exec, [&](std::size_t i) {
            auto& s = entries[i];
            const auto xv = xv_all.block(offset[i], 0, rows_of(i), r);
            s.c_new = s.u_new.cwiseProduct(xv).colwise().sum().transpose();
            s.d_new.noalias() = s.u_new.transpose().lazyProduct(s.u_new);
            if (!s.is_new) {
                s.c_new += lambda * state.helpers.c[s.slice];
                s.d_new += lambda * state.helpers.d[s.slice];
            }
            s.d_new = symmetrized(s.d_new);
            // Rows so far carry nothing in span(V): the system is all zeros and
            // any W(k,:) fits, so keep the one step 1 used.
            if (!(s.d_new.diagonal().maxCoeff() > 0.0)) {
                w_rows[i] = s.s_used;
                return;
            }
            w_rows[i] = solve_gram_right(gram_v.cwiseProduct(s.d_new), RowVector(s.c_new.transpose()),
                                         slice_id(s));
        });

        // Step 3: F, G with the refreshed S_k, then V.
        Matrix us_all(x_all.rows(), r);
        for (std::size_t i = 0; i < entries.size(); ++i) {
            us_all.middleRows(offset[i], rows_of(i)) = entries[i].u_new * w_rows[i].asDiagonal();
        }
        FgUpdate fg = stacked_fg(state.helpers.f, state.helpers.g, lambda, x_all, us_all);
        v = update_v(fg.f, fg.g);
        result.f_new = std::move(fg.f);
        result.g_new = std::move(fg.g);
    }

    // Commit.
    const std::size_t old_count = state.size();
    const std::size_t new_count = fresh.size();
    if (new_count > 0) {
        state.w.conservativeResize(static_cast<Index>(old_count + new_count), r);
        for (const auto& e : batch.new_slices) {
            state.ids.push_back(e.id);
        }
        state.u_blocks.resize(old_count + new_count);
        state.helpers.c.resize(old_count + new_count);
        state.helpers.d.resize(old_count + new_count);
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& s = entries[i];
        state.u_blocks[s.slice].push_back(s.u_new);
        state.w.row(static_cast<Index>(s.slice)) = w_rows[i];
        state.helpers.c[s.slice] = s.c_new;
        state.helpers.d[s.slice] = s.d_new;
    }
    state.helpers.f = result.f_new;
    state.helpers.g = result.g_new;
    state.v = std::move(v);
    state.update_index += 1;
    if (new_count > 0) {
        state.reindex();
    }
    return result;
}

} // namespace dash
