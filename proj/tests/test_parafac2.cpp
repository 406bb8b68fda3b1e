#include "support/oracles.hpp"

#include "dash/parafac2.hpp"
#include "dash/synth.hpp"

#include <doctest.h>

using namespace dash;

namespace {

FactorSet single(const Matrix& u, const RowVector& w, const Matrix& v) {
    FactorSet f;
    f.ids = {"a"};
    f.u = {u};
    f.w = w;
    f.v = v;
    return f;
}

IrregularTensor planted(std::uint64_t seed, std::size_t slices = 20, Index cols = 15, Index rank = 3) {
    SynthParams p;
    p.slices = slices;
    p.columns = cols;
    p.rank = rank;
    p.duration = 40;
    return synthesize(p, seed);
}

} // namespace

TEST_CASE("reconstruct multiplies U diag(w) V^T") {
    Matrix u(2, 1);
    u << 1, 2;
    Matrix v(2, 1);
    v << 1, 1;
    const Matrix x = reconstruct(single(u, RowVector::Constant(1, 3.0), v), 0);
    Matrix expected(2, 2);
    expected << 3, 3, 6, 6;
    CHECK(x == expected);

    CHECK(reconstruct(single(u, RowVector::Zero(1), v), 0).isZero(0.0));

    const Matrix eye = Matrix::Identity(3, 3);
    CHECK(reconstruct(single(eye, RowVector::Ones(3), eye), 0) == eye);
    CHECK_THROWS_AS(reconstruct(single(u, RowVector::Ones(1), v), 1), InvalidArgument);
}

TEST_CASE("rank-one slice is recovered") {
    Vector a(5), b(4);
    a << 1, -2, 0.5, 3, 1;
    b << 2, 0.1, -1, 4;
    IrregularTensor t(4);
    t.add_slice({"x", a * b.transpose(), 0});
    AlsOptions o;
    o.rank = 1;
    for (const auto init : {AlsInit::Svd, AlsInit::Random}) {
        o.init = init;
        const AlsResult r = parafac2_als(t, o);
        CHECK((reconstruct(r.factors, 0) - t[0].rows).cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("noise-free planted tensor is fitted to relative error below 1e-6") {
    const IrregularTensor t = planted(3);
    AlsOptions o;
    o.rank = 3;
    o.max_iters = 3000;
    const AlsResult r = parafac2_als(t, o);
    CHECK(r.relative_error < 1e-6);
    CHECK(std::sqrt(parafac2_loss(t, r.factors) / t.squared_norm()) == doctest::Approx(r.relative_error));
}

TEST_CASE("property: loss never increases across sweeps") {
    oracle::Gen gen(21);
    for (int trial = 0; trial < 12; ++trial) {
        SynthParams p;
        p.slices = static_cast<std::size_t>(gen.integer(2, 8));
        p.columns = gen.integer(4, 9);
        p.rank = gen.integer(1, 3);
        p.duration = 30;
        p.noise = gen.uniform(0.0, 0.3);
        const IrregularTensor t = synthesize(p, static_cast<std::uint64_t>(trial));
        AlsOptions o;
        o.rank = gen.integer(1, static_cast<int>(p.rank) + 1);
        o.max_iters = 10;
        o.tolerance = 0.0;
        o.seed = static_cast<std::uint64_t>(trial);
        o.init = trial % 2 == 0 ? AlsInit::Svd : AlsInit::Random;
        const AlsResult r = parafac2_als(t, o);
        for (std::size_t i = 1; i < r.loss_log.size(); ++i) {
            CHECK(r.loss_log[i] <= r.loss_log[i - 1] * (1.0 + 1e-10));
        }
    }
}

TEST_CASE("property: Q_k are column-orthonormal and U_k = Q_k H") {
    oracle::Gen gen(22);
    for (int trial = 0; trial < 8; ++trial) {
        const IrregularTensor t = oracle::random_stream(gen, 10, 8, 4, 0).initial;
        AlsOptions o;
        o.rank = std::min<Index>(2, t.columns());
        o.seed = static_cast<std::uint64_t>(trial);
        const AlsResult r = parafac2_als(t, o);
        for (std::size_t k = 0; k < t.size(); ++k) {
            const Matrix qtq = r.q[k].transpose() * r.q[k];
            CHECK((qtq - Matrix::Identity(o.rank, o.rank)).cwiseAbs().maxCoeff() < 1e-10);
            CHECK((r.factors.u[k] - r.q[k] * r.h).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(reconstruct(r.factors, k).rows() == t[k].num_rows());
            CHECK(reconstruct(r.factors, k).cols() == t.columns());
        }
    }
}

TEST_CASE("rank above min(J, min I_k) is rejected") {
    IrregularTensor t(3);
    t.add_slice({"a", Matrix::Ones(5, 3), 0});
    t.add_slice({"b", Matrix::Ones(2, 3), 0});
    AlsOptions o;
    o.rank = 3;
    CHECK_THROWS_AS(parafac2_als(t, o), InvalidArgument);
    o.rank = 2;
    o.max_iters = 0;
    CHECK_THROWS_AS(parafac2_als(t, o), InvalidArgument);
    CHECK_THROWS_AS(parafac2_als(IrregularTensor(3), AlsOptions{}), InvalidArgument);
}

TEST_CASE("non-finite input names the slice") {
    IrregularTensor t(2);
    t.add_slice({"good", Matrix::Ones(3, 2), 0});
    Matrix bad = Matrix::Ones(3, 2);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    t.add_slice({"bad", bad, 0});
    AlsOptions o;
    o.rank = 1;
    try {
        parafac2_als(t, o);
        FAIL("expected a solver error");
    } catch (const SolverError& e) {
        CHECK(e.slice() == "bad");
    }
}

TEST_CASE("fixed seed gives identical factors, parallel mode agrees closely") {
    const IrregularTensor t = planted(9, 12, 10, 3);
    AlsOptions o;
    o.rank = 3;
    o.seed = 4;
    o.init = AlsInit::Random;
    const AlsResult a = parafac2_als(t, o);
    const AlsResult b = parafac2_als(t, o);
    CHECK(a.factors.v == b.factors.v);
    CHECK(a.factors.w == b.factors.w);
    CHECK(a.loss_log == b.loss_log);
    o.execution.deterministic = false;
    const AlsResult c = parafac2_als(t, o);
    CHECK(oracle::relative(c.factors.v - a.factors.v, a.factors.v) < 1e-9);
}

TEST_CASE("early exit stops once the loss settles") {
    const IrregularTensor t = planted(5, 6, 6, 2);
    AlsOptions o;
    o.rank = 2;
    o.max_iters = 5000;
    const AlsResult r = parafac2_als(t, o);
    CHECK(r.loss_log.size() < 5000);
}

TEST_CASE("factor sets validate their shapes") {
    FactorSet f = single(Matrix::Ones(3, 2), RowVector::Ones(2), Matrix::Ones(4, 2));
    CHECK_NOTHROW(f.validate());
    f.w = Matrix::Ones(1, 3);
    CHECK_THROWS_AS(f.validate(), InvalidArgument);
    f.w = Matrix::Ones(1, 2);
    f.u[0] = Matrix::Ones(3, 1);
    CHECK_THROWS_AS(f.validate(), InvalidArgument);
    f.ids.push_back("extra");
    CHECK_THROWS_AS(f.validate(), InvalidArgument);
}
