#include <doctest.h>

#include <functional>

#include "macfm/errors.hpp"
#include "macfm/tape.hpp"
#include "support.hpp"

using macfm::Tensor2;
using macfm::ad::Tape;
using macfm::ad::Var;

namespace {

/// Central-difference check of d(build(x))/dx against the tape gradient.
double fd_check(const Tensor2& x0, const std::function<Var(Tape&, Var)>& build) {
    Tape tape;
    const Var x = tape.variable(x0);
    tape.backward(build(tape, x));
    const Tensor2 analytic = tape.grad(x);

    Tensor2 numeric(x0.rows(), x0.cols());
    const double h = 1e-6;
    for (std::size_t i = 0; i < x0.size(); ++i) {
        Tensor2 xp = x0, xm = x0;
        xp[i] += h;
        xm[i] -= h;
        Tape tp, tm;
        const double fp = tp.scalar(build(tp, tp.constant(xp)));
        const double fm = tm.scalar(build(tm, tm.constant(xm)));
        numeric[i] = (fp - fm) / (2 * h);
    }
    return testing::max_rel_error(analytic.flat(), numeric.flat(), 1e-6);
}

}  // namespace

TEST_CASE("matmul values and shape errors") {
    Tape tape;
    const Var a = tape.constant(Tensor2{{1, 0}, {0, 1}});
    const Var b = tape.constant(Tensor2{{3, 4}, {5, 6}});
    CHECK(tape.value(tape.matmul(a, b)) == Tensor2{{3, 4}, {5, 6}});
    CHECK(tape.value(tape.matmul(tape.constant(Tensor2{{2}}), tape.constant(Tensor2{{3}}))) == Tensor2{{6}});
    const Var bad = tape.constant(Tensor2(3, 1));
    CHECK_THROWS_AS(tape.matmul(a, bad), macfm::DimensionError);
    CHECK_THROWS_AS(tape.add(a, bad), macfm::DimensionError);
}

TEST_CASE("matmul backward is dC B^T and A^T dC") {
    Tape tape;
    const Tensor2 A{{1, 2}, {3, 4}};
    const Tensor2 B{{5, 6, 7}, {8, 9, 10}};
    const Var a = tape.variable(A);
    const Var b = tape.variable(B);
    const Var c = tape.matmul(a, b);
    tape.backward(tape.sum_sq_masked(c, tape.constant(Tensor2(2, 3, 1.0))));
    // dL/dC = 2C
    const Tensor2& C = tape.value(c);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 2; ++k) {
            double expect = 0.0;
            for (std::size_t j = 0; j < 3; ++j) expect += 2 * C(i, j) * B(k, j);
            CHECK(tape.grad(a)(i, k) == doctest::Approx(expect));
        }
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t j = 0; j < 3; ++j) {
            double expect = 0.0;
            for (std::size_t i = 0; i < 2; ++i) expect += A(i, k) * 2 * C(i, j);
            CHECK(tape.grad(b)(k, j) == doctest::Approx(expect));
        }
}

TEST_CASE("every primitive matches finite differences") {
    const Tensor2 x = testing::random_tensor(3, 4, 11);
    const Tensor2 w = testing::random_tensor(4, 2, 12);
    const Tensor2 y = testing::random_tensor(3, 4, 13);
    const Tensor2 row = testing::random_tensor(1, 4, 14);
    const Tensor2 mask{{1, 0, 1, 1}, {0, 1, 1, 0}, {1, 1, 0, 1}};
    const Tensor2 ones(3, 2, 1.0);
    const Tensor2 ones4(3, 4, 1.0);

    CHECK(fd_check(x, [&](Tape& t, Var v) {
              return t.sum_sq_masked(t.matmul(v, t.constant(w)), t.constant(ones));
          }) < 1e-6);
    CHECK(fd_check(x, [&](Tape& t, Var v) { return t.sum_sq_masked(t.silu(v), t.constant(mask)); }) < 1e-6);
    CHECK(fd_check(x, [&](Tape& t, Var v) {
              return t.sum_sq_masked(t.hadamard(v, t.constant(y)), t.constant(ones4));
          }) < 1e-6);
    CHECK(fd_check(x, [&](Tape& t, Var v) {
              return t.sum_sq_masked(t.sub(t.scale(v, -1.5), t.constant(y)), t.constant(mask));
          }) < 1e-6);
    CHECK(fd_check(row, [&](Tape& t, Var v) {
              return t.sum_sq_masked(t.broadcast_add_row(t.constant(x), v), t.constant(mask));
          }) < 1e-6);
}

TEST_CASE("gradients accumulate across consumers") {
    Tape tape;
    const Var x = tape.variable(Tensor2{{2.0}});
    // f = x*x + 3x, f' = 2x + 3 = 7
    const Var f = tape.add(tape.hadamard(x, x), tape.scale(x, 3.0));
    tape.backward(tape.sum_sq_masked(tape.add(f, tape.constant(Tensor2{{0.0}})), tape.constant(Tensor2{{1.0}})));
    // d(f^2)/dx = 2 f f' = 2 * 10 * 7
    CHECK(tape.grad(x)(0, 0) == doctest::Approx(140.0));
}

TEST_CASE("silu is stable for large inputs") {
    Tape tape;
    const Var v = tape.silu(tape.constant(Tensor2{{-800.0, 800.0, 0.0}}));
    CHECK(tape.value(v)(0, 0) == doctest::Approx(0.0));
    CHECK(tape.value(v)(0, 1) == doctest::Approx(800.0));
    CHECK(tape.value(v)(0, 2) == 0.0);
    CHECK(tape.value(v).all_finite());
}

TEST_CASE("grad requires a backward pass over a tracked node") {
    Tape tape;
    const Var c = tape.constant(Tensor2{{1.0}});
    const Var x = tape.variable(Tensor2{{1.0}});
    CHECK_THROWS(tape.grad(x));
    tape.backward(tape.sum_sq_masked(x, c));
    CHECK_THROWS(tape.grad(c));
    CHECK(tape.grad(x)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("tensor construction checks lengths") {
    CHECK_THROWS_AS(Tensor2(2, 2, std::vector<double>{1, 2, 3}), macfm::DimensionError);
    Tensor2 t(2, 3, 1.5);
    CHECK(t.shape_string() == "2x3");
    CHECK(t.all_finite());
    t(1, 2) = std::nan("");
    CHECK_FALSE(t.all_finite());
}
