#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "macfm/errors.hpp"
#include "macfm/rng.hpp"
#include "macfm/schedule.hpp"

using namespace macfm;

namespace {
std::vector<Schedule> all_schedules() {
    return {Schedule::linear(), Schedule::power(1.0), Schedule::power(1.5), Schedule::power(2.0),
            Schedule::power(3.0), Schedule::cosine()};
}
}  // namespace

TEST_CASE("schedule values") {
    CHECK(Schedule::linear().eval(0.5) == 0.5);
    CHECK(Schedule::power(2).eval(0.5) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(Schedule::cosine().eval(0.5) == doctest::Approx(0.5).epsilon(1e-15));
    for (const auto& s : all_schedules()) {
        CHECK(s.eval(0.0) == doctest::Approx(0.0));
        CHECK(s.eval(1.0) == doctest::Approx(1.0));
    }
}

TEST_CASE("schedule derivatives") {
    CHECK(Schedule::linear().deriv(0.3) == 1.0);
    CHECK(Schedule::cosine().deriv(0.5) == doctest::Approx(std::numbers::pi / 2).epsilon(1e-15));
    CHECK(Schedule::power(3).deriv(0.5) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(Schedule::power(2).deriv(0.0) == 0.0);
    CHECK(Schedule::power(1).deriv(0.0) == 1.0);

    const double h = 1e-5;
    for (const auto& s : all_schedules()) {
        for (double t = 0.01; t < 0.99; t += 0.01) {
            const double fd = (s.eval(t + h) - s.eval(t - h)) / (2 * h);
            CHECK(std::abs(fd - s.deriv(t)) < 1e-6);
            CHECK(s.deriv(t) > 0.0);
        }
    }
}

TEST_CASE("schedule inverses") {
    CHECK(Schedule::power(2).inverse(0.25) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(Schedule::cosine().inverse(0.5) == doctest::Approx(0.5).epsilon(1e-15));
    Rng rng(3);
    for (const auto& s : all_schedules()) {
        for (int i = 0; i < 1000; ++i) {
            const double u = rng.uniform();
            CHECK(std::abs(s.eval(s.inverse(u)) - u) < 1e-12);
        }
        for (double t = 0.001; t <= 0.999; t += 0.001) CHECK(std::abs(s.inverse(s.eval(t)) - t) < 1e-10);
    }
}

TEST_CASE("schedules are strictly increasing") {
    for (const auto& s : all_schedules()) {
        double prev = s.eval(0.0);
        bool increasing = true;
        for (int k = 1; k <= 10000; ++k) {
            const double v = s.eval(k / 10000.0);
            increasing = increasing && v > prev;
            prev = v;
        }
        CHECK(increasing);
    }
}

TEST_CASE("schedule argument errors") {
    CHECK_THROWS_AS(Schedule::linear().eval(1.5), DomainError);
    CHECK_THROWS_AS(Schedule::cosine().deriv(-0.1), DomainError);
    CHECK_THROWS_AS(Schedule::power(2).inverse(2.0), DomainError);
    CHECK_THROWS_AS(Schedule::power(0.5), ConfigError);
    CHECK_THROWS_AS(Schedule::power(3.5), ConfigError);
    CHECK_THROWS_AS(parse_schedule_kind("sigmoid"), ConfigError);
    CHECK(parse_schedule_kind("cosine") == ScheduleKind::cosine);
}

TEST_CASE("step grids") {
    const StepGrid g = make_grid(Schedule::linear(), 4);
    CHECK(g.times == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    CHECK(g.dt(1) == 0.25);

    const StepGrid p = make_grid(Schedule::power(2), 2, GridMode::power_s, 2.0);
    REQUIRE(p.times.size() == 3);
    CHECK(p.times[0] == 0.0);
    CHECK(p.times[1] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.times[2] == 1.0);

    for (const auto& s : all_schedules()) {
        for (std::size_t K : {1, 3, 10, 50}) {
            for (double beta : {1.0, 1.5, 3.0}) {
                const StepGrid grid = make_grid(s, K, GridMode::power_s, beta);
                CHECK(grid.times.front() == 0.0);
                CHECK(grid.times.back() == 1.0);
                for (std::size_t k = 0; k < K; ++k) CHECK(grid.dt(k) > 0.0);
                for (std::size_t k = 1; k < K; ++k)
                    CHECK(s.eval(grid.times[k]) == doctest::Approx(std::pow(double(k) / K, beta)));
            }
        }
    }
    CHECK_THROWS_AS(make_grid(Schedule::linear(), 0), ConfigError);
    CHECK_THROWS_AS(make_grid(Schedule::linear(), 4, GridMode::power_s, 0.5), ConfigError);
}
