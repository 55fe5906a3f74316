#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "macfm/errors.hpp"
#include "macfm/masking.hpp"
#include "support.hpp"

using namespace macfm;

namespace {

/// Two-sided z statistic for the difference of two proportions.
double two_proportion_z(std::size_t k1, std::size_t n1, std::size_t k2, std::size_t n2) {
    const double p1 = double(k1) / n1, p2 = double(k2) / n2;
    const double p = double(k1 + k2) / (n1 + n2);
    return (p1 - p2) / std::sqrt(p * (1 - p) * (1.0 / n1 + 1.0 / n2));
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("macfm_test_" + name);
}

}  // namespace

TEST_CASE("MCAR rate, determinism and row repair") {
    const MissMask m = gen_mcar(1000, 10, 0.3, 5);
    CHECK(m.realized_rate() >= 0.28);
    CHECK(m.realized_rate() <= 0.32);
    CHECK(gen_mcar(1000, 10, 0.3, 5).bits == m.bits);
    CHECK_FALSE(gen_mcar(1000, 10, 0.3, 6).bits == m.bits);

    const MissMask dense = gen_mcar(500, 2, 0.9, 1);
    for (std::size_t r = 0; r < dense.rows(); ++r) CHECK(dense.bits.count_row(r) < 2);
}

TEST_CASE("rates outside (0, 1) are rejected") {
    CHECK_THROWS_AS(gen_mcar(10, 3, 1.0, 0), ConfigError);
    CHECK_THROWS_AS(gen_mcar(10, 3, 0.0, 0), ConfigError);
    CHECK_THROWS_AS(gen_mnar(testing::random_tensor(10, 3, 1), 1.2, 0), ConfigError);
    CHECK_THROWS_AS(gen_mar(testing::random_tensor(10, 1, 1), 0.3, 0), ConfigError);
}

TEST_CASE("calibration for every mechanism and rate") {
    const Tensor2 data = testing::random_tensor(2000, 8, 42);
    for (Mechanism mech : {Mechanism::mcar, Mechanism::mar, Mechanism::mnar}) {
        for (double rate : {0.3, 0.5, 0.7}) {
            const MissMask m = generate_mask(mech, data, rate, 99);
            CAPTURE(to_string(mech));
            CAPTURE(rate);
            CHECK(std::abs(m.realized_rate() - rate) <= 0.02);
        }
    }
}

TEST_CASE("MAR drivers stay observed and drive missingness") {
    const Tensor2 data = testing::random_tensor(5000, 10, 7);
    const MissMask m = gen_mar(data, 0.5, 3);
    const auto drivers = std::count(m.eligible.begin(), m.eligible.end(), std::uint8_t{0});
    CHECK(drivers == 3);
    for (std::size_t c = 0; c < m.cols(); ++c) {
        if (m.eligible[c]) continue;
        for (std::size_t r = 0; r < m.rows(); ++r) CHECK_FALSE(m.bits(r, c));
    }
    CHECK(std::abs(m.realized_rate() - 0.5) <= 0.02);

    // One driver, one masked column: point-biserial correlation must be significant.
    Tensor2 mono(5000, 2);
    for (std::size_t r = 0; r < 5000; ++r) {
        mono(r, 0) = -2.0 + 4.0 * double(r) / 4999.0;
        mono(r, 1) = mono(r, 0);
    }
    const MissMask pair = gen_mar(mono, 0.3, 11);
    const std::size_t driver = pair.eligible[0] ? 1 : 0;
    const std::size_t target = 1 - driver;
    double mx = 0, my = 0;
    for (std::size_t r = 0; r < 5000; ++r) {
        mx += mono(r, driver);
        my += pair.bits(r, target);
    }
    mx /= 5000;
    my /= 5000;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t r = 0; r < 5000; ++r) {
        const double dx = mono(r, driver) - mx, dy = pair.bits(r, target) - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    const double corr = sxy / std::sqrt(sxx * syy);
    const double t_stat = std::abs(corr) * std::sqrt(4998.0 / (1 - corr * corr));
    CHECK(t_stat > 2.576);
}

TEST_CASE("MNAR masks upper values more often") {
    // Extra noise columns keep the full-row repair from touching the signal column.
    Tensor2 col = testing::random_tensor(5000, 8, 3);
    for (std::size_t r = 0; r < 5000; ++r) col(r, 0) = double(r);
    for (double rate : {0.3, 0.5, 0.7}) {
        const MissMask m = gen_mnar(col, rate, 17);
        std::size_t low = 0, high = 0;
        for (std::size_t r = 0; r < 1250; ++r) low += m.bits(r, 0);
        for (std::size_t r = 3750; r < 5000; ++r) high += m.bits(r, 0);
        CHECK(two_proportion_z(high, 1250, low, 1250) > 2.326);
        CHECK(std::abs(m.realized_rate() - rate) <= 0.02);
        CHECK(gen_mnar(col, rate, 17).bits == m.bits);
    }
}

TEST_CASE("MNAR constant column falls back to MCAR") {
    Tensor2 data = testing::random_tensor(4000, 8, 5);
    for (std::size_t r = 0; r < 4000; ++r) data(r, 0) = 3.0;
    const MissMask m = gen_mnar(data, 0.4, 1);
    std::size_t missing = 0;
    for (std::size_t r = 0; r < 4000; ++r) missing += m.bits(r, 0);
    CHECK(std::abs(double(missing) / 4000 - 0.4) < 0.03);
}

TEST_CASE("training partition is disjoint and covers observed cells") {
    const MissMask holes = gen_mcar(400, 25, 0.2, 8);
    const BinaryGrid observed = holes.bits.negated();
    const MaskTriple p = sample_train_partition(observed, 0.3, 0.3, 4);
    std::size_t cond = 0, tgt = 0, total = 0;
    for (std::size_t r = 0; r < 400; ++r) {
        for (std::size_t c = 0; c < 25; ++c) {
            const int roles = p.obs(r, c) + p.cond(r, c) + p.tgt(r, c);
            CHECK(roles == (observed(r, c) ? 1 : 0));
            cond += p.cond(r, c);
            tgt += p.tgt(r, c);
            total += observed(r, c);
        }
    }
    CHECK(std::abs(double(cond) / total - 0.3) <= 0.03);
    CHECK(std::abs(double(tgt) / total - 0.3) <= 0.03);

    const MaskTriple none = sample_train_partition(observed, 0.0, 0.3, 4);
    CHECK(none.cond.count() == 0);
    CHECK_THROWS_AS(sample_train_partition(observed, 0.6, 0.4, 1), ConfigError);
}

TEST_CASE("training partition fractions on 1e5 cells") {
    const BinaryGrid observed(1000, 100, true);
    const MaskTriple p = sample_train_partition(observed, 0.3, 0.3, 21);
    CHECK(std::abs(p.cond.count() / 1e5 - 0.3) <= 0.03);
    CHECK(std::abs(p.tgt.count() / 1e5 - 0.3) <= 0.03);
    CHECK(std::abs(p.obs.count() / 1e5 - 0.4) <= 0.03);
}

TEST_CASE("training partition forces a target") {
    BinaryGrid observed(1, 3, true);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        CHECK(sample_train_partition(observed, 0.0, 0.01, seed).tgt.count() >= 1);
    }
}

TEST_CASE("inference partition keeps observed cells") {
    BinaryGrid observed(2, 2, true);
    observed.set(0, 1, false);
    const MaskTriple p = inference_partition(observed);
    CHECK(p.obs == observed);
    CHECK(p.cond.count() == 0);
    CHECK(p.tgt == observed.negated());
    CHECK(p.keep() == observed);
}

TEST_CASE("mask files round trip and reject corruption") {
    const MissMask m = gen_mar(testing::random_tensor(37, 5, 2), 0.3, 12);
    const auto path = temp_path("mask.bin");
    save_mask(path, m);
    const MissMask back = load_mask(path);
    CHECK(back.bits == m.bits);
    CHECK(back.mechanism == Mechanism::mar);
    CHECK(back.nominal_rate == 0.3);
    CHECK(back.seed == 12);
    CHECK(back.eligible == m.eligible);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.put('X');
    }
    CHECK_THROWS_AS(load_mask(path), FormatError);

    save_mask(path, m);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 2);
    CHECK_THROWS_AS(load_mask(path), FormatError);

    const auto csv = temp_path("mask.csv");
    write_mask_csv(csv, m.bits);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(std::count(line.begin(), line.end(), ',') == 4);
    std::filesystem::remove(path);
    std::filesystem::remove(csv);
}

TEST_CASE("feature grids expand onto encoded columns") {
    BinaryGrid g(2, 2);
    g.set(0, 1, true);
    g.set(1, 0, true);
    const BinaryGrid e = expand_columns(g, {0, 1, 1, 1});
    CHECK(e.cols() == 4);
    CHECK_FALSE(e(0, 0));
    CHECK(e(0, 3));
    CHECK(e(1, 0));
    CHECK_FALSE(e(1, 2));
    CHECK_THROWS_AS(expand_columns(g, {0, 2}), DimensionError);
}
