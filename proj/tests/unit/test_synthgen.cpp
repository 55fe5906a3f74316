#include <doctest.h>

#include <cmath>

#include "macfm/errors.hpp"
#include "macfm/synthgen.hpp"

using namespace macfm;

namespace {

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= a.size();
    mb /= b.size();
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("identity covariance gives uncorrelated columns") {
    SynthSpec spec;
    spec.n = 5000;
    spec.d_numeric = 5;
    spec.covariance = Covariance::identity;
    spec.seed = 3;
    const RawTable t = generate(spec);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = i + 1; j < 5; ++j)
            CHECK(std::abs(correlation(t.columns[i].numbers, t.columns[j].numbers)) < 0.05);
}

TEST_CASE("AR covariance matches rho on adjacent columns") {
    SynthSpec spec;
    spec.n = 5000;
    spec.d_numeric = 6;
    spec.rho = 0.9;
    spec.seed = 4;
    const RawTable t = generate(spec);
    for (std::size_t i = 0; i + 1 < 6; ++i)
        CHECK(correlation(t.columns[i].numbers, t.columns[i + 1].numbers) == doctest::Approx(0.9).epsilon(0.034));
    const Tensor2 cov = covariance_matrix(spec);
    CHECK(cov(0, 2) == doctest::Approx(0.81));
}

TEST_CASE("layout, completeness and determinism") {
    SynthSpec spec;
    spec.n = 300;
    spec.seed = 11;
    const RawTable a = generate(spec);
    CHECK(a.rows == 300);
    CHECK(a.columns.size() == spec.d_numeric + spec.d_categorical);
    CHECK(a.missing_count() == 0);
    CHECK(a.columns[0].name == "x0");
    CHECK(a.columns[spec.d_numeric].name == "cat0");
    CHECK(a.columns[spec.d_numeric].role == ColumnRole::categorical);
    CHECK(format_csv(a) == format_csv(generate(spec)));
    spec.seed = 12;
    CHECK(format_csv(a) != format_csv(generate(spec)));
}

TEST_CASE("low-rank covariance and invalid settings") {
    SynthSpec spec;
    spec.covariance = Covariance::low_rank;
    spec.rank = 2;
    CHECK_NOTHROW(generate(spec));
    spec = SynthSpec{};
    spec.rho = 1.5;
    CHECK_THROWS_AS(generate(spec), ConfigError);
    spec = SynthSpec{};
    spec.n_categories = 1;
    CHECK_THROWS_AS(generate(spec), ConfigError);
    CHECK_THROWS_AS(parse_covariance("banded"), ConfigError);
    CHECK(parse_covariance(to_string(Covariance::low_rank)) == Covariance::low_rank);
}
