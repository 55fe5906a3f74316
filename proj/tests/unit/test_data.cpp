#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "macfm/data.hpp"
#include "macfm/errors.hpp"

using namespace macfm;

namespace {

RawTable mixed_table() {
    return parse_csv(
        "age,city,score\n"
        "30,a,1.5\n"
        "40,b,?\n"
        "?,a,2.5\n"
        "25,c,3.0\n"
        "35,b,NA\n"
        "50,a,0.5\n"
        "45,,2.0\n"
        "28,c,1.0\n"
        "33,b,4.0\n"
        "41,a,2.2\n");
}

}  // namespace

TEST_CASE("CSV parsing with sentinels") {
    const RawTable t = parse_csv("x,y\n1,2\n?,4\n5,6\n");
    CHECK(t.rows == 3);
    CHECK(t.missing_count() == 1);
    CHECK(t.column("x").missing[1] == 1);
    CHECK(t.column("y").numbers[2] == 6.0);

    const RawTable header_only = parse_csv("a,b,c\n");
    CHECK(header_only.rows == 0);
    CHECK(header_only.columns.size() == 3);
}

TEST_CASE("CSV quoting and trimming") {
    const RawTable t = parse_csv("name,v\n\"Smith, J\", 1\n\"say \"\"hi\"\"\",2\n plain ,3\n");
    REQUIRE(t.rows == 3);
    CHECK(t.column("name").role == ColumnRole::categorical);
    CHECK(t.column("name").labels[0] == "Smith, J");
    CHECK(t.column("name").labels[1] == "say \"hi\"");
    CHECK(t.column("name").labels[2] == "plain");
    CHECK(t.column("v").numbers[0] == 1.0);
}

TEST_CASE("CSV errors name the row and column") {
    CHECK_THROWS_AS(parse_csv("a,b\n1,2\n3\n"), DataError);
    SchemaHints hints;
    hints.numeric = {"a"};
    try {
        parse_csv("a,b\n1,2\nxyz,3\n", hints);
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("row 2") != std::string::npos);
        CHECK(msg.find("'a'") != std::string::npos);
    }
    CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), DataError);
}

TEST_CASE("schema hints force categorical columns") {
    SchemaHints hints;
    hints.categorical = {"code"};
    const RawTable t = parse_csv("code,v\n1,2\n2,3\n", hints);
    CHECK(t.column("code").role == ColumnRole::categorical);
    CHECK(t.column("code").labels[1] == "2");
}

TEST_CASE("CSV write and read round trip") {
    const RawTable t = mixed_table();
    const RawTable back = parse_csv(format_csv(t));
    CHECK(back.rows == t.rows);
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
        CHECK(back.columns[c].missing == t.columns[c].missing);
        CHECK(back.columns[c].role == t.columns[c].role);
        if (t.columns[c].role == ColumnRole::numeric) {
            for (std::size_t r = 0; r < t.rows; ++r)
                if (!t.columns[c].missing[r]) CHECK(back.columns[c].numbers[r] == t.columns[c].numbers[r]);
        }
    }
    const std::string tricky = format_csv(parse_csv("a\n0.1\n1e-300\n123456789.123456789\n"));
    const RawTable again = parse_csv(tricky);
    CHECK(again.column("a").numbers[0] == 0.1);
    CHECK(again.column("a").numbers[1] == 1e-300);
}

TEST_CASE("split sizes, disjointness and determinism") {
    for (std::size_t n : {2u, 3u, 10u, 101u, 32561u}) {
        const Split s = make_split(n, 123);
        CHECK(s.train.size() == static_cast<std::size_t>(std::floor(0.7 * double(n))));
        std::set<std::size_t> all(s.train.begin(), s.train.end());
        all.insert(s.test.begin(), s.test.end());
        CHECK(all.size() == n);
        CHECK(s.train.size() + s.test.size() == n);
        const Split again = make_split(n, 123);
        CHECK(again.train == s.train);
    }
    const Split adult = make_split(32561, 0);
    CHECK(adult.train.size() == 22792);
    CHECK(adult.test.size() == 9769);
}

TEST_CASE("standardization uses training rows only") {
    const RawTable raw = mixed_table();
    const DatasetView view = fit_transform(raw, 9);
    REQUIRE(view.schema.features.size() == 3);
    CHECK(view.schema.features[0].name == "age");
    CHECK(view.schema.features[1].name == "score");
    CHECK(view.schema.features[2].name == "city");
    CHECK(view.width() == 2 + 3);

    const RawColumn& age = raw.column("age");
    double sum = 0;
    std::size_t seen = 0;
    for (std::size_t r : view.split.train)
        if (!age.missing[r]) {
            sum += age.numbers[r];
            ++seen;
        }
    const double mean = sum / seen;
    double var = 0;
    for (std::size_t r : view.split.train)
        if (!age.missing[r]) var += (age.numbers[r] - mean) * (age.numbers[r] - mean);
    CHECK(view.schema.features[0].mean == doctest::Approx(mean).epsilon(1e-14));
    CHECK(view.schema.features[0].std == doctest::Approx(std::sqrt(var / seen)).epsilon(1e-14));

    CHECK(view.encoded(2, 0) == 0.0);
    CHECK_FALSE(view.observed(2, 0));
    for (std::size_t k = 2; k < 5; ++k) CHECK(view.encoded(6, k) == 0.0);
    CHECK_FALSE(view.observed(6, 2));
    CHECK(view.schema.numeric_mask() == std::vector<std::uint8_t>{1, 1, 0, 0, 0});
}

TEST_CASE("analytic z-scores and one-hot layout") {
    Schema schema;
    schema.source_names = {"x", "c"};
    schema.features = {ColumnSchema{.name = "x", .mean = 2.0, .std = std::sqrt(2.0 / 3.0), .source_index = 0},
                       ColumnSchema{.name = "c", .role = ColumnRole::categorical, .categories = {"a", "b"},
                                    .source_index = 1}};
    const Encoded e = encode(parse_csv("x,c\n1,a\n2,b\n3,b\n"), schema);
    CHECK(e.values(0, 0) == doctest::Approx(-1.2247448714));
    CHECK(e.values(1, 0) == 0.0);
    CHECK(e.values(2, 0) == doctest::Approx(1.2247448714));
    CHECK(e.values(1, 1) == 0.0);
    CHECK(e.values(1, 2) == 1.0);
}

TEST_CASE("inverse transform decodes and round trips") {
    Schema schema;
    schema.source_names = {"x", "c"};
    schema.features = {ColumnSchema{.name = "x", .mean = 5.0, .std = 2.0, .source_index = 0},
                       ColumnSchema{.name = "c", .role = ColumnRole::categorical, .categories = {"a", "b"},
                                    .source_index = 1}};
    const RawTable dec = inverse_transform(schema, Tensor2{{0.0, 0.2, 0.9}, {1.0, 0.5, 0.5}});
    CHECK(dec.column("x").numbers[0] == 5.0);
    CHECK(dec.column("x").numbers[1] == 7.0);
    CHECK(dec.column("c").labels[0] == "b");
    CHECK(dec.column("c").labels[1] == "a");
    CHECK_THROWS_AS(inverse_transform(schema, Tensor2(1, 2)), DimensionError);

    const RawTable complete = parse_csv("u,v,w\n1.5,x,10\n-2,y,11\n3.25,x,12.5\n0,z,13\n7,y,14\n");
    const DatasetView view = fit_transform(complete, 4);
    const RawTable back = inverse_transform(view.schema, view.encoded);
    for (const auto& col : complete.columns) {
        const RawColumn& b = back.column(col.name);
        for (std::size_t r = 0; r < complete.rows; ++r) {
            if (col.role == ColumnRole::numeric)
                CHECK(b.numbers[r] == doctest::Approx(col.numbers[r]).epsilon(1e-12));
            else
                CHECK(b.labels[r] == col.labels[r]);
        }
    }
}

TEST_CASE("degenerate columns and tables") {
    const RawTable raw = parse_csv("a,b,c\n1,?,5\n2,?,5\n3,?,5\n4,?,5\n");
    const DatasetView view = fit_transform(raw, 1);
    CHECK(view.feature_count() == 2);
    CHECK(view.schema.features[1].std == 1.0);
    const RawTable back = inverse_transform(view.schema, view.encoded);
    CHECK(back.column("b").missing_count() == 4);

    CHECK_THROWS_AS(fit_transform(parse_csv("a\n1\n"), 1), DataError);
}

TEST_CASE("unseen categories are treated as missing") {
    const DatasetView view = fit_transform(parse_csv("c,v\na,1\nb,2\na,3\n"), 2);
    const Encoded e = encode(parse_csv("c,v\nzz,1\nb,2\n"), view.schema);
    CHECK_FALSE(e.observed(0, 1));
    CHECK(e.observed(1, 1));
}

TEST_CASE("schema sidecar round trip") {
    const DatasetView view = fit_transform(mixed_table(), 3);
    const auto path = std::filesystem::temp_directory_path() / "macfm_test_schema.json";
    save_schema(path, view.schema);
    CHECK(load_schema(path) == view.schema);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(schema_from_json("{\"version\": 99}"), FormatError);
    CHECK_THROWS_AS(schema_from_json("not json"), FormatError);
}

TEST_CASE("feature matrix is standardized per feature") {
    const DatasetView view = fit_transform(mixed_table(), 3);
    const Tensor2 fm = view.feature_matrix();
    CHECK(fm.cols() == view.feature_count());
    CHECK(fm(2, 0) == 0.0);
    double mean = 0.0;
    std::size_t seen = 0;
    for (std::size_t r = 0; r < fm.rows(); ++r)
        if (view.observed(r, 2)) {
            mean += fm(r, 2);
            ++seen;
        }
    CHECK(std::abs(mean / seen) < 1e-12);
}
