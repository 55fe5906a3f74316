#include "macfm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "macfm/errors.hpp"
#include "macfm/log.hpp"
#include "macfm/rng.hpp"

namespace macfm {
namespace {

constexpr int kSchemaVersion = 1;

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

/// RFC 4180-ish record splitter; quoted fields may contain commas, quotes and newlines.
std::vector<std::vector<std::string>> split_records(const std::string& text, const std::string& source) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool any = false;
    std::size_t line = 1;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') ++line;
                field.push_back(ch);
            }
            continue;
        }
        switch (ch) {
            case '"':
                quoted = true;
                any = true;
                break;
            case ',':
                record.push_back(std::move(field));
                field.clear();
                any = true;
                break;
            case '\r':
                break;
            case '\n':
                if (any || !field.empty()) {
                    record.push_back(std::move(field));
                    records.push_back(std::move(record));
                }
                record.clear();
                field.clear();
                any = false;
                ++line;
                break;
            default:
                field.push_back(ch);
                any = true;
        }
    }
    if (quoted) throw DataError(source + ": unterminated quoted field near line " + std::to_string(line));
    if (any || !field.empty()) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    return records;
}

bool parse_number(const std::string& s, double& out) {
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc() && ptr == last && std::isfinite(out);
}

std::string format_number(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

bool contains(const std::vector<std::string>& v, const std::string& s) {
    return std::find(v.begin(), v.end(), s) != v.end();
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace

std::string to_string(ColumnRole role) { return role == ColumnRole::numeric ? "numeric" : "categorical"; }

std::size_t RawColumn::missing_count() const {
    return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

std::size_t RawTable::missing_count() const {
    std::size_t total = 0;
    for (const auto& c : columns) total += c.missing_count();
    return total;
}

const RawColumn& RawTable::column(const std::string& name) const {
    for (const auto& c : columns)
        if (c.name == name) return c;
    throw DataError("no column named '" + name + "'");
}

RawTable parse_csv(const std::string& text, const SchemaHints& hints, const std::string& source) {
    auto records = split_records(text, source);
    if (records.empty()) throw DataError(source + ": missing header row");

    const auto& header = records.front();
    const std::size_t ncols = header.size();
    RawTable table;
    table.rows = records.size() - 1;
    table.columns.resize(ncols);
    for (std::size_t c = 0; c < ncols; ++c) table.columns[c].name = trim(header[c]);
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != ncols) {
            throw DataError(source + ": row " + std::to_string(r) + " has " + std::to_string(records[r].size()) +
                            " fields, header has " + std::to_string(ncols));
        }
    }

    for (std::size_t c = 0; c < ncols; ++c) {
        RawColumn& col = table.columns[c];
        col.missing.assign(table.rows, 0);
        std::vector<std::string> cells(table.rows);
        for (std::size_t r = 0; r < table.rows; ++r) {
            cells[r] = trim(records[r + 1][c]);
            if (contains(hints.sentinels, cells[r])) col.missing[r] = 1;
        }

        const bool forced_cat = contains(hints.categorical, col.name);
        const bool forced_num = contains(hints.numeric, col.name);
        bool numeric = !forced_cat;
        std::vector<double> numbers(table.rows, 0.0);
        for (std::size_t r = 0; r < table.rows && numeric; ++r) {
            if (col.missing[r]) continue;
            if (!parse_number(cells[r], numbers[r])) {
                if (forced_num) {
                    throw DataError(source + ": row " + std::to_string(r + 1) + ", column '" + col.name +
                                    "': cannot parse '" + cells[r] + "' as a number");
                }
                numeric = false;
            }
        }
        if (numeric) {
            col.role = ColumnRole::numeric;
            col.numbers = std::move(numbers);
        } else {
            col.role = ColumnRole::categorical;
            col.labels = std::move(cells);
            for (std::size_t r = 0; r < table.rows; ++r)
                if (col.missing[r]) col.labels[r].clear();
        }
    }
    return table;
}

RawTable load_csv(const std::filesystem::path& path, const SchemaHints& hints) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read CSV file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str(), hints, path.string());
}

std::string format_csv(const RawTable& table) {
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        if (c) out.push_back(',');
        out += csv_escape(table.columns[c].name);
    }
    out.push_back('\n');
    for (std::size_t r = 0; r < table.rows; ++r) {
        for (std::size_t c = 0; c < table.columns.size(); ++c) {
            if (c) out.push_back(',');
            const RawColumn& col = table.columns[c];
            if (col.missing[r]) continue;
            out += col.role == ColumnRole::numeric ? format_number(col.numbers[r]) : csv_escape(col.labels[r]);
        }
        out.push_back('\n');
    }
    return out;
}

void write_csv(const std::filesystem::path& path, const RawTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << format_csv(table);
    if (!out) throw DataError("failed writing " + path.string());
}

std::size_t Schema::numeric_count() const {
    return static_cast<std::size_t>(std::count_if(features.begin(), features.end(),
                                                  [](const auto& f) { return f.role == ColumnRole::numeric; }));
}

std::size_t Schema::encoded_width() const {
    std::size_t d = 0;
    for (const auto& f : features) d += f.width();
    return d;
}

std::size_t Schema::offset(std::size_t feature) const {
    std::size_t d = 0;
    for (std::size_t i = 0; i < feature; ++i) d += features[i].width();
    return d;
}

std::vector<std::uint8_t> Schema::numeric_mask() const {
    std::vector<std::uint8_t> mask(encoded_width(), 0);
    std::fill_n(mask.begin(), numeric_count(), std::uint8_t{1});
    return mask;
}

std::vector<std::size_t> Schema::feature_of_column() const {
    std::vector<std::size_t> out;
    for (std::size_t f = 0; f < features.size(); ++f) out.insert(out.end(), features[f].width(), f);
    return out;
}

Encoded encode(const RawTable& raw, const Schema& schema) {
    const std::size_t n = raw.rows;
    Encoded out{Tensor2(n, schema.encoded_width()), BinaryGrid(n, schema.feature_count())};
    std::size_t offset = 0;
    for (std::size_t f = 0; f < schema.feature_count(); ++f) {
        const ColumnSchema& cs = schema.features[f];
        const RawColumn& col = raw.column(cs.name);
        if (col.size() != n) throw DataError("column '" + cs.name + "' has inconsistent length");
        for (std::size_t r = 0; r < n; ++r) {
            if (col.missing[r]) continue;
            if (cs.role == ColumnRole::numeric) {
                if (col.role != ColumnRole::numeric) {
                    throw DataError("column '" + cs.name + "' is categorical in the data but numeric in the schema");
                }
                out.values(r, offset) = (col.numbers[r] - cs.mean) / cs.std;
                out.observed.set(r, f, true);
            } else {
                const std::string label =
                    col.role == ColumnRole::categorical ? col.labels[r] : format_number(col.numbers[r]);
                const auto it = std::lower_bound(cs.categories.begin(), cs.categories.end(), label);
                if (it == cs.categories.end() || *it != label) {
                    log_warning("column '" + cs.name + "': unseen category '" + label + "' treated as missing");
                    continue;
                }
                out.values(r, offset + static_cast<std::size_t>(it - cs.categories.begin())) = 1.0;
                out.observed.set(r, f, true);
            }
        }
        offset += cs.width();
    }
    return out;
}

Split make_split(std::size_t n, std::uint64_t seed, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(combine_seed(seed, "split"));
    std::shuffle(order.begin(), order.end(), rng.engine());
    const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
    Split split{std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train)),
                std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end())};
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

BinaryGrid DatasetView::expand(const BinaryGrid& feature_grid) const {
    if (feature_grid.cols() != feature_count()) {
        throw DimensionError("expand: grid has " + std::to_string(feature_grid.cols()) + " columns, schema has " +
                             std::to_string(feature_count()) + " features");
    }
    return expand_columns(feature_grid, schema.feature_of_column());
}

Tensor2 DatasetView::feature_matrix() const {
    const std::size_t n = rows();
    Tensor2 out(n, feature_count());
    for (std::size_t f = 0; f < feature_count(); ++f) {
        const ColumnSchema& cs = schema.features[f];
        const std::size_t off = schema.offset(f);
        if (cs.role == ColumnRole::numeric) {
            for (std::size_t r = 0; r < n; ++r) out(r, f) = encoded(r, off);
            continue;
        }
        std::vector<double> codes(n, 0.0);
        double mean = 0.0;
        std::size_t seen = 0;
        for (std::size_t r = 0; r < n; ++r) {
            if (!observed(r, f)) continue;
            for (std::size_t k = 0; k < cs.width(); ++k)
                if (encoded(r, off + k) > 0.5) codes[r] = static_cast<double>(k);
            mean += codes[r];
            ++seen;
        }
        if (seen == 0) continue;
        mean /= static_cast<double>(seen);
        double var = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            if (observed(r, f)) var += (codes[r] - mean) * (codes[r] - mean);
        const double sd = var > 0.0 ? std::sqrt(var / static_cast<double>(seen)) : 1.0;
        for (std::size_t r = 0; r < n; ++r) out(r, f) = observed(r, f) ? (codes[r] - mean) / sd : 0.0;
    }
    return out;
}

DatasetView fit_transform(const RawTable& raw, std::uint64_t seed, double train_fraction) {
    if (raw.rows < 2) throw DataError("fit_transform: need at least 2 rows, got " + std::to_string(raw.rows));

    DatasetView view;
    view.split = make_split(raw.rows, seed, train_fraction);
    view.schema.seed = seed;

    std::vector<ColumnSchema> numeric;
    std::vector<ColumnSchema> categorical;
    for (std::size_t c = 0; c < raw.columns.size(); ++c) {
        const RawColumn& col = raw.columns[c];
        view.schema.source_names.push_back(col.name);
        if (col.missing_count() == col.size()) {
            log_warning("column '" + col.name + "' has no observed values and is dropped");
            continue;
        }
        ColumnSchema cs{.name = col.name, .role = col.role, .source_index = c};
        if (col.role == ColumnRole::numeric) {
            double sum = 0.0;
            std::size_t seen = 0;
            for (std::size_t r : view.split.train) {
                if (col.missing[r]) continue;
                sum += col.numbers[r];
                ++seen;
            }
            if (seen == 0) {
                log_warning("column '" + col.name + "' has no observed training values; using mean 0, std 1");
            } else {
                cs.mean = sum / static_cast<double>(seen);
                double var = 0.0;
                for (std::size_t r : view.split.train)
                    if (!col.missing[r]) var += (col.numbers[r] - cs.mean) * (col.numbers[r] - cs.mean);
                cs.std = std::sqrt(var / static_cast<double>(seen));
                if (!(cs.std > 0.0)) {
                    log_warning("column '" + col.name + "' is constant on the training split; std set to 1");
                    cs.std = 1.0;
                }
            }
            numeric.push_back(std::move(cs));
        } else {
            std::set<std::string> cats;
            for (std::size_t r = 0; r < col.size(); ++r)
                if (!col.missing[r]) cats.insert(col.labels[r]);
            cs.categories.assign(cats.begin(), cats.end());
            categorical.push_back(std::move(cs));
        }
    }
    view.schema.features = std::move(numeric);
    view.schema.features.insert(view.schema.features.end(), categorical.begin(), categorical.end());
    if (view.schema.features.empty()) throw DataError("fit_transform: no usable columns");

    Encoded enc = encode(raw, view.schema);
    view.encoded = std::move(enc.values);
    view.observed = std::move(enc.observed);
    return view;
}

RawTable inverse_transform(const Schema& schema, const Tensor2& encoded) {
    if (encoded.cols() != schema.encoded_width()) {
        throw DimensionError("inverse_transform: matrix has " + std::to_string(encoded.cols()) +
                             " columns, schema expects " + std::to_string(schema.encoded_width()));
    }
    const std::size_t n = encoded.rows();
    RawTable table;
    table.rows = n;
    table.columns.resize(schema.source_names.size());
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        table.columns[c].name = schema.source_names[c];
        table.columns[c].missing.assign(n, 1);
        table.columns[c].numbers.assign(n, 0.0);
    }
    std::size_t offset = 0;
    for (const ColumnSchema& cs : schema.features) {
        RawColumn& col = table.columns.at(cs.source_index);
        col.role = cs.role;
        col.missing.assign(n, 0);
        if (cs.role == ColumnRole::numeric) {
            for (std::size_t r = 0; r < n; ++r) col.numbers[r] = encoded(r, offset) * cs.std + cs.mean;
        } else {
            col.numbers.clear();
            col.labels.resize(n);
            for (std::size_t r = 0; r < n; ++r) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < cs.width(); ++k)
                    if (encoded(r, offset + k) > encoded(r, offset + best)) best = k;
                col.labels[r] = cs.categories[best];
            }
        }
        offset += cs.width();
    }
    return table;
}

Tensor2 select_rows(const Tensor2& m, const std::vector<std::size_t>& rows) {
    Tensor2 out(rows.size(), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = m.row_span(rows[i]);
        std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
}

std::string schema_to_json(const Schema& schema) {
    nlohmann::json cols = nlohmann::json::array();
    for (const auto& f : schema.features) {
        cols.push_back({{"name", f.name},
                        {"role", to_string(f.role)},
                        {"categories", f.categories},
                        {"mean", f.mean},
                        {"std", f.std},
                        {"source_index", f.source_index}});
    }
    nlohmann::json j = {{"version", kSchemaVersion},
                        {"seed", schema.seed},
                        {"source_columns", schema.source_names},
                        {"features", cols}};
    return j.dump(2);
}

Schema schema_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.at("version").get<int>() != kSchemaVersion) throw FormatError("unsupported schema version");
        Schema schema;
        schema.seed = j.at("seed").get<std::uint64_t>();
        schema.source_names = j.at("source_columns").get<std::vector<std::string>>();
        for (const auto& c : j.at("features")) {
            ColumnSchema cs;
            cs.name = c.at("name").get<std::string>();
            const auto role = c.at("role").get<std::string>();
            if (role != "numeric" && role != "categorical") throw FormatError("bad column role '" + role + "'");
            cs.role = role == "numeric" ? ColumnRole::numeric : ColumnRole::categorical;
            cs.categories = c.at("categories").get<std::vector<std::string>>();
            cs.mean = c.at("mean").get<double>();
            cs.std = c.at("std").get<double>();
            cs.source_index = c.at("source_index").get<std::size_t>();
            if (cs.source_index >= schema.source_names.size()) throw FormatError("schema source_index out of range");
            schema.features.push_back(std::move(cs));
        }
        return schema;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("corrupt schema JSON: ") + e.what());
    }
}

void save_schema(const std::filesystem::path& path, const Schema& schema) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << schema_to_json(schema) << '\n';
}

Schema load_schema(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read schema file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return schema_from_json(buf.str());
}

}  // namespace macfm
