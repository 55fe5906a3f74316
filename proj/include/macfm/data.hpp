#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "macfm/masking.hpp"
#include "macfm/tensor.hpp"

namespace macfm {

enum class ColumnRole { numeric, categorical };

std::string to_string(ColumnRole role);

/// One typed CSV column. `numbers` is used for numeric columns, `labels` for categorical ones.
struct RawColumn {
    std::string name;
    ColumnRole role = ColumnRole::numeric;
    std::vector<double> numbers;
    std::vector<std::string> labels;
    std::vector<std::uint8_t> missing;

    std::size_t size() const { return missing.size(); }
    std::size_t missing_count() const;
};

struct RawTable {
    std::vector<RawColumn> columns;
    std::size_t rows = 0;

    std::size_t missing_count() const;
    const RawColumn& column(const std::string& name) const;
};

struct SchemaHints {
    std::vector<std::string> categorical;
    std::vector<std::string> numeric;
    std::vector<std::string> sentinels{"", "NA", "?"};
};

/// Reads a headered CSV. Columns are numeric unless hinted categorical or a
/// non-missing cell fails to parse. Cells are whitespace-trimmed before matching sentinels.
RawTable load_csv(const std::filesystem::path& path, const SchemaHints& hints = {});
RawTable parse_csv(const std::string& text, const SchemaHints& hints = {}, const std::string& source = "<memory>");
/// Numbers are written with round-trip precision; missing cells are empty.
void write_csv(const std::filesystem::path& path, const RawTable& table);
std::string format_csv(const RawTable& table);

struct ColumnSchema {
    std::string name;
    ColumnRole role = ColumnRole::numeric;
    std::vector<std::string> categories;
    double mean = 0.0;
    double std = 1.0;
    /// Position of this column in the source table.
    std::size_t source_index = 0;

    std::size_t width() const { return role == ColumnRole::numeric ? 1 : categories.size(); }
    friend bool operator==(const ColumnSchema&, const ColumnSchema&) = default;
};

/// Column layout shared by encoding and decoding: numeric features first, then one-hot blocks.
struct Schema {
    std::vector<ColumnSchema> features;
    std::vector<std::string> source_names;
    std::uint64_t seed = 0;

    std::size_t feature_count() const { return features.size(); }
    std::size_t numeric_count() const;
    std::size_t encoded_width() const;
    std::size_t offset(std::size_t feature) const;
    /// 1 on the leading numeric encoded columns.
    std::vector<std::uint8_t> numeric_mask() const;
    /// Encoded column index -> feature index.
    std::vector<std::size_t> feature_of_column() const;
    friend bool operator==(const Schema&, const Schema&) = default;
};

struct Encoded {
    Tensor2 values;            ///< n x D; missing cells are 0
    BinaryGrid observed;       ///< n x F, 1 = present in the source
};

/// Applies a fitted schema to a table whose columns carry the schema's source names.
Encoded encode(const RawTable& raw, const Schema& schema);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Shuffled floor(fraction * n) / remainder split; both index lists sorted.
Split make_split(std::size_t n, std::uint64_t seed, double train_fraction = 0.7);

/// Encoded dataset plus split and fitted statistics. Immutable after fit_transform.
struct DatasetView {
    Schema schema;
    Tensor2 encoded;
    BinaryGrid observed;  ///< feature-level originally-observed grid
    Split split;

    std::size_t rows() const { return encoded.rows(); }
    std::size_t width() const { return encoded.cols(); }
    std::size_t feature_count() const { return schema.feature_count(); }

    /// Feature-level grid broadcast over each feature's encoded columns.
    BinaryGrid expand(const BinaryGrid& feature_grid) const;
    /// n x F real matrix used by MAR/MNAR generators: z-scores for numeric
    /// features, standardized category codes for categorical ones, 0 where missing.
    Tensor2 feature_matrix() const;
};

/// Standardizes numeric columns with train-split statistics, one-hot encodes
/// categoricals, drops all-missing columns.
DatasetView fit_transform(const RawTable& raw, std::uint64_t seed, double train_fraction = 0.7);

/// De-standardizes numerics and argmax-decodes one-hot blocks (ties -> lowest index).
/// Columns dropped during fitting come back fully missing.
RawTable inverse_transform(const Schema& schema, const Tensor2& encoded);

Tensor2 select_rows(const Tensor2& m, const std::vector<std::size_t>& rows);

void save_schema(const std::filesystem::path& path, const Schema& schema);
Schema load_schema(const std::filesystem::path& path);
std::string schema_to_json(const Schema& schema);
Schema schema_from_json(const std::string& text);

}  // namespace macfm
