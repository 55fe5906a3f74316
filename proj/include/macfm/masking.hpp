#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "macfm/tensor.hpp"

namespace macfm {

/// n x d grid of 0/1 flags.
class BinaryGrid {
public:
    BinaryGrid() = default;
    BinaryGrid(std::size_t rows, std::size_t cols, bool fill = false)
        : m_rows(rows), m_cols(cols), m_bits(rows * cols, fill ? 1 : 0) {}

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }
    bool operator()(std::size_t r, std::size_t c) const { return m_bits[r * m_cols + c] != 0; }
    void set(std::size_t r, std::size_t c, bool v) { m_bits[r * m_cols + c] = v ? 1 : 0; }
    std::size_t count() const;
    std::size_t count_row(std::size_t r) const;
    BinaryGrid negated() const;
    /// Subset of rows in the given order.
    BinaryGrid select_rows(const std::vector<std::size_t>& rows) const;
    Tensor2 to_tensor() const;

    friend bool operator==(const BinaryGrid&, const BinaryGrid&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<std::uint8_t> m_bits;
};

BinaryGrid operator&(const BinaryGrid& a, const BinaryGrid& b);
/// Broadcasts a feature-level grid onto encoded columns; column_feature[c] is the owning feature of column c.
BinaryGrid expand_columns(const BinaryGrid& feature_grid, const std::vector<std::size_t>& column_feature);
BinaryGrid operator|(const BinaryGrid& a, const BinaryGrid& b);

enum class Mechanism { mcar, mar, mnar };

Mechanism parse_mechanism(std::string_view name);
std::string to_string(Mechanism m);

/// Synthetic missingness over an n x d feature grid; bit = 1 means missing.
struct MissMask {
    BinaryGrid bits;
    Mechanism mechanism = Mechanism::mcar;
    double nominal_rate = 0.0;
    std::uint64_t seed = 0;
    /// Columns allowed to receive missingness. MAR keeps its driver columns out of this set.
    std::vector<std::uint8_t> eligible;

    std::size_t rows() const { return bits.rows(); }
    std::size_t cols() const { return bits.cols(); }
    bool missing(std::size_t r, std::size_t c) const { return bits(r, c); }
    /// Missing fraction over eligible columns.
    double realized_rate() const;
};

MissMask gen_mcar(std::size_t n, std::size_t d, double rate, std::uint64_t seed);
/// Logistic masking driven by ceil(0.3 d) fully observed columns of `data`.
MissMask gen_mar(const Tensor2& data, double rate, std::uint64_t seed);
/// Self-masking: P(missing) = sigmoid(z + b_j) of each column's own standardized value.
MissMask gen_mnar(const Tensor2& data, double rate, std::uint64_t seed);
MissMask generate_mask(Mechanism mechanism, const Tensor2& data, double rate, std::uint64_t seed);

/// Disjoint observed / conditioning / target partition. At training time the
/// three cover exactly the in-play (originally observed) cells.
struct MaskTriple {
    BinaryGrid obs;
    BinaryGrid cond;
    BinaryGrid tgt;

    BinaryGrid keep() const { return obs | cond; }
};

/// Splits each row's observed cells into cond (prob cond_fraction), tgt
/// (prob tgt_fraction) and obs (rest). Forces one target if none was drawn.
MaskTriple sample_train_partition(const BinaryGrid& observed, double cond_fraction, double tgt_fraction,
                                  std::uint64_t seed);

/// Inference partition: observed cells are kept, missing cells are targets.
MaskTriple inference_partition(const BinaryGrid& observed);

void save_mask(const std::filesystem::path& path, const MissMask& mask);
MissMask load_mask(const std::filesystem::path& path);
void write_mask_csv(const std::filesystem::path& path, const BinaryGrid& grid);

}  // namespace macfm
