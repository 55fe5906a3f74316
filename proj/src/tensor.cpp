#include "macfm/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "macfm/errors.hpp"

namespace macfm {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
    if (m_data.size() != rows * cols) {
        throw DimensionError("Tensor2: data length " + std::to_string(m_data.size()) + " does not match " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    }
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
    m_rows = rows.size();
    m_cols = m_rows == 0 ? 0 : rows.begin()->size();
    m_data.reserve(m_rows * m_cols);
    for (const auto& r : rows) {
        if (r.size() != m_cols) throw DimensionError("Tensor2: ragged initializer");
        m_data.insert(m_data.end(), r.begin(), r.end());
    }
}

Tensor2 Tensor2::row(std::span<const double> values) {
    return Tensor2(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Tensor2::fill(double value) { std::fill(m_data.begin(), m_data.end(), value); }

bool Tensor2::all_finite() const {
    return std::all_of(m_data.begin(), m_data.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor2::shape_string() const { return std::to_string(m_rows) + "x" + std::to_string(m_cols); }

void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

}  // namespace macfm
