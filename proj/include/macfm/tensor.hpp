#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace macfm {

/// Dense row-major matrix of doubles. Batches, noise, masks and parameters all live here.
class Tensor2 {
public:
    Tensor2() = default;
    Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}
    Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);
    Tensor2(std::initializer_list<std::initializer_list<double>> rows);

    static Tensor2 row(std::span<const double> values);

    std::size_t rows() const { return m_rows; }
    std::size_t cols() const { return m_cols; }
    std::size_t size() const { return m_data.size(); }
    bool same_shape(const Tensor2& other) const { return m_rows == other.m_rows && m_cols == other.m_cols; }

    double& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }
    double& operator[](std::size_t i) { return m_data[i]; }
    double operator[](std::size_t i) const { return m_data[i]; }

    std::span<double> flat() { return m_data; }
    std::span<const double> flat() const { return m_data; }
    std::span<double> row_span(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const double> row_span(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }
    double* data() { return m_data.data(); }
    const double* data() const { return m_data.data(); }

    void fill(double value);
    bool all_finite() const;
    std::string shape_string() const;

    friend bool operator==(const Tensor2&, const Tensor2&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<double> m_data;
};

/// Throws DimensionError naming both shapes unless a and b agree.
void require_same_shape(const Tensor2& a, const Tensor2& b, const char* op);

}  // namespace macfm
