// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace m2a::num {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// When enabled, every op output on a Tape is scanned for NaN/Inf.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Dense row-major array of doubles. A rank-0 tensor holds one scalar.
///
/// The public constructor validates that the value count matches the shape
/// and that every value is finite. Ops build their results through
/// `Tensor::zeros` and write into `data()`.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> values);

    static Tensor zeros(Shape shape);
    static Tensor filled(Shape shape, double value);
    static Tensor scalar(double value);
    /// Builds a matrix from nested rows; all rows must have equal length.
    static Tensor matrix(const std::vector<std::vector<double>>& rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    /// Row/column counts of a rank-2 tensor.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return values_; }
    std::span<double> data() { return values_; }
    const std::vector<double>& vector() const { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
    double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }

    /// Value of a single-element tensor.
    double item() const;

    bool all_finite() const;

    /// Same values, new shape; element count must match.
    Tensor reshaped(Shape shape) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> values_;
};

/// Throws ShapeError unless `t` is a matrix.
void require_matrix(const Tensor& t, const char* what);

/// Largest |a - b| / max(1, |b|) over all elements; shapes must match.
double max_relative_difference(const Tensor& a, const Tensor& b);

}  // namespace m2a::num
