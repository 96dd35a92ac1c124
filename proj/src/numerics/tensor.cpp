// SPDX-License-Identifier: Apache-2.0
#include "numerics/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "common/error.hpp"

namespace m2a::num {

namespace {
std::atomic<bool> g_finite_checks{false};
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor dimension must be positive, got shape " + to_string(shape_));
    }
    if (element_count(shape_) != values_.size()) {
        throw ShapeError("shape " + to_string(shape_) + " needs " + std::to_string(element_count(shape_)) +
                         " values, got " + std::to_string(values_.size()));
    }
    if (!all_finite()) throw NumericError("tensor values must be finite");
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double value) {
    Tensor t;
    t.values_.assign(element_count(shape), value);
    t.shape_ = std::move(shape);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows) {
    if (rows.empty() || rows.front().empty()) throw ShapeError("matrix needs at least one row and column");
    const auto cols = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("ragged matrix rows");
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(values));
}

std::size_t Tensor::rows() const {
    require_matrix(*this, "rows()");
    return shape_[0];
}

std::size_t Tensor::cols() const {
    require_matrix(*this, "cols()");
    return shape_[1];
}

double Tensor::item() const {
    if (values_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return values_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
    if (element_count(shape) != values_.size()) {
        throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
}

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(what) + ": expected a matrix, got shape " + to_string(t.shape()));
    }
}

double max_relative_difference(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("compare: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
    }
    return worst;
}

}  // namespace m2a::num
