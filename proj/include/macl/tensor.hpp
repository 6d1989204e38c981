#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "macl/error.hpp"

namespace macl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Dense row-major array. Value semantics; copies are deep.
///
/// Rank-2 tensors are the working currency of the autodiff tape. A leading
/// dimension of 0 is allowed so that "no samples" has a representation.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
        validate_shape();
        data_.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != shape_numel(shape_))
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
        return Tensor({rows, cols}, fill);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const {
        if (shape_.size() < 2) return 1;
        return shape_numel(Shape(shape_.begin() + 1, shape_.end()));
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_).subspan(r * cols(), cols());
    }

    T item() const {
        if (data_.size() != 1)
            throw DimensionError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return Tensor<U>(shape_, std::move(out));
    }

    /// Rows selected by index, in the given order.
    Tensor gather_rows(std::span<const std::size_t> idx) const {
        const std::size_t c = cols();
        Tensor out({idx.size(), c});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] >= rows()) throw ContractError("row index out of range");
            std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * c), c,
                        out.data_.begin() + static_cast<std::ptrdiff_t>(i * c));
        }
        return out;
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    void validate_shape() const {
        for (std::size_t i = 1; i < shape_.size(); ++i)
            if (shape_[i] == 0) throw DimensionError("tensor trailing dims must be >= 1");
    }

    Shape shape_;
    std::vector<T> data_;
};

/// Row-wise concatenation of same-width matrices.
template <typename T>
Tensor<T> vstack(std::span<const Tensor<T>> parts) {
    if (parts.empty()) return {};
    const std::size_t c = parts.front().cols();
    std::size_t r = 0;
    for (const auto& p : parts) {
        if (p.cols() != c) throw DimensionError("vstack width mismatch");
        r += p.rows();
    }
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
    return Tensor<T>::matrix(r, c, std::move(data));
}

}  // namespace macl
