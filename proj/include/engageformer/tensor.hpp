#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace engageformer {

// Error taxonomy. The CLI maps these to stable exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4, CheckpointError -> 5.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Clip geometry inconsistent with the configured model.
class GeometryError : public ConfigError {
public:
    explicit GeometryError(const std::string& msg) : ConfigError(msg) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

// Operand shapes disagree (reports both shapes in the message).
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense row-major tensor. Scalar type is a template parameter: the library is
// instantiated with float for training/inference and double for gradient
// checking. Shapes are explicit everywhere; there is no implicit broadcasting.
template <typename S>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), S(0)) {}

    Tensor(Shape shape, std::vector<S> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != data_.size())
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(S v) { return Tensor({1}, {v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    // Rank-2 accessors; most of the model operates on N x d matrices.
    std::size_t rows() const { require_rank2(); return shape_[0]; }
    std::size_t cols() const { require_rank2(); return shape_[1]; }

    S& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    S operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    S& operator[](std::size_t i) { return data_[i]; }
    S operator[](std::size_t i) const { return data_[i]; }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& vec() { return data_; }
    const std::vector<S>& vec() const { return data_; }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (S v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    static std::size_t checked_numel(const Shape& shape) {
        if (shape.empty())
            throw ShapeError("tensor shape must have at least one extent");
        for (std::size_t e : shape)
            if (e == 0)
                throw ShapeError("tensor extents must be >= 1, got " + shape_str(shape));
        return shape_numel(shape);
    }

    void require_rank2() const {
        if (shape_.size() != 2)
            throw ShapeError("expected a rank-2 tensor, got " + shape_str(shape_));
    }

    Shape shape_;
    std::vector<S> data_;
};

template <typename S>
Tensor<S> zeros_like(const Tensor<S>& t) {
    return Tensor<S>(t.shape());
}

}  // namespace engageformer
