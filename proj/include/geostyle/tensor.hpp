#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "geostyle/errors.hpp"

namespace geostyle {

// Dense row-major N-dimensional array. Images and activations use the NCHW
// convention. Production code runs the float instantiation; the gradient
// check harness instantiates double on the same code.
template <typename T>
class BasicTensor {
public:
    BasicTensor() = default;

    explicit BasicTensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<std::size_t>(checked_numel(shape_)), T{0});
    }

    BasicTensor(std::vector<int> shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (checked_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static BasicTensor full(std::vector<int> shape, T value) {
        BasicTensor t(std::move(shape));
        for (auto& v : t.data_) v = value;
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // Rank-checked accessors for the common layouts.
    T& at2(int r, int c) {
        return data_[static_cast<std::size_t>(r) * shape_[1] + c];
    }
    const T& at2(int r, int c) const {
        return data_[static_cast<std::size_t>(r) * shape_[1] + c];
    }
    T& at3(int c, int h, int w) {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    const T& at3(int c, int h, int w) const {
        return data_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    T& at4(int n, int c, int h, int w) {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at4(int n, int c, int h, int w) const {
        return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    bool same_shape(const BasicTensor& other) const { return shape_ == other.shape_; }

    // Reshape to a shape with the same element count; data is shared by move.
    BasicTensor reshaped(std::vector<int> new_shape) const {
        if (checked_numel(new_shape) != numel()) {
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " +
                             shape_string(new_shape));
        }
        return BasicTensor(std::move(new_shape), data_);
    }

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return BasicTensor<U>(shape_, std::move(out));
    }

    std::string shape_str() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<int>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << 'x';
            os << s[i];
        }
        os << ']';
        return os.str();
    }

    static std::int64_t checked_numel(const std::vector<int>& shape) {
        if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
        std::int64_t n = 1;
        for (int d : shape) {
            if (d < 1) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
            n *= d;
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace geostyle
