#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "nesr/common.hpp"

namespace nesr {

template <class T>
class Tape;

// Vector allocator that default-initializes on resize. Kernels fully
// overwrite their output buffers, so the zero-fill pass is skipped for
// tensors created through Tensor::uninit.
template <class T>
struct DefaultInitAlloc {
    using value_type = T;
    DefaultInitAlloc() = default;
    template <class U>
    DefaultInitAlloc(const DefaultInitAlloc<U>&) {}
    T* allocate(std::size_t n) { return std::allocator<T>{}.allocate(n); }
    void deallocate(T* p, std::size_t n) { std::allocator<T>{}.deallocate(p, n); }
    template <class U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
    template <class U>
    bool operator==(const DefaultInitAlloc<U>&) const {
        return true;
    }
    template <class U>
    bool operator!=(const DefaultInitAlloc<U>&) const {
        return false;
    }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::size_t shape_numel(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major n-d array (last axis fastest). The buffer is shared across
// copies and treated as immutable once another handle or a tape may alias it;
// operations never mutate their inputs. A tensor optionally refers to the
// tape node that produced it, which is what makes an expression differentiable.
template <class T>
class Tensor {
public:
    using Buffer = std::vector<T, DefaultInitAlloc<T>>;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<Buffer>(shape_numel(shape_), T(0))) {}

    Tensor(std::vector<std::size_t> shape, const std::vector<T>& values)
        : shape_(std::move(shape)),
          data_(std::make_shared<Buffer>(values.begin(), values.end())) {
        check_length();
    }

    Tensor(std::vector<std::size_t> shape, std::initializer_list<T> values)
        : shape_(std::move(shape)), data_(std::make_shared<Buffer>(values)) {
        check_length();
    }

    Tensor(std::vector<std::size_t> shape, Buffer&& values)
        : shape_(std::move(shape)), data_(std::make_shared<Buffer>(std::move(values))) {
        check_length();
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    // Allocated but not zero-filled; caller must write every element.
    static Tensor uninit(std::vector<std::size_t> shape) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<Buffer>(shape_numel(t.shape_));
        return t;
    }

    static Tensor full(std::vector<std::size_t> shape, T value) {
        Tensor t = uninit(std::move(shape));
        std::fill(t.data_->begin(), t.data_->end(), value);
        return t;
    }

    static Tensor ones(std::vector<std::size_t> shape) { return full(std::move(shape), T(1)); }

    static Tensor scalar(T value) { return Tensor({1}, {value}); }

    bool defined() const { return static_cast<bool>(data_); }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }
    T& operator[](std::size_t i) { return (*data_)[i]; }
    const T& operator[](std::size_t i) const { return (*data_)[i]; }

    const std::shared_ptr<Buffer>& buffer() const { return data_; }

    // Reinterpret as a different shape with the same element count. Shares
    // the buffer and drops any tape affiliation; ops::reshape records the
    // differentiable version.
    Tensor viewed_as(std::vector<std::size_t> shape) const {
        if (shape_numel(shape) != size()) {
            throw DimensionError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        }
        Tensor out;
        out.shape_ = std::move(shape);
        out.data_ = data_;
        return out;
    }

    Tensor clone() const {
        Tensor out;
        out.shape_ = shape_;
        out.data_ = std::make_shared<Buffer>(*data_);
        return out;
    }

    // Same buffer, no tape affiliation.
    Tensor detached() const {
        Tensor out;
        out.shape_ = shape_;
        out.data_ = data_;
        return out;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out = Tensor<U>::uninit(shape_);
        for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return out;
    }

    bool all_finite() const {
        for (const T& v : *data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    // Autograd affiliation.
    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }
    bool on_tape() const { return tape_ != nullptr; }
    bool requires_grad() const { return tape_ != nullptr; }

    void attach(Tape<T>* tape, int node) {
        tape_ = tape;
        node_ = node;
    }

private:
    void check_length() const {
        if (data_->size() != shape_numel(shape_)) {
            throw DimensionError("tensor data length " + std::to_string(data_->size()) +
                                 " does not match shape " + shape_str(shape_));
        }
    }

    std::vector<std::size_t> shape_;
    std::shared_ptr<Buffer> data_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace nesr
