#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lcmae/common.hpp"

namespace lcmae {

// Dense row-major array of real values. Immutable by convention once built;
// the graph owns mutable buffers internally.
template <typename T>
struct Array {
    Shape shape;
    std::vector<T> data;

    Array() = default;
    explicit Array(Shape s, T fill = T(0)) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), fill) {}
    Array(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw ShapeError("array data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_str(shape));
    }

    static Array zeros(Shape s) { return Array(std::move(s), T(0)); }
    static Array full(Shape s, T v) { return Array(std::move(s), v); }
    static Array scalar(T v) { return Array(Shape{}, std::vector<T>{v}); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // rank-2 accessors
    T& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * shape[1] + c)]; }
    const T& at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * shape[1] + c)]; }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Array<U> astype() const {
        Array<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
bool same_shape(const Array<T>& a, const Array<T>& b) {
    return a.shape == b.shape;
}

using ArrayF = Array<float>;
using ArrayD = Array<double>;

}  // namespace lcmae
