#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "ate/error.hpp"

namespace ate {

using Shape = std::vector<int>;

inline int64_t shape_size(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense n-dimensional array, row-major, value semantics.
/// S is float for training and double for gradient verification.
template <class S>
struct TensorT {
    Shape shape;
    std::vector<S> data;

    TensorT() = default;
    TensorT(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
        check_shape();
        if (static_cast<int64_t>(data.size()) != shape_size(shape))
            throw DimensionError("tensor: buffer size " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
    }

    static TensorT zeros(Shape s) {
        TensorT t;
        t.shape = std::move(s);
        t.check_shape();
        t.data.assign(static_cast<size_t>(shape_size(t.shape)), S(0));
        return t;
    }

    static TensorT full(Shape s, S v) {
        TensorT t = zeros(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }

    static TensorT scalar(S v) { return TensorT({1}, {v}); }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    bool empty() const { return data.empty(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-d and 4-d accessors; the tape kernels index through these.
    S& at2(int r, int c) { return data[static_cast<size_t>(r) * shape[1] + c]; }
    S at2(int r, int c) const { return data[static_cast<size_t>(r) * shape[1] + c]; }
    S& at4(int a, int b, int c, int d) {
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    S at4(int a, int b, int c, int d) const {
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

private:
    void check_shape() const {
        for (int d : shape)
            if (d <= 0)
                throw DimensionError("tensor: non-positive dimension in shape " + shape_str(shape));
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class To, class From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
    TensorT<To> out;
    out.shape = t.shape;
    out.data.reserve(t.data.size());
    for (From v : t.data) out.data.push_back(static_cast<To>(v));
    return out;
}

template <class S>
bool all_finite(const TensorT<S>& t) {
    for (S v : t.data)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

} // namespace ate
