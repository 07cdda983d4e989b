#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pipebench/common.hpp"

namespace pipebench {

// Dense row-major tensor. All layer math happens through gemm.hpp and plain
// loops over this storage; nothing here owns threads or devices.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}

    static size_t count(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return v.size(); }
    int dim(size_t i) const { return shape[i]; }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void zero() { std::fill(v.begin(), v.end(), T(0)); }

    void resize(std::vector<int> s) {
        shape = std::move(s);
        v.assign(count(shape), T(0));
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

inline void check_shape(bool ok, const std::string& where, const std::string& expected,
                        const std::string& actual) {
    if (!ok) throw ShapeError(where + ": expected " + expected + ", got " + actual);
}

}  // namespace pipebench
