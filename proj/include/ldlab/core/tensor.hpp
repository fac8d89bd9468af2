#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ldlab/core/error.hpp"
#include "ldlab/core/rng.hpp"

namespace ldlab {

// Dense row-major tensor. Shapes are small (rank <= 4), values contiguous.
// Templated on the scalar so the same code runs in float for training and in
// double for finite-difference checks.
template <typename S>
struct Tensor {
    std::vector<int> dims;
    std::vector<S> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> d) : dims(std::move(d)) {
        v.assign(static_cast<std::size_t>(count(dims)), S(0));
    }
    Tensor(std::vector<int> d, S fill) : dims(std::move(d)) {
        v.assign(static_cast<std::size_t>(count(dims)), fill);
    }

    static std::int64_t count(const std::vector<int>& d) {
        std::int64_t n = 1;
        for (int x : d) n *= x;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
    int rank() const { return static_cast<int>(dims.size()); }
    int dim(int i) const { return dims[static_cast<std::size_t>(i)]; }

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }

    S& operator[](std::int64_t i) { return v[static_cast<std::size_t>(i)]; }
    const S& operator[](std::int64_t i) const { return v[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }

    bool all_finite() const {
        for (const S& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    void fill(S x) { std::fill(v.begin(), v.end(), x); }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out;
        out.dims = dims;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<T>(v[i]);
        return out;
    }
};

template <typename S>
Tensor<S> randn(std::vector<int> dims, Rng& rng, double stddev = 1.0) {
    Tensor<S> t(std::move(dims));
    for (auto& x : t.v) x = static_cast<S>(rng.normal() * stddev);
    return t;
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
    require(a.same_shape(b), Err::ShapeMismatch, what);
}

// Mean of squared differences, accumulated in double.
template <typename S>
double mse(const Tensor<S>& a, const Tensor<S>& b) {
    check_same_shape(a, b, "mse operands");
    require(a.numel() > 0, Err::ShapeMismatch, "mse of empty tensors");
    double acc = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

using TensorF = Tensor<float>;

}  // namespace ldlab
