#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "pcn/errors.hpp"

namespace pcn {

// Dense row-major tensor of doubles. Rank is dynamic; most of the codebase
// uses rank 1 (vectors), rank 2 (matrices) and rank 3 (C,H,W images).
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }
    Tensor(std::vector<std::int64_t> s, double fill) : Tensor(std::move(s)) {
        for (auto& v : data) v = fill;
    }
    Tensor(std::vector<std::int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != numel_of(shape))
            throw InvalidInputError("tensor: data size does not match shape");
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t rows() const { return shape.at(0); }
    std::int64_t cols() const { return shape.at(1); }

    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols() + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols() + c)]; }
    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

// out[r,c] (+)= sum_k a[r,k] b[k,c]
inline void mm_nn(const double* a, const double* b, double* out, std::int64_t r, std::int64_t k, std::int64_t c,
                  bool accumulate) {
    if (!accumulate)
        for (std::int64_t i = 0; i < r * c; ++i) out[i] = 0.0;
    for (std::int64_t i = 0; i < r; ++i) {
        const double* ar = a + i * k;
        double* orow = out + i * c;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double av = ar[kk];
            if (av == 0.0) continue;
            const double* br = b + kk * c;
            for (std::int64_t j = 0; j < c; ++j) orow[j] += av * br[j];
        }
    }
}

// out[r,c] (+)= sum_k a[r,k] b[c,k]   (a * b^T)
inline void mm_nt(const double* a, const double* b, double* out, std::int64_t r, std::int64_t k, std::int64_t c,
                  bool accumulate) {
    for (std::int64_t i = 0; i < r; ++i) {
        const double* ar = a + i * k;
        for (std::int64_t j = 0; j < c; ++j) {
            const double* br = b + j * k;
            double acc = 0.0;
            for (std::int64_t kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
            double& o = out[i * c + j];
            o = accumulate ? o + acc : acc;
        }
    }
}

// out[r,c] (+)= sum_k a[k,r] b[k,c]   (a^T * b)
inline void mm_tn(const double* a, const double* b, double* out, std::int64_t r, std::int64_t k, std::int64_t c,
                  bool accumulate) {
    if (!accumulate)
        for (std::int64_t i = 0; i < r * c; ++i) out[i] = 0.0;
    for (std::int64_t kk = 0; kk < k; ++kk) {
        const double* ar = a + kk * r;
        const double* br = b + kk * c;
        for (std::int64_t i = 0; i < r; ++i) {
            const double av = ar[i];
            if (av == 0.0) continue;
            double* orow = out + i * c;
            for (std::int64_t j = 0; j < c; ++j) orow[j] += av * br[j];
        }
    }
}

}  // namespace pcn
