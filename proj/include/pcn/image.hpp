#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

// Images are rank-3 tensors (3,H,W), channels first, values in [0,1].
using Image = Tensor;

struct Mask {
    std::int64_t h = 0;
    std::int64_t w = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::int64_t h_, std::int64_t w_) : h(h_), w(w_), data(static_cast<std::size_t>(h_ * w_), 0) {}

    std::uint8_t& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * w + c)]; }
    std::uint8_t at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * w + c)]; }
    std::int64_t numel() const { return h * w; }

    std::int64_t area() const {
        std::int64_t a = 0;
        for (auto v : data) a += v ? 1 : 0;
        return a;
    }

    bool empty_mask() const { return area() == 0; }

    Tensor to_tensor() const {
        Tensor t({h, w});
        for (std::int64_t i = 0; i < numel(); ++i) t[i] = data[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        return t;
    }
};

struct MaskStats {
    std::int64_t area = 0;
    std::int64_t r0 = 0, c0 = 0, r1 = -1, c1 = -1;  // inclusive bbox, r1<r0 when empty
};

MaskStats mask_stats(const Mask& m);

// Classic binary IoU by pixel counting.
double binary_iou(const Mask& a, const Mask& b);

// Binary PPM (P6, 8-bit) and PGM (P5, 16-bit big-endian per the netpbm spec).
void write_ppm(const Image& img, const std::string& path);
Image read_ppm(const std::string& path);
void write_pgm16(const Tensor& map01, const std::string& path);  // value = round(65535 * v)

}  // namespace pcn
