#include "pcn/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "pcn/errors.hpp"

namespace pcn {

MaskStats mask_stats(const Mask& m) {
    MaskStats s;
    s.r0 = m.h;
    s.c0 = m.w;
    s.r1 = -1;
    s.c1 = -1;
    for (std::int64_t r = 0; r < m.h; ++r) {
        for (std::int64_t c = 0; c < m.w; ++c) {
            if (!m.at(r, c)) continue;
            ++s.area;
            s.r0 = std::min(s.r0, r);
            s.c0 = std::min(s.c0, c);
            s.r1 = std::max(s.r1, r);
            s.c1 = std::max(s.c1, c);
        }
    }
    if (s.area == 0) {
        s.r0 = s.c0 = 0;
        s.r1 = s.c1 = -1;
    }
    return s;
}

double binary_iou(const Mask& a, const Mask& b) {
    if (a.h != b.h || a.w != b.w) throw InvalidInputError("binary_iou: resolution mismatch");
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] != 0, y = b.data[i] != 0;
        inter += (x && y) ? 1 : 0;
        uni += (x || y) ? 1 : 0;
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void write_ppm(const Image& img, const std::string& path) {
    if (img.rank() != 3 || img.shape[0] != 3) throw InvalidInputError("write_ppm: image must be (3,H,W)");
    const std::int64_t h = img.shape[1], w = img.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w * 3));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                double v = img[(ch * h + y) * w + x];
                v = std::clamp(v, 0.0, 1.0);
                row[static_cast<std::size_t>(x * 3 + ch)] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

Image read_ppm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P6") throw IoError("not a P6 ppm: " + path);
    auto skip_ws_comments = [&]() {
        while (true) {
            int c = is.peek();
            if (c == '#') {
                std::string line;
                std::getline(is, line);
            } else if (std::isspace(c)) {
                is.get();
            } else {
                break;
            }
        }
    };
    std::int64_t w, h, maxv;
    skip_ws_comments();
    is >> w;
    skip_ws_comments();
    is >> h;
    skip_ws_comments();
    is >> maxv;
    is.get();  // single whitespace before raster
    if (maxv != 255) throw IoError("unsupported ppm maxval: " + path);
    Image img({3, h, w});
    std::vector<unsigned char> buf(static_cast<std::size_t>(w * h * 3));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw IoError("truncated ppm: " + path);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img[(ch * h + y) * w + x] = static_cast<double>(buf[static_cast<std::size_t>((y * w + x) * 3 + ch)]) / 255.0;
    return img;
}

void write_pgm16(const Tensor& map01, const std::string& path) {
    if (map01.rank() != 2) throw InvalidInputError("write_pgm16: rank-2 map required");
    const std::int64_t h = map01.rows(), w = map01.cols();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P5\n" << w << " " << h << "\n65535\n";
    for (std::int64_t i = 0; i < h * w; ++i) {
        const double v = std::clamp(map01[i], 0.0, 1.0);
        const auto u = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        const unsigned char bytes[2] = {static_cast<unsigned char>(u >> 8), static_cast<unsigned char>(u & 0xff)};
        os.write(reinterpret_cast<const char*>(bytes), 2);
    }
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace pcn
