#include "pcn/serialize.hpp"

#include <cstring>
#include <fstream>

namespace pcn {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'N', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t double_bits(double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    return u;
}

double bits_double(std::uint64_t u) {
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}

}  // namespace

const Tensor& NamedArrays::get(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw IoError("checkpoint missing array: " + name);
    return it->second;
}

void save_named_arrays(const NamedArrays& na, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(kMagic, 8);
    write_u32(os, static_cast<std::uint32_t>(na.arrays.size()));
    for (const auto& [name, t] : na.arrays) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) write_u64(os, static_cast<std::uint64_t>(d));
        for (double v : t.data) write_u64(os, double_bits(v));
    }
    if (!os) throw IoError("write failed: " + path);
}

NamedArrays load_named_arrays(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
    NamedArrays na;
    const std::uint32_t n = read_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = read_u32(is);
        std::vector<std::int64_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::int64_t>(read_u64(is));
        Tensor t(shape);
        for (auto& v : t.data) v = bits_double(read_u64(is));
        if (!is) throw IoError("truncated checkpoint: " + path);
        na.arrays[name] = std::move(t);
    }
    return na;
}

Tensor pack_u64_words(const std::vector<std::uint64_t>& words) {
    Tensor t({static_cast<std::int64_t>(words.size())});
    for (std::size_t i = 0; i < words.size(); ++i) t.data[i] = bits_double(words[i]);
    return t;
}

std::vector<std::uint64_t> unpack_u64_words(const Tensor& t) {
    std::vector<std::uint64_t> words(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < words.size(); ++i) words[i] = double_bits(t.data[i]);
    return words;
}

}  // namespace pcn
