#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pcn/tensor.hpp"

namespace pcn {

// Checkpoint container: length-prefixed named arrays of 64-bit little-endian
// reals. Layout:
//   magic "PCNCKPT1"
//   u32 entry count
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              f64-LE values (product of dims)
struct NamedArrays {
    // std::map keeps load/store order independent of insertion order.
    std::map<std::string, Tensor> arrays;

    bool has(const std::string& name) const { return arrays.count(name) != 0; }
    const Tensor& get(const std::string& name) const;
    void put(const std::string& name, Tensor t) { arrays[name] = std::move(t); }
};

void save_named_arrays(const NamedArrays& na, const std::string& path);
NamedArrays load_named_arrays(const std::string& path);

// Raw 64-bit words packed bit-exactly into doubles, for stashing non-real
// state (e.g. RNG words) in the same container.
Tensor pack_u64_words(const std::vector<std::uint64_t>& words);
std::vector<std::uint64_t> unpack_u64_words(const Tensor& t);

}  // namespace pcn
