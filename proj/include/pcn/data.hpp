#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcn/image.hpp"

namespace pcn {

// One image with all its referring texts and per-text ground-truth masks.
// Texts within a sample refer to distinct, disjoint instances.
struct GroundingSample {
    Image image;
    std::vector<std::string> texts;
    std::vector<Mask> gt_masks;
    std::string group_id;
};

struct BatchItem {
    std::size_t sample_index = 0;
    std::size_t text_index = 0;
    std::vector<std::size_t> partner_text_indices;  // same-image texts for IaD
};

struct Batch {
    std::vector<BatchItem> items;
};

// Images with 2-4 attributed geometric objects and templated referring
// texts whose rule decomposition always yields >= 2 phrases. Reproducible
// per seed.
std::vector<GroundingSample> generate_dataset(std::size_t n_samples, std::int64_t image_size, std::uint64_t seed);

// Deterministic per (seed, epoch); every batch draws b samples from distinct
// images; partners are other texts of the same image (empty when none).
std::vector<Batch> make_batches(const std::vector<GroundingSample>& dataset, std::size_t b, std::size_t n_d,
                                std::uint64_t seed, std::size_t epoch);

void save_dataset(const std::string& dir, const std::vector<GroundingSample>& samples);
std::vector<GroundingSample> load_dataset(const std::string& dir);

}  // namespace pcn
