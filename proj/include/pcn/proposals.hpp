#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pcn/autodiff.hpp"
#include "pcn/image.hpp"
#include "pcn/rng.hpp"

namespace pcn {

// Mask proposals for one image after filtering. Exactly p entries; padding
// entries are all-zero with valid=false.
struct ProposalSet {
    std::vector<Mask> masks;
    std::vector<bool> valid;
    std::int64_t h = 0, w = 0;

    std::int64_t p() const { return static_cast<std::int64_t>(masks.size()); }
    std::int64_t valid_count() const {
        std::int64_t n = 0;
        for (bool v : valid) n += v ? 1 : 0;
        return n;
    }
};

struct FilterParams {
    std::int64_t area_min = 1000;
    double iou_dedupe = 0.8;
    std::int64_t p = 40;
};

// Drop small masks, greedily dedupe by IoU keeping the larger-area mask,
// keep the top-p by area, pad with invalid all-zero masks.
ProposalSet filter_proposals(const std::vector<Mask>& raw, const FilterParams& fp);

// sum(min(R,m)) / sum(max(R,m)); 0 when the denominator is 0. Reduces to
// classic IoU on binary inputs.
double soft_iou(const Tensor& response, const Mask& mask);
double soft_iou(const Tensor& a, const Tensor& b);
Var soft_iou(Tape& tape, Var response, const Mask& mask);

// Ground-truth masks plus translated/dilated/merged distractors, then the
// regular filtering pipeline. Deterministic per seed.
ProposalSet synth_proposals(const std::vector<Mask>& gt_masks, int n_distractors, std::uint64_t seed,
                            const FilterParams& fp);

// Row-major alternating run lengths starting with a zero-run.
std::vector<std::int64_t> rle_encode(const Mask& m);
Mask rle_decode(std::int64_t h, std::int64_t w, const std::vector<std::int64_t>& runs);

struct ProposalFile {
    std::string image_id;
    std::int64_t height = 0;
    std::int64_t width = 0;
    std::vector<Mask> masks;
};

void write_proposal_file(const std::string& path, const ProposalFile& pf);
ProposalFile read_proposal_file(const std::string& path);

}  // namespace pcn
