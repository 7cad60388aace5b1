#include "pcn/proposals.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace pcn {

using nlohmann::json;

ProposalSet filter_proposals(const std::vector<Mask>& raw, const FilterParams& fp) {
    if (fp.p < 1) throw InvalidInputError("filter_proposals: p must be >= 1");
    std::int64_t h = 0, w = 0;
    for (const auto& m : raw) {
        if (h == 0 && w == 0) {
            h = m.h;
            w = m.w;
        } else if (m.h != h || m.w != w) {
            throw InvalidInputError("filter_proposals: mixed mask resolutions");
        }
    }

    struct Cand {
        const Mask* m;
        std::int64_t area;
        std::size_t index;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const std::int64_t a = raw[i].area();
        if (a >= fp.area_min) cands.push_back({&raw[i], a, i});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.area != b.area) return a.area > b.area;
        return a.index < b.index;
    });

    ProposalSet out;
    out.h = h;
    out.w = w;
    for (const auto& c : cands) {
        if (static_cast<std::int64_t>(out.masks.size()) >= fp.p) break;
        bool dup = false;
        for (const auto& kept : out.masks) {
            if (binary_iou(*c.m, kept) > fp.iou_dedupe) {
                dup = true;
                break;
            }
        }
        if (dup) continue;
        out.masks.push_back(*c.m);
        out.valid.push_back(true);
    }
    while (static_cast<std::int64_t>(out.masks.size()) < fp.p) {
        out.masks.emplace_back(h, w);
        out.valid.push_back(false);
    }
    return out;
}

double soft_iou(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw InvalidInputError("soft_iou: shape mismatch");
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        num += std::min(a[i], b[i]);
        den += std::max(a[i], b[i]);
    }
    return den == 0.0 ? 0.0 : num / den;
}

double soft_iou(const Tensor& response, const Mask& mask) {
    if (response.numel() != mask.numel()) throw InvalidInputError("soft_iou: resolution mismatch");
    double num = 0.0, den = 0.0;
    for (std::int64_t i = 0; i < response.numel(); ++i) {
        const double r = response[i];
        const double m = mask.data[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        num += std::min(r, m);
        den += std::max(r, m);
    }
    return den == 0.0 ? 0.0 : num / den;
}

Var soft_iou(Tape& tape, Var response, const Mask& mask) {
    const Tensor& r = tape.val(response);
    if (r.numel() != mask.numel()) throw InvalidInputError("soft_iou: resolution mismatch");
    Tensor mt(r.shape);
    for (std::int64_t i = 0; i < mt.numel(); ++i) mt[i] = mask.data[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    Var num = tape.sum_all(tape.min_const(response, mt));
    Var den = tape.sum_all(tape.max_const(response, mt));
    if (tape.val(den)[0] == 0.0) return tape.constant_scalar(0.0);
    // num / den on scalars
    return tape.div_bscalar(num, den);
}

namespace {

Mask translate_mask(const Mask& m, std::int64_t dy, std::int64_t dx) {
    Mask out(m.h, m.w);
    for (std::int64_t r = 0; r < m.h; ++r)
        for (std::int64_t c = 0; c < m.w; ++c) {
            if (!m.at(r, c)) continue;
            const std::int64_t nr = r + dy, nc = c + dx;
            if (nr >= 0 && nr < m.h && nc >= 0 && nc < m.w) out.at(nr, nc) = 1;
        }
    return out;
}

Mask dilate_mask(const Mask& m, int radius) {
    Mask out(m.h, m.w);
    for (std::int64_t r = 0; r < m.h; ++r)
        for (std::int64_t c = 0; c < m.w; ++c) {
            if (!m.at(r, c)) continue;
            for (std::int64_t dr = -radius; dr <= radius; ++dr)
                for (std::int64_t dc = -radius; dc <= radius; ++dc) {
                    const std::int64_t nr = r + dr, nc = c + dc;
                    if (nr >= 0 && nr < m.h && nc >= 0 && nc < m.w) out.at(nr, nc) = 1;
                }
        }
    return out;
}

Mask merge_masks(const Mask& a, const Mask& b) {
    Mask out(a.h, a.w);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = (a.data[i] || b.data[i]) ? 1 : 0;
    return out;
}

}  // namespace

ProposalSet synth_proposals(const std::vector<Mask>& gt_masks, int n_distractors, std::uint64_t seed,
                            const FilterParams& fp) {
    if (gt_masks.empty()) throw InvalidInputError("synth_proposals: need at least one ground-truth mask");
    Rng rng(seed);
    std::vector<Mask> raw = gt_masks;
    const std::int64_t h = gt_masks[0].h, w = gt_masks[0].w;
    for (int d = 0; d < n_distractors; ++d) {
        const std::size_t src = static_cast<std::size_t>(rng.next_below(gt_masks.size()));
        const int kind = static_cast<int>(rng.next_below(3));
        if (kind == 0) {
            const std::int64_t dy = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(h / 2))) - h / 4;
            const std::int64_t dx = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(w / 2))) - w / 4;
            raw.push_back(translate_mask(gt_masks[src], dy, dx));
        } else if (kind == 1) {
            raw.push_back(dilate_mask(gt_masks[src], 1 + static_cast<int>(rng.next_below(2))));
        } else {
            const std::size_t other = static_cast<std::size_t>(rng.next_below(gt_masks.size()));
            raw.push_back(merge_masks(gt_masks[src], gt_masks[other]));
        }
    }
    return filter_proposals(raw, fp);
}

std::vector<std::int64_t> rle_encode(const Mask& m) {
    std::vector<std::int64_t> runs;
    std::uint8_t cur = 0;  // first run counts zeros
    std::int64_t len = 0;
    for (std::int64_t i = 0; i < m.numel(); ++i) {
        const std::uint8_t v = m.data[static_cast<std::size_t>(i)] ? 1 : 0;
        if (v == cur) {
            ++len;
        } else {
            runs.push_back(len);
            cur = v;
            len = 1;
        }
    }
    runs.push_back(len);
    return runs;
}

Mask rle_decode(std::int64_t h, std::int64_t w, const std::vector<std::int64_t>& runs) {
    Mask m(h, w);
    std::int64_t pos = 0;
    std::uint8_t cur = 0;
    for (std::int64_t run : runs) {
        if (run < 0 || pos + run > m.numel()) throw InvalidInputError("rle_decode: runs exceed mask size");
        if (cur)
            for (std::int64_t i = 0; i < run; ++i) m.data[static_cast<std::size_t>(pos + i)] = 1;
        pos += run;
        cur = cur ? 0 : 1;
    }
    if (pos != m.numel()) throw InvalidInputError("rle_decode: runs do not cover mask");
    return m;
}

void write_proposal_file(const std::string& path, const ProposalFile& pf) {
    json masks = json::array();
    for (const auto& m : pf.masks) {
        masks.push_back(json{{"rle", rle_encode(m)}, {"area", m.area()}});
    }
    json doc{{"image_id", pf.image_id}, {"height", pf.height}, {"width", pf.width}, {"masks", masks}};
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for write: " + path);
    os << doc.dump() << "\n";
}

ProposalFile read_proposal_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    json doc = json::parse(is, nullptr, false);
    if (doc.is_discarded()) throw IoError("bad proposal json: " + path);
    ProposalFile pf;
    pf.image_id = doc.value("image_id", "");
    pf.height = doc.value("height", 0);
    pf.width = doc.value("width", 0);
    for (const auto& m : doc["masks"]) {
        std::vector<std::int64_t> runs;
        for (const auto& r : m["rle"]) runs.push_back(r.get<std::int64_t>());
        pf.masks.push_back(rle_decode(pf.height, pf.width, runs));
    }
    return pf;
}

}  // namespace pcn
