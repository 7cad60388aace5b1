#include "pcn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "pcn/proposals.hpp"
#include "pcn/rng.hpp"

namespace pcn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ObjSpec {
    int shape;  // 0 circle, 1 square, 2 triangle
    int color;  // index into palette
    int size;   // 0 small, 1 large
    std::int64_t cy, cx, r;
};

const char* kShapeNames[] = {"circle", "square", "triangle"};
const char* kColorNames[] = {"red", "green", "blue", "yellow", "magenta", "cyan"};
const double kPalette[][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}};
const char* kSizeNames[] = {"small", "large"};

Mask rasterize(const ObjSpec& o, std::int64_t hw) {
    Mask m(hw, hw);
    for (std::int64_t y = 0; y < hw; ++y) {
        for (std::int64_t x = 0; x < hw; ++x) {
            const std::int64_t dy = y - o.cy, dx = x - o.cx;
            bool inside = false;
            if (o.shape == 0) {
                inside = dy * dy + dx * dx <= o.r * o.r;
            } else if (o.shape == 1) {
                inside = std::abs(dy) <= o.r && std::abs(dx) <= o.r;
            } else {
                // apex-up triangle: base width 2r at cy+r, apex at cy-r
                if (dy >= -o.r && dy <= o.r) {
                    const double half = static_cast<double>(o.r) * (static_cast<double>(dy + o.r) / (2.0 * o.r));
                    inside = std::abs(static_cast<double>(dx)) <= half;
                }
            }
            if (inside) m.at(y, x) = 1;
        }
    }
    return m;
}

std::string region_name(const ObjSpec& o, std::int64_t hw) {
    const double fy = static_cast<double>(o.cy) / static_cast<double>(hw);
    const double fx = static_cast<double>(o.cx) / static_cast<double>(hw);
    if (fy > 0.36 && fy < 0.64 && fx > 0.36 && fx < 0.64) return "center";
    std::string s = fy < 0.5 ? "top" : "bottom";
    s += fx < 0.5 ? " left" : " right";
    return s;
}

}  // namespace

std::vector<GroundingSample> generate_dataset(std::size_t n_samples, std::int64_t image_size, std::uint64_t seed) {
    if (n_samples < 1) throw InvalidInputError("generate_dataset: n_samples must be >= 1");
    if (image_size < 32) throw InvalidInputError("generate_dataset: image_size must be >= 32");
    std::vector<GroundingSample> out;
    out.reserve(n_samples);
    Rng rng(seed);

    for (std::size_t si = 0; si < n_samples; ++si) {
        GroundingSample s;
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "img%05zu", si);
        s.group_id = idbuf;

        const int want = 2 + static_cast<int>(rng.next_below(3));  // 2..4 objects
        std::vector<ObjSpec> objs;
        std::vector<std::pair<int, int>> used;  // (color, shape) combos, unique per image
        int attempts = 0;
        while (static_cast<int>(objs.size()) < want && attempts < 200) {
            ++attempts;
            ObjSpec o;
            o.shape = static_cast<int>(rng.next_below(3));
            o.color = static_cast<int>(rng.next_below(6));
            o.size = static_cast<int>(rng.next_below(2));
            o.r = o.size == 0 ? 5 + static_cast<std::int64_t>(rng.next_below(3))
                              : 9 + static_cast<std::int64_t>(rng.next_below(3));
            // scale radii for larger canvases
            o.r = o.r * image_size / 64;
            const std::int64_t margin = o.r + 2;
            o.cy = margin + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(image_size - 2 * margin)));
            o.cx = margin + static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(image_size - 2 * margin)));
            if (std::find(used.begin(), used.end(), std::make_pair(o.color, o.shape)) != used.end()) continue;
            bool overlaps = false;
            auto bounding_r = [](const ObjSpec& obj) {
                // square/triangle corners reach r*sqrt(2) from the center
                return obj.shape == 0 ? static_cast<double>(obj.r) : static_cast<double>(obj.r) * 1.4143;
            };
            for (const auto& prev : objs) {
                const std::int64_t dy = prev.cy - o.cy, dx = prev.cx - o.cx;
                const double dist = std::sqrt(static_cast<double>(dy * dy + dx * dx));
                if (dist < bounding_r(prev) + bounding_r(o) + 3.0) {
                    overlaps = true;
                    break;
                }
            }
            if (overlaps) continue;
            used.emplace_back(o.color, o.shape);
            objs.push_back(o);
        }
        if (objs.size() < 2) {
            // dense layout failed; fall back to two small corner objects
            objs.clear();
            ObjSpec a{0, 0, 0, image_size / 4, image_size / 4, 5 * image_size / 64};
            ObjSpec b{1, 2, 0, 3 * image_size / 4, 3 * image_size / 4, 5 * image_size / 64};
            objs = {a, b};
        }

        // render: noisy dark background, solid object colors
        s.image = Image({3, image_size, image_size});
        for (std::int64_t i = 0; i < s.image.numel(); ++i) s.image[i] = 0.08 + 0.06 * rng.next_double();
        for (const auto& o : objs) {
            Mask m = rasterize(o, image_size);
            const double gain = 0.82 + 0.12 * rng.next_double();
            for (std::int64_t y = 0; y < image_size; ++y)
                for (std::int64_t x = 0; x < image_size; ++x) {
                    if (!m.at(y, x)) continue;
                    for (int ch = 0; ch < 3; ++ch)
                        s.image[(ch * image_size + y) * image_size + x] = kPalette[o.color][ch] * gain;
                }
            s.gt_masks.push_back(std::move(m));
        }

        for (std::size_t oi = 0; oi < objs.size(); ++oi) {
            const ObjSpec& o = objs[oi];
            std::string text;
            const bool relational = objs.size() >= 2 && rng.next_below(2) == 1;
            if (relational) {
                std::size_t other = oi;
                while (other == oi) other = static_cast<std::size_t>(rng.next_below(objs.size()));
                const ObjSpec& t = objs[other];
                const std::int64_t dy = o.cy - t.cy, dx = o.cx - t.cx;
                const char* rel = std::abs(dy) >= std::abs(dx) ? (dy < 0 ? "above" : "below") : "beside";
                text = std::string("the ") + kColorNames[o.color] + " " + kShapeNames[o.shape] + " " + rel + " the " +
                       kColorNames[t.color] + " " + kShapeNames[t.shape];
            } else {
                text = std::string("the ") + kSizeNames[o.size] + " " + kColorNames[o.color] + " " +
                       kShapeNames[o.shape] + " in the " + region_name(o, image_size);
            }
            s.texts.push_back(text);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Batch> make_batches(const std::vector<GroundingSample>& dataset, std::size_t b, std::size_t n_d,
                                std::uint64_t seed, std::size_t epoch) {
    if (b < 1) throw InvalidInputError("make_batches: b must be >= 1");
    if (dataset.size() < b) throw InvalidInputError("make_batches: batch size exceeds dataset size");
    Rng rng(fnv1a64("batches/" + std::to_string(seed) + "/" + std::to_string(epoch)));

    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(order[i - 1], order[j]);
    }

    std::vector<Batch> batches;
    for (std::size_t start = 0; start + b <= order.size(); start += b) {
        Batch batch;
        for (std::size_t k = 0; k < b; ++k) {
            BatchItem item;
            item.sample_index = order[start + k];
            const auto& sample = dataset[item.sample_index];
            item.text_index = static_cast<std::size_t>(rng.next_below(sample.texts.size()));
            if (sample.texts.size() > 1) {
                std::vector<std::size_t> others;
                for (std::size_t t = 0; t < sample.texts.size(); ++t)
                    if (t != item.text_index) others.push_back(t);
                const std::size_t take = std::min(n_d, others.size());
                for (std::size_t d = 0; d < take; ++d) {
                    const std::size_t pick = static_cast<std::size_t>(rng.next_below(others.size()));
                    item.partner_text_indices.push_back(others[pick]);
                    others.erase(others.begin() + static_cast<std::ptrdiff_t>(pick));
                }
            }
            batch.items.push_back(std::move(item));
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

void save_dataset(const std::string& dir, const std::vector<GroundingSample>& samples) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    json manifest = json::array();
    for (const auto& s : samples) {
        const std::string img_rel = "images/" + s.group_id + ".ppm";
        write_ppm(s.image, (fs::path(dir) / img_rel).string());
        json texts = json::array();
        for (std::size_t t = 0; t < s.texts.size(); ++t) {
            const std::string mask_rel = "masks/" + s.group_id + "_" + std::to_string(t) + ".json";
            ProposalFile pf;
            pf.image_id = s.group_id + ":" + std::to_string(t);
            pf.height = s.gt_masks[t].h;
            pf.width = s.gt_masks[t].w;
            pf.masks = {s.gt_masks[t]};
            write_proposal_file((fs::path(dir) / mask_rel).string(), pf);
            texts.push_back(json{{"text", s.texts[t]}, {"mask_file", mask_rel}});
        }
        manifest.push_back(json{{"image_id", s.group_id}, {"image_file", img_rel}, {"texts", texts}});
    }
    std::ofstream os(fs::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << manifest.dump(2) << "\n";
}

std::vector<GroundingSample> load_dataset(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "manifest.json");
    if (!is) throw IoError("cannot open manifest in " + dir);
    json manifest = json::parse(is, nullptr, false);
    if (manifest.is_discarded()) throw IoError("bad manifest json in " + dir);
    std::vector<GroundingSample> out;
    for (const auto& e : manifest) {
        GroundingSample s;
        s.group_id = e.value("image_id", "");
        s.image = read_ppm((fs::path(dir) / e.value("image_file", "")).string());
        for (const auto& t : e["texts"]) {
            s.texts.push_back(t.value("text", ""));
            ProposalFile pf = read_proposal_file((fs::path(dir) / t.value("mask_file", "")).string());
            if (pf.masks.empty()) throw IoError("mask file without mask for " + s.group_id);
            s.gt_masks.push_back(pf.masks[0]);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace pcn
