#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "pcn/proposals.hpp"
#include "support/test_util.hpp"

using namespace pcn;

namespace {

Mask rect_mask(std::int64_t h, std::int64_t w, std::int64_t r0, std::int64_t c0, std::int64_t rh, std::int64_t cw) {
    Mask m(h, w);
    for (std::int64_t r = r0; r < r0 + rh; ++r)
        for (std::int64_t c = c0; c < c0 + cw; ++c) m.at(r, c) = 1;
    return m;
}

Mask random_mask(std::int64_t h, std::int64_t w, Rng& rng, double density = 0.4) {
    Mask m(h, w);
    for (auto& v : m.data) v = rng.next_double() < density ? 1 : 0;
    return m;
}

// pixel-counting IoU oracle, written independently of image.cpp
double iou_oracle(const Mask& a, const Mask& b) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] && b.data[i]) ++inter;
        if (a.data[i] || b.data[i]) ++uni;
    }
    return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace

TEST_CASE("filter drops small areas and pads to p") {
    std::vector<Mask> raw;
    raw.push_back(rect_mask(100, 100, 0, 0, 10, 50));    // area 500
    raw.push_back(rect_mask(100, 100, 20, 0, 30, 50));   // area 1500
    raw.push_back(rect_mask(100, 100, 60, 0, 40, 50));   // area 2000
    FilterParams fp;
    fp.area_min = 1000;
    fp.iou_dedupe = 0.8;
    fp.p = 5;
    const ProposalSet ps = filter_proposals(raw, fp);
    CHECK(ps.p() == 5);
    CHECK(ps.valid_count() == 2);
    CHECK(ps.masks[0].area() == 2000);  // area-descending order
    CHECK(ps.masks[1].area() == 1500);
    for (std::int64_t i = 2; i < 5; ++i) {
        CHECK_FALSE(ps.valid[static_cast<std::size_t>(i)]);
        CHECK(ps.masks[static_cast<std::size_t>(i)].area() == 0);
    }
}

TEST_CASE("duplicate masks are deduped, keeping one") {
    const Mask m = rect_mask(64, 64, 10, 10, 40, 40);
    FilterParams fp;
    fp.area_min = 100;
    fp.p = 4;
    const ProposalSet ps = filter_proposals({m, m, m}, fp);
    CHECK(ps.valid_count() == 1);
}

TEST_CASE("top-p by area matches a sort oracle on 50 disjoint masks") {
    std::vector<Mask> raw;
    std::vector<std::int64_t> areas;
    for (int i = 0; i < 50; ++i) {
        raw.push_back(rect_mask(300, 260, 6 * i, 0, 5, 200 + i));  // distinct areas 5*(200+i)
        areas.push_back(raw.back().area());
    }
    FilterParams fp;  // paper defaults: 1000 / 0.8 / 40
    const ProposalSet ps = filter_proposals(raw, fp);
    CHECK(ps.p() == 40);
    CHECK(ps.valid_count() == 40);

    std::sort(areas.rbegin(), areas.rend());
    for (int i = 0; i < 40; ++i) CHECK(ps.masks[static_cast<std::size_t>(i)].area() == areas[static_cast<std::size_t>(i)]);
}

TEST_CASE("mixed resolutions are rejected") {
    FilterParams fp;
    CHECK_THROWS_AS(filter_proposals({rect_mask(32, 32, 0, 0, 8, 8), rect_mask(64, 64, 0, 0, 8, 8)}, fp),
                    InvalidInputError);
}

TEST_CASE("soft iou basics") {
    const Mask m = rect_mask(8, 8, 2, 2, 4, 4);
    Tensor r = m.to_tensor();
    CHECK(soft_iou(r, m) == doctest::Approx(1.0));

    Tensor half = r;
    for (auto& v : half.data) v *= 0.5;
    CHECK(soft_iou(half, m) == doctest::Approx(0.5));

    const Mask disjoint = rect_mask(8, 8, 0, 0, 2, 2);
    CHECK(soft_iou(r, disjoint) == doctest::Approx(0.0));  // empty intersection
    Tensor zero({8, 8});
    CHECK(soft_iou(zero, disjoint) == doctest::Approx(0.0));
    CHECK(soft_iou(zero, Mask(8, 8)) == doctest::Approx(0.0));  // empty denominator
}

TEST_CASE("soft iou equals binary IoU on 50 random binary pairs and is symmetric") {
    Rng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const Mask a = random_mask(16, 16, rng);
        const Mask b = random_mask(16, 16, rng);
        const double s = soft_iou(a.to_tensor(), b);
        CHECK(s == doctest::Approx(iou_oracle(a, b)).epsilon(1e-12));
        CHECK(s == doctest::Approx(soft_iou(b.to_tensor(), a)).epsilon(1e-12));
        CHECK(s >= 0.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("tape soft iou matches the value path and its gradient passes FD") {
    Rng rng(22);
    const Mask m = random_mask(6, 6, rng);
    Tensor r = pcn_test::random_tensor({6, 6}, rng, 0.05, 0.95);

    Tape tp;
    Var vr = tp.leaf(r, true);
    Var iou = soft_iou(tp, vr, m);
    CHECK(tp.val(iou)[0] == doctest::Approx(soft_iou(r, m)).epsilon(1e-12));
    tp.backward(iou);
    const Tensor analytic = tp.grad(vr);

    auto forward = [&]() {
        Tape t2;
        return t2.val(soft_iou(t2, t2.leaf(r, false), m))[0];
    };
    pcn_test::FdCheck fd;
    const bool ok = fd.check_tensor(r, analytic, forward, "soft_iou");
    INFO(fd.failure);
    CHECK(ok);
}

TEST_CASE("synthetic proposals are deterministic and keep all raw masks when filters are off") {
    std::vector<Mask> gts = {rect_mask(64, 64, 5, 5, 12, 12), rect_mask(64, 64, 40, 40, 14, 10)};
    FilterParams keep_all;
    keep_all.area_min = 0;
    keep_all.iou_dedupe = 2.0;  // IoU never exceeds 1
    keep_all.p = 4;
    const ProposalSet a = synth_proposals(gts, 2, 77, keep_all);
    CHECK(a.p() == 4);
    CHECK(a.valid_count() == 4);  // 2 ground truths + 2 distractors, pre-filter count

    const ProposalSet b = synth_proposals(gts, 2, 77, keep_all);
    for (std::int64_t i = 0; i < a.p(); ++i) CHECK(a.masks[static_cast<std::size_t>(i)].data == b.masks[static_cast<std::size_t>(i)].data);
}

TEST_CASE("near-duplicate distractor is removed by the dedupe threshold") {
    // one-pixel dilation of a large rectangle keeps IoU above 0.8
    const Mask gt = rect_mask(64, 64, 10, 10, 30, 30);
    Mask dilated = rect_mask(64, 64, 9, 9, 32, 32);
    REQUIRE(iou_oracle(gt, dilated) > 0.8);
    FilterParams fp;
    fp.area_min = 100;
    fp.iou_dedupe = 0.8;
    fp.p = 4;
    const ProposalSet ps = filter_proposals({gt, dilated}, fp);
    CHECK(ps.valid_count() == 1);
    CHECK(ps.masks[0].area() == dilated.area());  // larger-area mask wins
}

TEST_CASE("rle encoding starts with a zero-run and round-trips") {
    Mask m(4, 4);
    m.at(0, 0) = 1;  // first pixel set -> leading zero-run of length 0
    m.at(2, 1) = 1;
    m.at(2, 2) = 1;
    const auto runs = rle_encode(m);
    CHECK(runs[0] == 0);
    const Mask back = rle_decode(4, 4, runs);
    CHECK(back.data == m.data);

    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        const Mask r = random_mask(9, 13, rng, 0.3);
        CHECK(rle_decode(9, 13, rle_encode(r)).data == r.data);
    }

    CHECK_THROWS_AS(rle_decode(2, 2, {5}), InvalidInputError);
    CHECK_THROWS_AS(rle_decode(2, 2, {1, 1}), InvalidInputError);
}

TEST_CASE("proposal files round-trip through json") {
    const std::string path = (std::filesystem::temp_directory_path() / "pcn_props_test.json").string();
    ProposalFile pf;
    pf.image_id = "img00042";
    pf.height = 16;
    pf.width = 12;
    Rng rng(24);
    pf.masks = {random_mask(16, 12, rng), random_mask(16, 12, rng, 0.2)};
    write_proposal_file(path, pf);

    const ProposalFile back = read_proposal_file(path);
    CHECK(back.image_id == pf.image_id);
    CHECK(back.height == 16);
    CHECK(back.width == 12);
    REQUIRE(back.masks.size() == 2);
    CHECK(back.masks[0].data == pf.masks[0].data);
    CHECK(back.masks[1].data == pf.masks[1].data);
    std::remove(path.c_str());
}
