#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pcn/cue_gen.hpp"
#include "pcn/data.hpp"

using namespace pcn;

TEST_CASE("generation is byte-identical for a fixed seed") {
    const auto a = generate_dataset(12, 64, 7);
    const auto b = generate_dataset(12, 64, 7);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].image.data == b[i].image.data);
        CHECK(a[i].texts == b[i].texts);
        REQUIRE(a[i].gt_masks.size() == b[i].gt_masks.size());
        for (std::size_t t = 0; t < a[i].gt_masks.size(); ++t) CHECK(a[i].gt_masks[t].data == b[i].gt_masks[t].data);
    }
    const auto c = generate_dataset(12, 64, 8);
    CHECK(a[0].image.data != c[0].image.data);
}

TEST_CASE("every generated text rule-decomposes into at least two phrases") {
    const auto samples = generate_dataset(40, 64, 3);
    for (const auto& s : samples) {
        for (const auto& text : s.texts) {
            const CueSet cues = decompose_rules(text);
            INFO("text: " << text);
            CHECK(cues.phrases.size() >= 2);
        }
    }
}

TEST_CASE("ground-truth masks are nonempty, connected to one instance, and disjoint within a group") {
    const auto samples = generate_dataset(30, 64, 4);
    for (const auto& s : samples) {
        REQUIRE(s.texts.size() == s.gt_masks.size());
        CHECK(s.texts.size() >= 2);
        for (std::size_t t = 0; t < s.gt_masks.size(); ++t) CHECK(s.gt_masks[t].area() > 0);
        for (std::size_t t1 = 0; t1 < s.gt_masks.size(); ++t1)
            for (std::size_t t2 = t1 + 1; t2 < s.gt_masks.size(); ++t2) {
                std::int64_t inter = 0;
                for (std::size_t i = 0; i < s.gt_masks[t1].data.size(); ++i)
                    inter += (s.gt_masks[t1].data[i] && s.gt_masks[t2].data[i]) ? 1 : 0;
                CHECK(inter == 0);
            }
        std::set<std::string> uniq(s.texts.begin(), s.texts.end());
        CHECK(uniq.size() == s.texts.size());
    }
}

TEST_CASE("batches draw distinct images and same-image partners") {
    const auto dataset = generate_dataset(20, 64, 5);
    const auto batches = make_batches(dataset, 8, 1, 42, 0);
    REQUIRE(batches.size() == 2);  // floor(20/8)
    for (const auto& batch : batches) {
        REQUIRE(batch.items.size() == 8);
        std::set<std::size_t> images;
        for (const auto& item : batch.items) {
            images.insert(item.sample_index);
            const auto& sample = dataset[item.sample_index];
            CHECK(item.text_index < sample.texts.size());
            CHECK(item.partner_text_indices.size() <= 1);
            for (std::size_t pt : item.partner_text_indices) {
                CHECK(pt < sample.texts.size());
                CHECK(pt != item.text_index);  // partner differs from the positive text
            }
        }
        CHECK(images.size() == 8);  // no image appears twice
    }
}

TEST_CASE("batching is deterministic per (seed, epoch) and varies across epochs") {
    const auto dataset = generate_dataset(16, 64, 6);
    const auto a = make_batches(dataset, 4, 1, 9, 0);
    const auto b = make_batches(dataset, 4, 1, 9, 0);
    REQUIRE(a.size() == b.size());
    bool identical_across_epochs = true;
    const auto c = make_batches(dataset, 4, 1, 9, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].items.size() == b[i].items.size());
        for (std::size_t j = 0; j < a[i].items.size(); ++j) {
            CHECK(a[i].items[j].sample_index == b[i].items[j].sample_index);
            CHECK(a[i].items[j].text_index == b[i].items[j].text_index);
            CHECK(a[i].items[j].partner_text_indices == b[i].items[j].partner_text_indices);
            if (a[i].items[j].sample_index != c[i].items[j].sample_index) identical_across_epochs = false;
        }
    }
    CHECK_FALSE(identical_across_epochs);

    CHECK_THROWS_AS(make_batches(dataset, 17, 1, 9, 0), InvalidInputError);
}

TEST_CASE("single-text samples yield empty partner lists") {
    GroundingSample s;
    s.group_id = "solo";
    s.image = Image({3, 4, 4});
    s.texts = {"the red circle in the center"};
    s.gt_masks = {Mask(4, 4)};
    s.gt_masks[0].at(1, 1) = 1;
    std::vector<GroundingSample> dataset = {s, s, s, s};
    for (auto& d : dataset) d.group_id += "x";
    const auto batches = make_batches(dataset, 4, 1, 0, 0);
    REQUIRE(batches.size() == 1);
    for (const auto& item : batches[0].items) CHECK(item.partner_text_indices.empty());
}

TEST_CASE("dataset serialization round-trips") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "pcn_dataset_test").string();
    fs::remove_all(dir);

    const auto samples = generate_dataset(5, 64, 11);
    save_dataset(dir, samples);
    const auto back = load_dataset(dir);
    REQUIRE(back.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(back[i].group_id == samples[i].group_id);
        CHECK(back[i].texts == samples[i].texts);
        REQUIRE(back[i].gt_masks.size() == samples[i].gt_masks.size());
        for (std::size_t t = 0; t < samples[i].gt_masks.size(); ++t)
            CHECK(back[i].gt_masks[t].data == samples[i].gt_masks[t].data);
        // images pass through 8-bit quantization
        REQUIRE(back[i].image.numel() == samples[i].image.numel());
        double worst = 0.0;
        for (std::int64_t j = 0; j < samples[i].image.numel(); ++j)
            worst = std::max(worst, std::abs(back[i].image[j] - samples[i].image[j]));
        CHECK(worst <= 0.5 / 255.0 + 1e-12);
    }
    fs::remove_all(dir);
}
