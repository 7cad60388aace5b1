#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pcn/train.hpp"

using namespace pcn;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.preset = "toy";
    cfg.c = 24;
    cfg.c_v = 32;
    cfg.c_l = 16;
    cfg.batch_size = 4;
    cfg.n_train_samples = 8;
    cfg.epochs = 2;
    cfg.p_proposals = 6;
    cfg.n_distractors = 3;
    cfg.lr = 1e-3;
    cfg.seed = 5;
    return cfg;
}

std::vector<GroundingSample> tiny_dataset(const RunConfig& cfg) {
    return generate_dataset(cfg.n_train_samples, cfg.encoder_config().image_size, cfg.seed);
}

}  // namespace

TEST_CASE("polynomial decay follows the formula, is monotone, and reaches zero") {
    const double lr0 = 5e-5;
    const std::int64_t total = 100;
    double prev = lr0 + 1.0;
    for (std::int64_t s = 0; s <= total; ++s) {
        const double lr = polynomial_lr(lr0, s, total, 0.9);
        CHECK(lr == doctest::Approx(lr0 * std::pow(1.0 - static_cast<double>(s) / total, 0.9)).epsilon(1e-12));
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK(polynomial_lr(lr0, total, total, 0.9) == 0.0);
    CHECK(polynomial_lr(lr0, 0, total, 0.9) == doctest::Approx(lr0));
}

TEST_CASE("run config json round-trips and rejects unknown keys") {
    RunConfig cfg = tiny_config();
    cfg.use_ras = false;
    cfg.target_pointm = 0.9;
    const RunConfig back = run_config_from_json(run_config_to_json(cfg));
    CHECK(back.c == cfg.c);
    CHECK(back.use_ras == cfg.use_ras);
    CHECK(back.target_pointm == doctest::Approx(cfg.target_pointm));
    CHECK(back.seed == cfg.seed);

    CHECK_THROWS_AS(run_config_from_json("{\"learning_rate\": 1e-4}"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json("not json"), ConfigError);
    CHECK_THROWS_AS(run_config_from_json("{\"preset\": \"huge\"}"), ConfigError);
}

TEST_CASE("step logs carry the pinned json keys") {
    StepLog log;
    log.step = 3;
    log.cls = 0.5;
    log.ras = 0.1;
    log.iad = -0.2;
    log.total = 0.4;
    const std::string line = step_log_json(log);
    for (const char* key : {"\"step\"", "\"cls\"", "\"ras\"", "\"iad\"", "\"total\""})
        CHECK(line.find(key) != std::string::npos);
}

TEST_CASE("identical config and seed reproduce the loss log exactly") {
    const RunConfig cfg = tiny_config();
    Trainer a(cfg, tiny_dataset(cfg));
    Trainer b(cfg, tiny_dataset(cfg));
    const auto la = a.train();
    const auto lb = b.train();
    REQUIRE(la.size() == lb.size());
    REQUIRE(la.size() == 4);  // 2 epochs x (8/4) batches
    for (std::size_t i = 0; i < la.size(); ++i) {
        CHECK(std::abs(la[i].total - lb[i].total) <= 1e-12);
        CHECK(std::abs(la[i].cls - lb[i].cls) <= 1e-12);
        CHECK(std::abs(la[i].ras - lb[i].ras) <= 1e-12);
        CHECK(std::abs(la[i].iad - lb[i].iad) <= 1e-12);
    }
    // losses stay finite and the components sum to the total
    for (const auto& log : la) CHECK(log.total == doctest::Approx(log.cls + log.ras + log.iad).epsilon(1e-12));
}

TEST_CASE("checkpoint restore continues the run bit-for-bit") {
    namespace fs = std::filesystem;
    const std::string ckpt = (fs::temp_directory_path() / "pcn_resume_test.ckpt").string();

    RunConfig cfg = tiny_config();
    cfg.epochs = 4;  // 8 steps total

    // uninterrupted reference run
    Trainer ref(cfg, tiny_dataset(cfg));
    const auto ref_logs = ref.train();
    REQUIRE(ref_logs.size() == 8);

    // stop after 4 steps, checkpoint, restore into a fresh trainer, continue
    Trainer first(cfg, tiny_dataset(cfg));
    const auto head = first.train({}, 4);
    REQUIRE(head.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(head[i].total - ref_logs[i].total) <= 1e-12);
    first.save_checkpoint(ckpt);

    Trainer second(cfg, tiny_dataset(cfg));
    second.load_checkpoint(ckpt);
    CHECK(second.step() == 4);
    const auto tail = second.train();
    REQUIRE(tail.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(tail[i].total - ref_logs[4 + i].total) <= 1e-12);
        CHECK(std::abs(tail[i].cls - ref_logs[4 + i].cls) <= 1e-12);
    }
    fs::remove(ckpt);
    fs::remove(ckpt + ".meta.json");
}

TEST_CASE("a saved model reloads with identical parameters and predictions") {
    namespace fs = std::filesystem;
    const std::string ckpt = (fs::temp_directory_path() / "pcn_model_test.ckpt").string();

    const RunConfig cfg = tiny_config();
    auto dataset = tiny_dataset(cfg);
    Trainer trainer(cfg, dataset);
    trainer.train();
    trainer.save_checkpoint(ckpt);

    const PcnModel model = load_model(ckpt);
    const MetricsReport a = trainer.evaluate_train();
    const MetricsReport b = evaluate_model(model, dataset, "train");
    CHECK(a.pointm == doctest::Approx(b.pointm).epsilon(1e-12));
    CHECK(a.miou == doctest::Approx(b.miou).epsilon(1e-12));
    fs::remove(ckpt);
    fs::remove(ckpt + ".meta.json");
}

TEST_CASE("an untrained model scores near the random-peak baseline") {
    RunConfig cfg = tiny_config();
    cfg.n_train_samples = 16;
    auto dataset = tiny_dataset(cfg);
    Trainer trainer(cfg, dataset);  // no training steps
    const MetricsReport rep = trainer.evaluate_train();

    // random-peak baseline: probability that a uniform pixel lands in the mask
    Rng rng(123);
    double baseline = 0.0;
    std::int64_t texts = 0;
    const std::int64_t img = cfg.encoder_config().image_size;
    for (const auto& s : dataset)
        for (const auto& m : s.gt_masks) {
            double hits = 0.0;
            for (int t = 0; t < 200; ++t) {
                const auto r = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(img)));
                const auto c = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint64_t>(img)));
                hits += m.at(r, c) ? 1.0 : 0.0;
            }
            baseline += hits / 200.0;
            ++texts;
        }
    baseline /= static_cast<double>(texts);
    INFO("pointm " << rep.pointm << " baseline " << baseline);
    CHECK(std::abs(rep.pointm - baseline) <= 0.25);
    CHECK(rep.pointm < 0.6);  // nowhere near trained performance
}

TEST_CASE("evaluation rejects an empty split and reports per-stage arrays") {
    const RunConfig cfg = tiny_config();
    auto dataset = tiny_dataset(cfg);
    Trainer trainer(cfg, dataset);
    CHECK_THROWS_AS(trainer.evaluate({}, "empty"), InvalidInputError);

    const MetricsReport rep = trainer.evaluate_train();
    CHECK(rep.pointm_per_stage.size() == static_cast<std::size_t>(cfg.n_stages));
    CHECK(rep.miou_per_stage.size() == static_cast<std::size_t>(cfg.n_stages));
    CHECK(rep.mean_ambiguity_per_stage.size() == static_cast<std::size_t>(cfg.n_stages));
    CHECK(rep.n > 0);
    CHECK(rep.oracle_miou >= rep.miou - 1e-12);  // oracle dominance
    CHECK(rep.argmax_separation >= 0.0);         // multi-text images exist
}

TEST_CASE("inference exports one map per stage and selects a proposal when given one") {
    const RunConfig cfg = tiny_config();
    auto dataset = tiny_dataset(cfg);
    Trainer trainer(cfg, dataset);

    const GroundingSample& s = dataset[0];
    const ProposalSet props = proposals_for_sample(cfg, s);

    const InferResult with = infer_once(trainer.model(), s.image, s.texts[0], &props);
    CHECK(with.stage_maps.size() == static_cast<std::size_t>(cfg.n_stages));
    REQUIRE(with.selection.has_value());
    const Tensor up = upsample_bilinear_value(with.stage_maps.back().data, props.h, props.w);
    const MaskSelection direct = select_mask(up, props);
    CHECK(with.selection->index == direct.index);

    const InferResult without = infer_once(trainer.model(), s.image, s.texts[0], nullptr);
    CHECK_FALSE(without.selection.has_value());
    CHECK(without.stage_maps.size() == static_cast<std::size_t>(cfg.n_stages));
    for (const auto& rm : without.stage_maps) {
        for (std::int64_t i = 0; i < rm.data.numel(); ++i) {
            CHECK(rm.data[i] >= 0.0);
            CHECK(rm.data[i] <= 1.0);
        }
    }
}

TEST_CASE("n_stages above k_cues warns but trains with cyclic reuse") {
    RunConfig cfg = tiny_config();
    cfg.n_stages = 4;
    cfg.k_cues = 3;
    bool warned = false;
    cfg.validate([&](const std::string&) { warned = true; });
    CHECK(warned);

    cfg.epochs = 1;
    Trainer trainer(cfg, tiny_dataset(cfg));
    const auto logs = trainer.train();
    CHECK(logs.size() == 2);
    for (const auto& log : logs) CHECK(std::isfinite(log.total));
}
