#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pcn/cue_gen.hpp"
#include "pcn/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int cmd_decompose(const std::string& in_path, const std::string& out_path, int k, const std::string& backend,
                  const std::string& cache_path, const std::string& llm_host, int llm_port) {
    std::ifstream is(in_path);
    if (!is) {
        std::cerr << "cannot open " << in_path << "\n";
        return 1;
    }
    std::ofstream os(out_path);
    if (!os) {
        std::cerr << "cannot open " << out_path << " for write\n";
        return 1;
    }
    pcn::CueCache cache(cache_path.empty() ? std::string() : cache_path);
    const pcn::PromptParts tmpl = pcn::PromptParts::default_template();
    std::unique_ptr<pcn::HttpLlmClient> client;
    if (backend == "llm") client = std::make_unique<pcn::HttpLlmClient>(llm_host, llm_port);

    std::string line;
    std::size_t count = 0;
    while (std::getline(is, line)) {
        const std::string text = pcn::normalize_whitespace(line);
        if (text.empty()) continue;
        pcn::CueSet cues;
        if (backend == "llm") {
            cues = pcn::decompose_llm(text, *client, tmpl, cache_path.empty() ? nullptr : &cache,
                                      [](const std::string& w) { std::cerr << "[warn] " << w << "\n"; });
        } else {
            cues = pcn::decompose_rules(text);
        }
        cues = pcn::standardize_cues(cues, static_cast<std::size_t>(k));
        json rec{{"key", pcn::CueCache::make_key(text, tmpl.version)},
                 {"text", text},
                 {"phrases", cues.phrases},
                 {"provenance", pcn::provenance_name(cues.provenance)},
                 {"created_at", pcn::iso8601_now()}};
        os << rec.dump() << "\n";
        ++count;
    }
    std::cerr << "decomposed " << count << " texts -> " << out_path << "\n";
    return 0;
}

std::vector<pcn::GroundingSample> dataset_for(const pcn::RunConfig& cfg) {
    if (!cfg.dataset_dir.empty()) return pcn::load_dataset(cfg.dataset_dir);
    return pcn::generate_dataset(cfg.n_train_samples, cfg.encoder_config().image_size, cfg.seed);
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    const pcn::RunConfig cfg = pcn::load_run_config(config_path);
    const fs::path out = out_dir.empty() ? fs::path(pcn::default_out_root()) / "train" : fs::path(out_dir);
    fs::create_directories(out);

    auto dataset = dataset_for(cfg);
    pcn::Trainer trainer(cfg, std::move(dataset));
    std::ofstream log_os(out / "loss_log.jsonl");
    auto logs = trainer.train([&](const pcn::StepLog& log) {
        const std::string line = pcn::step_log_json(log);
        std::cout << line << "\n";
        log_os << line << "\n";
    });

    const std::string ckpt = (out / "model.ckpt").string();
    trainer.save_checkpoint(ckpt);
    const pcn::MetricsReport rep = trainer.evaluate_train();
    std::ofstream rep_os(out / "train_metrics.json");
    rep_os << pcn::metrics_report_json(rep) << "\n";
    std::cerr << "trained " << trainer.step() << " steps; train PointM " << rep.pointm << "; checkpoint " << ckpt
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& split, const std::string& data_dir, std::size_t n,
             const std::string& out_path) {
    pcn::PcnModel model = pcn::load_model(ckpt);
    std::vector<pcn::GroundingSample> samples;
    if (!data_dir.empty()) {
        samples = pcn::load_dataset(data_dir);
    } else {
        const std::uint64_t split_seed = pcn::fnv1a64("split/" + std::to_string(model.cfg.seed) + "/" + split);
        samples = pcn::generate_dataset(n, model.enc_cfg.image_size, split_seed);
    }
    const pcn::MetricsReport rep = pcn::evaluate_model(model, samples, split);
    const std::string text = pcn::metrics_report_json(rep);
    if (out_path.empty()) {
        std::cout << text << "\n";
    } else {
        std::ofstream os(out_path);
        os << text << "\n";
        std::cerr << "metrics -> " << out_path << "\n";
    }
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& image_path, const std::string& text,
              const std::string& proposals_path, const std::string& out_dir) {
    pcn::PcnModel model = pcn::load_model(ckpt);
    const pcn::Image image = pcn::read_ppm(image_path);

    std::optional<pcn::ProposalSet> props;
    if (!proposals_path.empty()) {
        const pcn::ProposalFile pf = pcn::read_proposal_file(proposals_path);
        props = pcn::filter_proposals(pf.masks, model.cfg.filter_params());
        props->h = pf.height;
        props->w = pf.width;
    }

    const pcn::InferResult res = pcn::infer_once(model, image, text, props ? &*props : nullptr);

    const fs::path out = out_dir.empty() ? fs::path(pcn::default_out_root()) / "infer" : fs::path(out_dir);
    fs::create_directories(out);
    for (const auto& rm : res.stage_maps) {
        const std::string base = "stage" + std::to_string(rm.stage);
        pcn::write_pgm16(rm.data, (out / (base + ".pgm")).string());
        const pcn::PeakPoint pk = pcn::peak_point(rm.data, model.enc_cfg.image_size, model.enc_cfg.image_size);
        json side{{"stage", rm.stage}, {"peak_row", pk.row}, {"peak_col", pk.col}};
        std::ofstream ss(out / (base + ".json"));
        ss << side.dump(2) << "\n";
    }
    json summary{{"peak_row", res.peak.row}, {"peak_col", res.peak.col}, {"degenerate", res.peak.degenerate}};
    if (res.selection) {
        summary["selected_proposal"] = res.selection->index;
        pcn::ProposalFile sel;
        sel.image_id = "selection";
        sel.height = res.selection->mask.h;
        sel.width = res.selection->mask.w;
        sel.masks = {res.selection->mask};
        pcn::write_proposal_file((out / "selection.json").string(), sel);
    }
    std::cout << summary.dump(2) << "\n";
    std::cerr << "stage maps -> " << out << "\n";
    return 0;
}

int cmd_gen_data(std::size_t n, std::int64_t image_size, std::uint64_t seed, const std::string& out_dir) {
    auto samples = pcn::generate_dataset(n, image_size, seed);
    pcn::save_dataset(out_dir, samples);
    std::cerr << "wrote " << samples.size() << " samples -> " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"progressive comprehension grounding toolkit"};
    app.require_subcommand(1);

    std::string in_path, out_path, backend = "rules", cache_path;
    int k = 5;
    std::string llm_host = std::getenv("PCN_LLM_HOST") ? std::getenv("PCN_LLM_HOST") : "127.0.0.1";
    int llm_port = std::getenv("PCN_LLM_PORT") ? std::atoi(std::getenv("PCN_LLM_PORT")) : 8080;
    auto* dec = app.add_subcommand("decompose", "decompose referring texts into cues");
    dec->add_option("--in", in_path, "input file, one text per line")->required();
    dec->add_option("--out", out_path, "output jsonl")->required();
    dec->add_option("--k", k, "standardized cue count");
    dec->add_option("--backend", backend, "llm or rules")->check(CLI::IsMember({"llm", "rules"}));
    dec->add_option("--cache", cache_path, "cue cache jsonl");
    dec->add_option("--llm-host", llm_host, "llm endpoint host");
    dec->add_option("--llm-port", llm_port, "llm endpoint port");

    std::string config_path, train_out;
    auto* tr = app.add_subcommand("train", "train on a synthetic or loaded dataset");
    tr->add_option("--config", config_path, "run config json")->required();
    tr->add_option("--out", train_out, "output directory");

    std::string ckpt, split = "heldout", data_dir, eval_out;
    std::size_t eval_n = 64;
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
    ev->add_option("--split", split, "split name");
    ev->add_option("--data", data_dir, "dataset directory (default: synthesize)");
    ev->add_option("--n", eval_n, "synthetic split size");
    ev->add_option("--out", eval_out, "metrics output file");

    std::string image_path, text, proposals_path, infer_out;
    auto* inf = app.add_subcommand("infer", "response maps and peak for one image/text");
    inf->add_option("--ckpt", ckpt, "checkpoint file")->required();
    inf->add_option("--image", image_path, "input ppm image")->required();
    inf->add_option("--text", text, "referring text")->required();
    inf->add_option("--proposals", proposals_path, "proposal file (rle json)");
    inf->add_option("--out", infer_out, "output directory");

    std::size_t gen_n = 64;
    std::int64_t gen_size = 64;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset to disk");
    gen->add_option("--n", gen_n, "number of images");
    gen->add_option("--image-size", gen_size, "image side length");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (dec->parsed()) return cmd_decompose(in_path, out_path, k, backend, cache_path, llm_host, llm_port);
        if (tr->parsed()) return cmd_train(config_path, train_out);
        if (ev->parsed()) return cmd_eval(ckpt, split, data_dir, eval_n, eval_out);
        if (inf->parsed()) return cmd_infer(ckpt, image_path, text, proposals_path, infer_out);
        if (gen->parsed()) return cmd_gen_data(gen_n, gen_size, gen_seed, gen_out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
