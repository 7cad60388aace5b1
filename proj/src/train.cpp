#include "pcn/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <json.hpp>

#include "pcn/serialize.hpp"

namespace pcn {

using nlohmann::json;

void RunConfig::validate(const std::function<void(const std::string&)>& warn) const {
    if (n_stages < 1 || k_cues < 1 || n_d < 0 || p_proposals < 1 || batch_size < 1 || epochs < 1)
        throw ConfigError("run config: counts must be positive");
    if (lr <= 0.0 || weight_decay < 0.0 || lr_poly_power <= 0.0)
        throw ConfigError("run config: optimizer settings must be positive");
    if (preset != "toy" && preset != "full") throw ConfigError("run config: preset must be 'toy' or 'full'");
    if (n_stages > k_cues && warn) warn("n_stages exceeds k_cues; later stages reuse cues cyclically");
    encoder_config().validate();
}

EncoderConfig RunConfig::encoder_config() const {
    EncoderConfig e = preset == "toy" ? EncoderConfig::toy() : EncoderConfig{};
    if (image_size > 0) e.image_size = image_size;
    if (c > 0) e.c = c;
    if (c_v > 0) e.c_v = c_v;
    if (c_l > 0) e.c_l = c_l;
    if (stride > 0) e.stride = stride;
    e.seed = seed;
    return e;
}

CrmConfig RunConfig::crm_config() const {
    CrmConfig c2;
    c2.c = encoder_config().c;
    c2.n_stages = n_stages;
    c2.share_stage_params = share_stage_params;
    return c2;
}

FilterParams RunConfig::filter_params() const {
    FilterParams fp;
    fp.area_min = proposal_area_min;
    fp.iou_dedupe = proposal_iou_dedupe;
    fp.p = p_proposals;
    return fp;
}

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("run config: invalid json");
    static const std::set<std::string> known = {
        "n_stages",       "k_cues",       "n_d",
        "p_proposals",    "batch_size",   "epochs",
        "lr",             "weight_decay", "lr_poly_power",
        "seed",           "preset",       "image_size",
        "c",              "c_v",          "c_l",
        "stride",         "n_train_samples", "dataset_dir",
        "use_ras",        "use_iad",      "freeze_encoders",
        "share_stage_params", "n_distractors", "proposal_area_min",
        "proposal_iou_dedupe", "max_steps", "target_pointm",
        "eval_every"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError("run config: unknown key '" + it.key() + "'");
    RunConfig c;
    read_field(j, "n_stages", c.n_stages);
    read_field(j, "k_cues", c.k_cues);
    read_field(j, "n_d", c.n_d);
    read_field(j, "p_proposals", c.p_proposals);
    read_field(j, "batch_size", c.batch_size);
    read_field(j, "epochs", c.epochs);
    read_field(j, "lr", c.lr);
    read_field(j, "weight_decay", c.weight_decay);
    read_field(j, "lr_poly_power", c.lr_poly_power);
    read_field(j, "seed", c.seed);
    read_field(j, "preset", c.preset);
    read_field(j, "image_size", c.image_size);
    read_field(j, "c", c.c);
    read_field(j, "c_v", c.c_v);
    read_field(j, "c_l", c.c_l);
    read_field(j, "stride", c.stride);
    read_field(j, "n_train_samples", c.n_train_samples);
    read_field(j, "dataset_dir", c.dataset_dir);
    read_field(j, "use_ras", c.use_ras);
    read_field(j, "use_iad", c.use_iad);
    read_field(j, "freeze_encoders", c.freeze_encoders);
    read_field(j, "share_stage_params", c.share_stage_params);
    read_field(j, "n_distractors", c.n_distractors);
    read_field(j, "proposal_area_min", c.proposal_area_min);
    read_field(j, "proposal_iou_dedupe", c.proposal_iou_dedupe);
    read_field(j, "max_steps", c.max_steps);
    read_field(j, "target_pointm", c.target_pointm);
    read_field(j, "eval_every", c.eval_every);
    if (c.preset != "toy" && c.preset != "full") throw ConfigError("run config: preset must be 'toy' or 'full'");
    return c;
}

std::string run_config_to_json(const RunConfig& c) {
    json j{{"n_stages", c.n_stages},
           {"k_cues", c.k_cues},
           {"n_d", c.n_d},
           {"p_proposals", c.p_proposals},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"lr", c.lr},
           {"weight_decay", c.weight_decay},
           {"lr_poly_power", c.lr_poly_power},
           {"seed", c.seed},
           {"preset", c.preset},
           {"image_size", c.image_size},
           {"c", c.c},
           {"c_v", c.c_v},
           {"c_l", c.c_l},
           {"stride", c.stride},
           {"n_train_samples", c.n_train_samples},
           {"dataset_dir", c.dataset_dir},
           {"use_ras", c.use_ras},
           {"use_iad", c.use_iad},
           {"freeze_encoders", c.freeze_encoders},
           {"share_stage_params", c.share_stage_params},
           {"n_distractors", c.n_distractors},
           {"proposal_area_min", c.proposal_area_min},
           {"proposal_iou_dedupe", c.proposal_iou_dedupe},
           {"max_steps", c.max_steps},
           {"target_pointm", c.target_pointm},
           {"eval_every", c.eval_every}};
    return j.dump(2);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return run_config_from_json(text);
}

double polynomial_lr(double lr0, std::int64_t step, std::int64_t total_steps, double power) {
    if (total_steps < 1) throw InvalidInputError("polynomial_lr: total_steps must be >= 1");
    const double frac = std::clamp(1.0 - static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
    return lr0 * std::pow(frac, power);
}

std::string step_log_json(const StepLog& log) {
    json j{{"step", log.step}, {"cls", log.cls}, {"ras", log.ras}, {"iad", log.iad}, {"total", log.total}};
    return j.dump();
}

std::string default_out_root() {
    if (const char* env = std::getenv("PCN_ROOT")) return env;
    return "pcn_out";
}

PcnModel::PcnModel(const RunConfig& cfg_in, Vocab vocab_in) : cfg(cfg_in), vocab(std::move(vocab_in)) {
    enc_cfg = cfg.encoder_config();
    crm_cfg = cfg.crm_config();
    Rng rng(cfg.seed);
    img_enc = ImageEncoder(enc_cfg, params, rng);
    txt_enc = TextEncoder(enc_cfg, vocab.size(), params, rng);
    register_crm_params(crm_cfg, params, rng);
}

PreparedText prepare_text(const RunConfig& cfg, const Vocab& vocab, const std::string& text) {
    PreparedText p;
    p.text_ids = vocab.encode(text);
    CueSet cues = standardize_cues(decompose_rules(text), static_cast<std::size_t>(cfg.k_cues));
    p.cue_phrases = cues.phrases;
    for (const auto& phrase : cues.phrases) p.cue_ids.push_back(vocab.encode(phrase));
    return p;
}

ProposalSet proposals_for_sample(const RunConfig& cfg, const GroundingSample& s) {
    const std::uint64_t seed = fnv1a64("props/" + std::to_string(cfg.seed) + "/" + s.group_id);
    return synth_proposals(s.gt_masks, cfg.n_distractors, seed, cfg.filter_params());
}

Trainer::Trainer(const RunConfig& cfg, std::vector<GroundingSample> train_set)
    : cfg_(cfg), train_set_(std::move(train_set)), data_rng_(cfg.seed) {
    cfg_.validate([](const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; });
    if (train_set_.empty()) throw InvalidInputError("trainer: empty training set");

    std::vector<std::string> texts;
    for (const auto& s : train_set_)
        for (const auto& t : s.texts) texts.push_back(t);
    model_ = PcnModel(cfg_, Vocab::build(texts));

    for (const auto& s : train_set_) {
        std::vector<PreparedText> per_text;
        for (const auto& t : s.texts) per_text.push_back(prepare_text(cfg_, model_.vocab, t));
        prepared_.push_back(std::move(per_text));
        proposals_.push_back(proposals_for_sample(cfg_, s));
    }

    adam_.resize(model_.params.count());
    for (std::size_t i = 0; i < adam_.size(); ++i) {
        adam_[i].m = Tensor(model_.params.tensor_at(i).shape);
        adam_[i].v = Tensor(model_.params.tensor_at(i).shape);
    }

    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>(train_set_.size() / static_cast<std::size_t>(cfg_.batch_size));
    if (steps_per_epoch < 1) throw InvalidInputError("trainer: dataset smaller than one batch");
    total_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : steps_per_epoch * cfg_.epochs;
}

StepLog Trainer::run_step(const Batch& batch, double lr) {
    const std::size_t b = batch.items.size();
    const std::int64_t hw_h = model_.enc_cfg.grid_size(), hw_w = model_.enc_cfg.grid_size();
    const std::int64_t img = model_.enc_cfg.image_size;
    const int n_stages = cfg_.n_stages;
    const int k = cfg_.k_cues;

    Tape tape;
    TapeBinding bind(tape, model_.params);

    std::vector<Var> v0(b), q0(b);
    std::vector<std::vector<Var>> cue_vars(b);
    for (std::size_t i = 0; i < b; ++i) {
        const auto& item = batch.items[i];
        const auto& sample = train_set_[item.sample_index];
        const auto& prep = prepared_[item.sample_index][item.text_index];
        v0[i] = model_.img_enc.encode(tape, bind, sample.image);
        q0[i] = model_.txt_enc.encode(tape, bind, prep.text_ids);
        for (const auto& ids : prep.cue_ids) cue_vars[i].push_back(model_.txt_enc.encode(tape, bind, ids));
    }

    auto negatives_for = [&](std::size_t i) {
        std::vector<std::vector<Var>> negs(static_cast<std::size_t>(n_stages));
        for (int n = 0; n < n_stages; ++n)
            for (std::size_t j = 0; j < b; ++j)
                if (j != i) negs[static_cast<std::size_t>(n)].push_back(cue_vars[j][static_cast<std::size_t>(n % k)]);
        return negs;
    };

    std::vector<std::vector<StageOutput>> stages(b);
    for (std::size_t i = 0; i < b; ++i)
        stages[i] = run_pipeline_embedded(tape, bind, model_.crm_cfg, v0[i], q0[i], cue_vars[i], negatives_for(i),
                                          hw_h, hw_w);

    // classification loss at every stage, equal weight
    Var cls = tape.constant_scalar(0.0);
    for (int n = 0; n < n_stages; ++n) {
        std::vector<std::vector<Var>> y(b, std::vector<Var>(b));
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < b; ++j) {
                if (i == j) {
                    y[i][j] = tape.max_all(stages[i][static_cast<std::size_t>(n)].resp_pre);
                } else {
                    Var logits = tape.matmul_nt(stages[i][static_cast<std::size_t>(n)].v_next,
                                                stages[j][static_cast<std::size_t>(n)].q_next);
                    y[i][j] = tape.max_all(tape.relu(logits));
                }
            }
        }
        cls = tape.add(cls, cls_loss(tape, y));
    }
    cls = tape.scale(cls, 1.0 / static_cast<double>(n_stages));

    const bool need_align = cfg_.use_ras || cfg_.use_iad;
    std::vector<std::vector<AlignmentScores>> aligns(b);
    std::vector<std::vector<Var>> resp_up(b);
    if (need_align) {
        for (std::size_t i = 0; i < b; ++i) {
            const auto& props = proposals_[batch.items[i].sample_index];
            for (int n = 0; n < n_stages; ++n) {
                Var up = tape.upsample_bilinear(stages[i][static_cast<std::size_t>(n)].resp_norm, img, img);
                resp_up[i].push_back(up);
                aligns[i].push_back(alignment_scores(tape, up, props));
            }
        }
    }

    Var ras = tape.constant_scalar(0.0);
    if (cfg_.use_ras) {
        Var acc = tape.constant_scalar(0.0);
        for (std::size_t i = 0; i < b; ++i) {
            std::vector<Var> ambs;
            for (int n = 0; n < n_stages; ++n) {
                const auto& al = aligns[i][static_cast<std::size_t>(n)];
                ambs.push_back(ambiguity(tape, resp_up[i][static_cast<std::size_t>(n)], al.fg_mask, al.bg_mask));
            }
            acc = tape.add(acc, ras_loss(tape, ambs));
        }
        ras = tape.scale(acc, 1.0 / static_cast<double>(b));
    }

    Var iad = tape.constant_scalar(0.0);
    if (cfg_.use_iad) {
        Var acc = tape.constant_scalar(0.0);
        int with_partners = 0;
        for (std::size_t i = 0; i < b; ++i) {
            const auto& item = batch.items[i];
            if (item.partner_text_indices.empty()) continue;
            ++with_partners;
            const auto& props = proposals_[item.sample_index];

            // one pipeline per partner text over the same image features
            std::vector<std::vector<AlignmentScores>> partner_aligns;
            for (std::size_t pt : item.partner_text_indices) {
                const auto& prep = prepared_[item.sample_index][pt];
                Var q0p = model_.txt_enc.encode(tape, bind, prep.text_ids);
                std::vector<Var> cues_p;
                for (const auto& ids : prep.cue_ids) cues_p.push_back(model_.txt_enc.encode(tape, bind, ids));
                auto stages_p = run_pipeline_embedded(tape, bind, model_.crm_cfg, v0[i], q0p, cues_p,
                                                      negatives_for(i), hw_h, hw_w);
                std::vector<AlignmentScores> als;
                for (int n = 0; n < n_stages; ++n) {
                    Var up = tape.upsample_bilinear(stages_p[static_cast<std::size_t>(n)].resp_norm, img, img);
                    als.push_back(alignment_scores(tape, up, props));
                }
                partner_aligns.push_back(std::move(als));
            }

            Var item_acc = tape.constant_scalar(0.0);
            for (int n = 0; n < n_stages; ++n) {
                IndexVector ya = index_vector(tape, aligns[i][static_cast<std::size_t>(n)]);
                std::vector<IndexVector> yds;
                for (const auto& als : partner_aligns) yds.push_back(index_vector(tape, als[static_cast<std::size_t>(n)]));
                item_acc = tape.add(item_acc, iad_loss(tape, ya, yds));
            }
            acc = tape.add(acc, tape.scale(item_acc, 1.0 / static_cast<double>(n_stages)));
        }
        if (with_partners > 0) iad = tape.scale(acc, 1.0 / static_cast<double>(with_partners));
    }

    Var total;
    try {
        total = total_loss(tape, cls, ras, iad);
    } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(step_) + ": " + e.what());
    }

    tape.backward(total);
    std::unordered_map<std::string, Tensor> grads;
    bind.collect_grads(grads);
    apply_adamw(grads, lr);

    StepLog log;
    log.step = step_;
    log.cls = tape.val(cls)[0];
    log.ras = tape.val(ras)[0];
    log.iad = tape.val(iad)[0];
    log.total = tape.val(total)[0];
    log.lr = lr;
    return log;
}

void Trainer::apply_adamw(const std::unordered_map<std::string, Tensor>& grads, double lr) {
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(kBeta1, t);
    const double bc2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t idx = 0; idx < model_.params.count(); ++idx) {
        const std::string& name = model_.params.name_at(idx);
        if (cfg_.freeze_encoders && name.rfind("enc.", 0) == 0) continue;
        auto it = grads.find(name);
        if (it == grads.end()) continue;
        const Tensor& g = it->second;
        Tensor& p = model_.params.tensor_at(idx);
        Tensor& m = adam_[idx].m;
        Tensor& v = adam_[idx].v;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + kEps) + cfg_.weight_decay * p[i]);
        }
    }
}

std::vector<StepLog> Trainer::train(const std::function<void(const StepLog&)>& on_log,
                                    std::int64_t stop_after_steps) {
    std::vector<StepLog> logs;
    const std::int64_t steps_per_epoch =
        static_cast<std::int64_t>(train_set_.size() / static_cast<std::size_t>(cfg_.batch_size));
    const std::int64_t stop_at =
        stop_after_steps > 0 ? std::min(stop_after_steps, total_steps_) : total_steps_;
    while (step_ < stop_at) {
        const std::size_t epoch = static_cast<std::size_t>(step_ / steps_per_epoch);
        const std::int64_t skip = step_ % steps_per_epoch;
        auto batches = make_batches(train_set_, static_cast<std::size_t>(cfg_.batch_size),
                                    static_cast<std::size_t>(cfg_.n_d), cfg_.seed, epoch);
        for (std::int64_t bi = skip; bi < static_cast<std::int64_t>(batches.size()) && step_ < stop_at; ++bi) {
            const double lr = polynomial_lr(cfg_.lr, step_, total_steps_, cfg_.lr_poly_power);
            StepLog log = run_step(batches[static_cast<std::size_t>(bi)], lr);
            ++step_;
            epoch_ = static_cast<std::int64_t>(epoch);
            if (on_log) on_log(log);
            logs.push_back(log);
            if (cfg_.target_pointm > 0.0 && step_ % cfg_.eval_every == 0) {
                const MetricsReport r = evaluate_train();
                if (r.pointm >= cfg_.target_pointm) return logs;
            }
        }
    }
    return logs;
}

MetricsReport Trainer::evaluate(const std::vector<GroundingSample>& split, const std::string& split_name) const {
    return evaluate_model(model_, split, split_name);
}

MetricsReport Trainer::evaluate_train(const std::string& split_name) const {
    return evaluate_model(model_, train_set_, split_name);
}

MetricsReport evaluate_model(const PcnModel& model, const std::vector<GroundingSample>& split,
                             const std::string& split_name) {
    if (split.empty()) throw InvalidInputError("evaluate: empty split");
    const int n_stages = model.cfg.n_stages;
    const std::int64_t img = model.enc_cfg.image_size;

    MetricsReport rep;
    rep.split = split_name;
    std::vector<Mask> preds, gts;
    std::vector<std::vector<int>> stage_hits(static_cast<std::size_t>(n_stages));
    std::vector<std::vector<Mask>> stage_preds(static_cast<std::size_t>(n_stages));
    std::vector<double> stage_amb_sums(static_cast<std::size_t>(n_stages), 0.0);
    double oracle_sum = 0.0;
    std::int64_t n_texts = 0;
    std::int64_t sep_pairs = 0, sep_distinct = 0;

    for (const auto& s : split) {
        const ProposalSet props = proposals_for_sample(model.cfg, s);
        std::vector<int> final_fg;
        for (std::size_t ti = 0; ti < s.texts.size(); ++ti) {
            const PreparedText prep = prepare_text(model.cfg, model.vocab, s.texts[ti]);
            Tape tape;
            TapeBinding bind(tape, model.params);
            Var v0 = model.img_enc.encode(tape, bind, s.image);
            Var q0 = model.txt_enc.encode(tape, bind, prep.text_ids);
            std::vector<Var> cues;
            for (const auto& ids : prep.cue_ids) cues.push_back(model.txt_enc.encode(tape, bind, ids));
            auto stages = run_pipeline_embedded(tape, bind, model.crm_cfg, v0, q0, cues, {}, model.enc_cfg.grid_size(),
                                                model.enc_cfg.grid_size());

            const Mask& gt = s.gt_masks[ti];
            EvalRecord rec;
            rec.sample_id = s.group_id + ":" + std::to_string(ti);

            for (int n = 0; n < n_stages; ++n) {
                const Tensor resp = tape.val(stages[static_cast<std::size_t>(n)].resp_norm);
                const Tensor up = upsample_bilinear_value(resp, img, img);
                const PeakPoint pk = peak_point(up, img, img);
                const bool hit = !pk.degenerate && gt.at(pk.row, pk.col) != 0;
                stage_hits[static_cast<std::size_t>(n)].push_back(hit ? 1 : 0);
                const MaskSelection sel = select_mask(up, props);
                stage_preds[static_cast<std::size_t>(n)].push_back(sel.mask);

                const std::vector<double> scores = alignment_score_values(up, props);
                const int fg = fg_index_of(scores, props.valid);
                Mask bg(props.h, props.w);
                for (std::int64_t pi = 0; pi < props.p(); ++pi) {
                    if (static_cast<int>(pi) == fg || !props.valid[static_cast<std::size_t>(pi)]) continue;
                    for (std::size_t j = 0; j < bg.data.size(); ++j)
                        bg.data[j] = (bg.data[j] || props.masks[static_cast<std::size_t>(pi)].data[j]) ? 1 : 0;
                }
                stage_amb_sums[static_cast<std::size_t>(n)] +=
                    ambiguity_value(up, props.masks[static_cast<std::size_t>(fg)], bg);

                if (n == n_stages - 1) {
                    rec.peak = pk;
                    rec.point_hit = hit;
                    rec.has_pred = true;
                    rec.pred_mask = sel.mask;
                    rec.iou = binary_iou(sel.mask, gt);
                    preds.push_back(sel.mask);
                    gts.push_back(gt);
                    final_fg.push_back(fg);
                }
            }
            oracle_sum += oracle_eval(props, gt);
            ++n_texts;
            rep.per_sample.push_back(std::move(rec));
        }
        for (std::size_t a = 0; a < final_fg.size(); ++a)
            for (std::size_t d = a + 1; d < final_fg.size(); ++d) {
                ++sep_pairs;
                if (final_fg[a] != final_fg[d]) ++sep_distinct;
            }
    }

    rep.n = n_texts;
    rep.pointm = pointm(rep.per_sample);
    const IouPair pair = miou_oiou(preds, gts);
    rep.miou = pair.miou;
    rep.oiou = pair.oiou;
    rep.oracle_miou = oracle_sum / static_cast<double>(n_texts);
    for (int n = 0; n < n_stages; ++n) {
        const auto& hits = stage_hits[static_cast<std::size_t>(n)];
        double h = 0.0;
        for (int v : hits) h += v;
        rep.pointm_per_stage.push_back(h / static_cast<double>(hits.size()));
        rep.miou_per_stage.push_back(miou_oiou(stage_preds[static_cast<std::size_t>(n)], gts).miou);
        rep.mean_ambiguity_per_stage.push_back(stage_amb_sums[static_cast<std::size_t>(n)] /
                                               static_cast<double>(n_texts));
    }
    if (sep_pairs > 0) rep.argmax_separation = static_cast<double>(sep_distinct) / static_cast<double>(sep_pairs);
    return rep;
}

InferResult infer_once(const PcnModel& model, const Image& image, const std::string& text,
                       const ProposalSet* proposals) {
    const PreparedText prep = prepare_text(model.cfg, model.vocab, text);
    Tape tape;
    TapeBinding bind(tape, model.params);
    Var v0 = model.img_enc.encode(tape, bind, image);
    Var q0 = model.txt_enc.encode(tape, bind, prep.text_ids);
    std::vector<Var> cues;
    for (const auto& ids : prep.cue_ids) cues.push_back(model.txt_enc.encode(tape, bind, ids));
    auto stages = run_pipeline_embedded(tape, bind, model.crm_cfg, v0, q0, cues, {}, model.enc_cfg.grid_size(),
                                        model.enc_cfg.grid_size());
    InferResult out;
    for (int n = 0; n < model.cfg.n_stages; ++n)
        out.stage_maps.push_back(extract_response(tape, stages[static_cast<std::size_t>(n)], n));
    const Tensor& final_map = out.stage_maps.back().data;
    out.peak = peak_point(final_map, model.enc_cfg.image_size, model.enc_cfg.image_size);
    if (proposals) {
        const Tensor up = upsample_bilinear_value(final_map, proposals->h, proposals->w);
        out.selection = select_mask(up, *proposals);
    }
    return out;
}

namespace {

std::vector<std::uint64_t> string_to_words(const std::string& s) {
    std::vector<std::uint64_t> words((s.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < s.size(); ++i)
        words[i / 8] |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * (i % 8));
    return words;
}

std::string words_to_string(const std::vector<std::uint64_t>& words, std::size_t len) {
    std::string s(len, '\0');
    for (std::size_t i = 0; i < len; ++i) s[i] = static_cast<char>((words[i / 8] >> (8 * (i % 8))) & 0xff);
    return s;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    NamedArrays na;
    for (std::size_t i = 0; i < model_.params.count(); ++i)
        na.put("param/" + model_.params.name_at(i), model_.params.tensor_at(i));
    for (std::size_t i = 0; i < adam_.size(); ++i) {
        na.put("adam/m/" + model_.params.name_at(i), adam_[i].m);
        na.put("adam/v/" + model_.params.name_at(i), adam_[i].v);
    }
    na.put("state/step", Tensor({1}, {static_cast<double>(step_)}));
    const std::string rng_str = data_rng_.serialize();
    na.put("rng/data", pack_u64_words(string_to_words(rng_str)));
    na.put("rng/data_len", Tensor({1}, {static_cast<double>(rng_str.size())}));
    save_named_arrays(na, path);

    json meta{{"config", json::parse(run_config_to_json(cfg_))}, {"vocab", model_.vocab.tokens()}};
    std::ofstream os(path + ".meta.json");
    if (!os) throw IoError("cannot write checkpoint metadata: " + path + ".meta.json");
    os << meta.dump(2) << "\n";
}

void Trainer::load_checkpoint(const std::string& path) {
    const NamedArrays na = load_named_arrays(path);
    for (std::size_t i = 0; i < model_.params.count(); ++i) {
        const std::string& name = model_.params.name_at(i);
        const Tensor& t = na.get("param/" + name);
        Tensor& p = model_.params.tensor_at(i);
        if (!t.same_shape(p)) throw ConfigError("checkpoint shape mismatch for " + name);
        p = t;
        adam_[i].m = na.get("adam/m/" + name);
        adam_[i].v = na.get("adam/v/" + name);
    }
    step_ = static_cast<std::int64_t>(na.get("state/step")[0]);
    const auto len = static_cast<std::size_t>(na.get("rng/data_len")[0]);
    data_rng_.deserialize(words_to_string(unpack_u64_words(na.get("rng/data")), len));
}

PcnModel load_model(const std::string& checkpoint_path) {
    std::ifstream is(checkpoint_path + ".meta.json");
    if (!is) throw IoError("cannot open checkpoint metadata: " + checkpoint_path + ".meta.json");
    json meta = json::parse(is, nullptr, false);
    if (meta.is_discarded()) throw IoError("bad checkpoint metadata: " + checkpoint_path + ".meta.json");
    RunConfig cfg = run_config_from_json(meta["config"].dump());
    std::vector<std::string> tokens;
    for (const auto& t : meta["vocab"]) tokens.push_back(t.get<std::string>());
    PcnModel model(cfg, Vocab::from_tokens(tokens));

    const NamedArrays na = load_named_arrays(checkpoint_path);
    for (std::size_t i = 0; i < model.params.count(); ++i) {
        const std::string& name = model.params.name_at(i);
        const Tensor& t = na.get("param/" + name);
        Tensor& p = model.params.tensor_at(i);
        if (!t.same_shape(p)) throw ConfigError("checkpoint shape mismatch for " + name);
        p = t;
    }
    return model;
}

}  // namespace pcn
