#include "pcn/crm.hpp"

#include <cmath>

namespace pcn {

namespace {

constexpr double kNormEps = 1e-12;

void register_mlp(ParamStore& store, Rng& rng, const std::string& prefix, std::int64_t c) {
    store.create_uniform(prefix + "mlp.w1", {c, c}, c, rng);
    store.create(prefix + "mlp.b1", {c});
    store.create_uniform(prefix + "mlp.w2", {c, c}, c, rng);
    store.create(prefix + "mlp.b2", {c});
}

void check_finite(Tape& tape, Var v, int stage, const char* what) {
    if (!tape.val(v).all_finite())
        throw NumericError(std::string("crm stage ") + std::to_string(stage) + ": non-finite " + what);
}

}  // namespace

std::string crm_stage_prefix(const CrmConfig& cfg, int stage) {
    return cfg.share_stage_params ? "crm.shared." : "crm.s" + std::to_string(stage) + ".";
}

void register_crm_params(const CrmConfig& cfg, ParamStore& store, Rng& rng) {
    // response logits are scaled cosines; the temperature is learned
    store.create("crm.logit_scale", {1}).data[0] = 10.0;
    const int n = cfg.share_stage_params ? 1 : cfg.n_stages;
    for (int s = 0; s < n; ++s) {
        const std::string p = cfg.share_stage_params ? "crm.shared." : "crm.s" + std::to_string(s) + ".";
        store.create_uniform(p + "v2t.w1", {cfg.c, cfg.c}, cfg.c, rng);
        store.create_uniform(p + "v2t.w2", {cfg.c, cfg.c}, cfg.c, rng);
        store.create_uniform(p + "v2t.w3", {cfg.c, cfg.c}, cfg.c, rng);
        register_mlp(store, rng, p + "v2t.", cfg.c);
        store.create_uniform(p + "t2t.w1", {cfg.c, cfg.c}, cfg.c, rng);
        store.create_uniform(p + "t2t.w2", {cfg.c, cfg.c}, cfg.c, rng);
        store.create_uniform(p + "t2t.w3", {cfg.c, cfg.c}, cfg.c, rng);
        register_mlp(store, rng, p + "t2t.", cfg.c);
        store.create_uniform(p + "upd.wv", {cfg.c, cfg.c}, cfg.c, rng);
        register_mlp(store, rng, p + "upd.", cfg.c);
    }
}

Var crm_mlp(Tape& tape, TapeBinding& bind, const std::string& prefix, Var x) {
    Var h = tape.add_row(tape.matmul(x, bind(prefix + "mlp.w1")), bind(prefix + "mlp.b1"));
    h = tape.tanh_(h);
    return tape.add_row(tape.matmul(h, bind(prefix + "mlp.w2")), bind(prefix + "mlp.b2"));
}

Var vision_to_text_attend(Tape& tape, TapeBinding& bind, const std::string& stage_prefix, Var q_cond, Var visual,
                          Var* attn_out) {
    const std::string p = stage_prefix + "v2t.";
    const std::int64_t c = tape.val(q_cond).cols();
    if (tape.val(visual).cols() != c) throw InvalidInputError("vision_to_text_attend: dim mismatch");
    Var q_proj = tape.matmul(q_cond, bind(p + "w1"));    // (L+1,c)
    Var v_keys = tape.matmul(visual, bind(p + "w2"));    // (hw,c)
    Var logits = tape.scale(tape.matmul_nt(q_proj, v_keys), 1.0 / std::sqrt(static_cast<double>(c)));
    Var attn = tape.softmax_rows(logits);                // (L+1,hw)
    if (attn_out) *attn_out = attn;
    Var v_vals = tape.matmul(visual, bind(p + "w3"));    // (hw,c)
    Var ctx = tape.matmul(attn, v_vals);                 // (L+1,c)
    return tape.add(crm_mlp(tape, bind, p, ctx), q_cond);
}

Var text_to_text_modulate(Tape& tape, TapeBinding& bind, const std::string& stage_prefix, Var q_global, Var q_hat,
                          Var* attn_out) {
    const std::string p = stage_prefix + "t2t.";
    const std::int64_t c = tape.val(q_global).cols();
    if (tape.val(q_hat).cols() != c) throw InvalidInputError("text_to_text_modulate: dim mismatch");
    Var q_proj = tape.matmul(q_global, bind(p + "w1"));  // (1,c)
    Var k_proj = tape.matmul(q_hat, bind(p + "w2"));     // (L+1,c)
    Var logits = tape.scale(tape.matmul_nt(q_proj, k_proj), 1.0 / std::sqrt(static_cast<double>(c)));
    Var attn = tape.softmax_rows(logits);                // (1,L+1)
    if (attn_out) *attn_out = attn;
    Var vals = tape.matmul(q_hat, bind(p + "w3"));       // (L+1,c)
    Var ctx = tape.matmul(attn, vals);                   // (1,c)
    return tape.add(crm_mlp(tape, bind, p, ctx), q_global);
}

Var update_visual(Tape& tape, TapeBinding& bind, const std::string& stage_prefix, Var visual, Var q_next) {
    const std::string p = stage_prefix + "upd.";
    // Per-position softmax over the single referring token is identically 1,
    // so the block reduces to one injected vector shared by all positions.
    Var inj = crm_mlp(tape, bind, p, tape.matmul(q_next, bind(p + "wv")));  // (1,c)
    Var inj_row = tape.reshape(inj, {tape.val(inj).cols()});
    return tape.add_row(visual, inj_row);
}

Var minmax_norm01(Tape& tape, Var x) {
    const Tensor& v = tape.val(x);
    const double mn = v[argmin_flat(v)];
    const double mx = v[argmax_flat(v)];
    if (mx - mn < kNormEps) return tape.constant(Tensor(v.shape, 0.0));
    Var mn_v = tape.min_all(x);
    Var mx_v = tape.max_all(x);
    Var num = tape.sub_bscalar(x, mn_v);
    Var den = tape.sub(mx_v, mn_v);
    return tape.div_bscalar(num, den);
}

ResponseMapVars response_map(Tape& tape, Var visual_hat, Var q_next, std::int64_t h, std::int64_t w) {
    Var logits = tape.matmul_nt(visual_hat, q_next);  // (hw,1)
    Var pre = tape.relu(tape.reshape(logits, {h, w}));
    return {minmax_norm01(tape, pre), pre};
}

StageOutput run_stage(Tape& tape, TapeBinding& bind, const CrmConfig& cfg, int stage, Var q_global, Var visual,
                      Var cue, const std::vector<Var>& negative_cues, std::int64_t h, std::int64_t w) {
    const std::string prefix = crm_stage_prefix(cfg, stage);
    std::vector<Var> rows;
    rows.reserve(negative_cues.size() + 1);
    rows.push_back(cue);
    for (Var n : negative_cues) rows.push_back(n);
    Var q_cond = tape.concat_rows(rows);

    StageOutput out;
    out.q_next = q_global;
    Var q_hat = vision_to_text_attend(tape, bind, prefix, q_cond, visual, &out.attn_vt);
    out.q_next = text_to_text_modulate(tape, bind, prefix, q_global, q_hat, &out.attn_tt);
    out.v_next = update_visual(tape, bind, prefix, visual, out.q_next);
    check_finite(tape, out.q_next, stage, "referring embedding");
    check_finite(tape, out.v_next, stage, "visual grid");
    ResponseMapVars rm = response_map(tape, out.v_next, out.q_next, h, w);
    out.resp_norm = rm.normalized;
    out.resp_pre = rm.pre_relu;
    check_finite(tape, out.resp_norm, stage, "response map");
    return out;
}

std::vector<StageOutput> run_pipeline_embedded(Tape& tape, TapeBinding& bind, const CrmConfig& cfg, Var v0, Var q0,
                                               const std::vector<Var>& cue_embeds,
                                               const std::vector<std::vector<Var>>& negative_cues_per_stage,
                                               std::int64_t h, std::int64_t w,
                                               const std::function<void(const std::string&)>& warn) {
    if (cfg.n_stages < 1) throw InvalidInputError("run_pipeline: n_stages must be >= 1");
    if (cue_embeds.empty()) throw InvalidInputError("run_pipeline: need at least one cue");
    if (cfg.n_stages > static_cast<int>(cue_embeds.size()) && warn)
        warn("n_stages exceeds distinct cues; reusing cues cyclically");

    std::vector<StageOutput> stages;
    Var q = q0;
    Var v = v0;
    for (int n = 0; n < cfg.n_stages; ++n) {
        const int cue_idx = n % static_cast<int>(cue_embeds.size());
        static const std::vector<Var> kNoNegatives;
        const std::vector<Var>& negs =
            negative_cues_per_stage.empty() ? kNoNegatives : negative_cues_per_stage.at(static_cast<std::size_t>(n));
        StageOutput st = run_stage(tape, bind, cfg, n, q, v, cue_embeds[static_cast<std::size_t>(cue_idx)], negs, h, w);
        st.cue_index = cue_idx;
        q = st.q_next;
        v = st.v_next;
        stages.push_back(st);
    }
    return stages;
}

std::vector<StageOutput> run_pipeline(Tape& tape, TapeBinding& bind, const CrmConfig& cfg, const ImageEncoder& img_enc,
                                      const TextEncoder& txt_enc, const Vocab& vocab, const EncoderConfig& enc_cfg,
                                      const Image& image, const std::string& text, const CueSet& cues,
                                      const std::vector<std::vector<Var>>& negative_cues_per_stage,
                                      const std::function<void(const std::string&)>& warn) {
    Var v0 = img_enc.encode(tape, bind, image);
    Var q0 = txt_enc.encode(tape, bind, vocab.encode(text));
    std::vector<Var> cue_embeds;
    for (const auto& phrase : cues.phrases) cue_embeds.push_back(txt_enc.encode(tape, bind, vocab.encode(phrase)));
    return run_pipeline_embedded(tape, bind, cfg, v0, q0, cue_embeds, negative_cues_per_stage, enc_cfg.grid_size(),
                                 enc_cfg.grid_size(), warn);
}

ResponseMap extract_response(const Tape& tape, const StageOutput& st, int stage) {
    ResponseMap rm;
    rm.data = tape.val(st.resp_norm);
    rm.stage = stage;
    return rm;
}

}  // namespace pcn
