#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pcn/cue_gen.hpp"
#include "pcn/encoding.hpp"
#include "pcn/params.hpp"

namespace pcn {

// Conditional referring module: per-stage referring-embedding modulation and
// response-map generation, iterated for n_stages. Stage parameters are
// independent unless share_stage_params is set.
struct CrmConfig {
    std::int64_t c = 64;
    int n_stages = 3;
    bool share_stage_params = false;
};

struct ResponseMap {
    Tensor data;  // (h,w) in [0,1]
    int stage = 0;
};

struct StageOutput {
    Var q_next;     // (1,c)
    Var v_next;     // (h*w,c)
    Var v_unit;     // (h*w,c) row-normalized v_next, for cosine response logits
    Var q_scaled;   // (1,c) normalized q_next times the learnable logit scale
    Var resp_norm;  // (h,w) in [0,1]
    Var resp_pre;   // (h,w) pre-normalization ReLU map
    Var attn_vt;    // (L+1, h*w)
    Var attn_tt;    // (1, L+1)
    int cue_index = 0;
};

void register_crm_params(const CrmConfig& cfg, ParamStore& store, Rng& rng);
std::string crm_stage_prefix(const CrmConfig& cfg, int stage);

// Two linear layers with a tanh between, hidden width c.
Var crm_mlp(Tape& tape, TapeBinding& bind, const std::string& prefix, Var x);

// q_cond: (L+1,c) conditional cue rows (row 0 positive), visual: (h*w,c).
Var vision_to_text_attend(Tape& tape, TapeBinding& bind, const std::string& stage_prefix, Var q_cond, Var visual,
                          Var* attn_out = nullptr);

// q_global: (1,c), q_hat: (L+1,c) -> updated referring embedding (1,c).
Var text_to_text_modulate(Tape& tape, TapeBinding& bind, const std::string& stage_prefix, Var q_global, Var q_hat,
                          Var* attn_out = nullptr);

// Single-key text-to-visual cross-attention: a learned query-dependent
// additive injection with residual.
Var update_visual(Tape& tape, TapeBinding& bind, const std::string& stage_prefix, Var visual, Var q_next);

// Min-max normalization to [0,1]; all zeros when max-min < 1e-12.
Var minmax_norm01(Tape& tape, Var x);

struct ResponseMapVars {
    Var normalized;  // (h,w)
    Var pre_relu;    // (h,w)
};
ResponseMapVars response_map(Tape& tape, Var visual_hat, Var q_next, std::int64_t h, std::int64_t w);

StageOutput run_stage(Tape& tape, TapeBinding& bind, const CrmConfig& cfg, int stage, Var q_global, Var visual,
                      Var cue, const std::vector<Var>& negative_cues, std::int64_t h, std::int64_t w);

// Core pipeline over already-encoded inputs. negative_cues_per_stage may be
// empty (L=0) or hold one vector of (1,c) vars per stage.
std::vector<StageOutput> run_pipeline_embedded(Tape& tape, TapeBinding& bind, const CrmConfig& cfg, Var v0, Var q0,
                                               const std::vector<Var>& cue_embeds,
                                               const std::vector<std::vector<Var>>& negative_cues_per_stage,
                                               std::int64_t h, std::int64_t w,
                                               const std::function<void(const std::string&)>& warn = {});

// Full operation: encodes image, text and cues, then runs the stages.
std::vector<StageOutput> run_pipeline(Tape& tape, TapeBinding& bind, const CrmConfig& cfg, const ImageEncoder& img_enc,
                                      const TextEncoder& txt_enc, const Vocab& vocab, const EncoderConfig& enc_cfg,
                                      const Image& image, const std::string& text, const CueSet& cues,
                                      const std::vector<std::vector<Var>>& negative_cues_per_stage,
                                      const std::function<void(const std::string&)>& warn = {});

// Value-level response maps for export.
ResponseMap extract_response(const Tape& tape, const StageOutput& st, int stage);

}  // namespace pcn
