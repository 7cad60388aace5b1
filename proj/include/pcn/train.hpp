#pragma once

#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pcn/crm.hpp"
#include "pcn/data.hpp"
#include "pcn/losses.hpp"
#include "pcn/metrics.hpp"

namespace pcn {

struct RunConfig {
    int n_stages = 3;
    int k_cues = 5;
    int n_d = 1;
    std::int64_t p_proposals = 8;
    int batch_size = 8;
    int epochs = 15;
    double lr = 5e-5;
    double weight_decay = 1e-2;
    double lr_poly_power = 0.9;
    std::uint64_t seed = 0;
    std::string preset = "toy";  // "toy" or "full"

    // dimension overrides (0 = take from preset)
    std::int64_t image_size = 0;
    std::int64_t c = 0;
    std::int64_t c_v = 0;
    std::int64_t c_l = 0;
    std::int64_t stride = 0;

    std::size_t n_train_samples = 32;
    std::string dataset_dir;  // when set, load instead of generating

    bool use_ras = true;
    bool use_iad = true;
    bool freeze_encoders = false;
    bool share_stage_params = false;

    int n_distractors = 6;
    std::int64_t proposal_area_min = 40;
    double proposal_iou_dedupe = 0.8;

    int max_steps = 0;          // 0: epochs * steps_per_epoch
    double target_pointm = 0.0; // >0: stop once train PointM reaches it
    int eval_every = 100;       // cadence for the early-stop check

    void validate(const std::function<void(const std::string&)>& warn = {}) const;
    EncoderConfig encoder_config() const;
    CrmConfig crm_config() const;
    FilterParams filter_params() const;
};

RunConfig run_config_from_json(const std::string& json_text);  // unknown keys rejected
std::string run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

// lr(step) = lr0 * (1 - step/total)^power; reaches 0 at step == total.
double polynomial_lr(double lr0, std::int64_t step, std::int64_t total_steps, double power);

struct StepLog {
    std::int64_t step = 0;
    double cls = 0.0;
    double ras = 0.0;
    double iad = 0.0;
    double total = 0.0;
    double lr = 0.0;
};

std::string step_log_json(const StepLog& log);

// Encoders + CRM stages + vocabulary behind one parameter store.
struct PcnModel {
    RunConfig cfg;
    EncoderConfig enc_cfg;
    CrmConfig crm_cfg;
    Vocab vocab;
    ParamStore params;
    ImageEncoder img_enc;
    TextEncoder txt_enc;

    PcnModel() = default;
    PcnModel(const RunConfig& cfg, Vocab vocab);
};

struct InferResult {
    std::vector<ResponseMap> stage_maps;
    PeakPoint peak;
    std::optional<MaskSelection> selection;
};

InferResult infer_once(const PcnModel& model, const Image& image, const std::string& text,
                       const ProposalSet* proposals = nullptr);

// Cached per-text derived inputs for one dataset.
struct PreparedText {
    std::vector<std::int64_t> text_ids;
    std::vector<std::vector<std::int64_t>> cue_ids;  // k_cues entries
    std::vector<std::string> cue_phrases;
};

class Trainer {
  public:
    Trainer(const RunConfig& cfg, std::vector<GroundingSample> train_set);

    // Runs the loop; per-step logs are returned and streamed to on_log.
    // stop_after_steps pauses at an absolute step count without changing the
    // decay horizon (used for checkpoint/resume).
    std::vector<StepLog> train(const std::function<void(const StepLog&)>& on_log = {},
                               std::int64_t stop_after_steps = 0);

    MetricsReport evaluate(const std::vector<GroundingSample>& split, const std::string& split_name) const;
    MetricsReport evaluate_train(const std::string& split_name = "train") const;

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    const PcnModel& model() const { return model_; }
    PcnModel& model() { return model_; }
    std::int64_t step() const { return step_; }
    std::int64_t total_steps() const { return total_steps_; }

  private:
    struct AdamSlot {
        Tensor m;
        Tensor v;
    };

    RunConfig cfg_;
    std::vector<GroundingSample> train_set_;
    PcnModel model_;
    std::vector<std::vector<PreparedText>> prepared_;  // [sample][text]
    std::vector<ProposalSet> proposals_;               // per sample
    std::vector<AdamSlot> adam_;                       // parallel to param store order
    std::int64_t step_ = 0;
    std::int64_t epoch_ = 0;
    std::int64_t total_steps_ = 0;
    Rng data_rng_;

    StepLog run_step(const Batch& batch, double lr);
    void apply_adamw(const std::unordered_map<std::string, Tensor>& grads, double lr);
    friend struct TrainerTestHook;
};

MetricsReport evaluate_model(const PcnModel& model, const std::vector<GroundingSample>& split,
                             const std::string& split_name);

PcnModel load_model(const std::string& checkpoint_path);

// Derives the per-image proposal seed so train/eval agree.
ProposalSet proposals_for_sample(const RunConfig& cfg, const GroundingSample& s);

// Rule decomposition + standardization to cfg.k_cues.
PreparedText prepare_text(const RunConfig& cfg, const Vocab& vocab, const std::string& text);

std::string default_out_root();  // $PCN_ROOT or ./pcn_out

}  // namespace pcn
