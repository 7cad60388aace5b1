#pragma once

#include <string>
#include <vector>

#include "pcn/image.hpp"
#include "pcn/proposals.hpp"

namespace pcn {

struct PeakPoint {
    std::int64_t row = 0;
    std::int64_t col = 0;
    bool degenerate = false;  // constant (e.g. all-zero) map
};

// Bilinearly upsamples the map to image resolution and returns the first
// row-major argmax. Constant maps return (0,0) flagged degenerate.
PeakPoint peak_point(const Tensor& response, std::int64_t image_h, std::int64_t image_w);

struct EvalRecord {
    std::string sample_id;
    PeakPoint peak;
    bool point_hit = false;
    bool has_pred = false;
    Mask pred_mask;
    double iou = 0.0;
};

double pointm(const std::vector<EvalRecord>& records);

struct IouPair {
    double miou = 0.0;
    double oiou = 0.0;
};
IouPair miou_oiou(const std::vector<Mask>& preds, const std::vector<Mask>& gts);

struct MaskSelection {
    int index = -1;
    Mask mask;
    double score = 0.0;
};
// Valid proposal with the largest alignment score; lowest index on ties.
MaskSelection select_mask(const Tensor& response, const ProposalSet& props);

// Best achievable proposal IoU against ground truth; 0 when nothing valid.
double oracle_eval(const ProposalSet& props, const Mask& gt);

struct MetricsReport {
    std::string split;
    std::int64_t n = 0;
    double pointm = 0.0;
    double miou = 0.0;
    double oiou = 0.0;
    double oracle_miou = 0.0;
    std::vector<double> pointm_per_stage;
    std::vector<double> miou_per_stage;
    std::vector<double> mean_ambiguity_per_stage;
    double argmax_separation = -1.0;  // -1 when no same-image text pairs exist
    std::vector<EvalRecord> per_sample;
};

std::string metrics_report_json(const MetricsReport& report);

}  // namespace pcn
