#include "pcn/metrics.hpp"

#include <json.hpp>

#include "pcn/losses.hpp"

namespace pcn {

using nlohmann::json;

PeakPoint peak_point(const Tensor& response, std::int64_t image_h, std::int64_t image_w) {
    if (response.rank() != 2 || response.numel() == 0) throw InvalidInputError("peak_point: nonempty 2-d map required");
    PeakPoint p;
    // degeneracy is a property of the source map; interpolation of a constant
    // map only adds rounding noise
    if (response[argmax_flat(response)] - response[argmin_flat(response)] == 0.0) {
        p.degenerate = true;
        return p;  // (0,0)
    }
    const Tensor up = (response.rows() == image_h && response.cols() == image_w)
                          ? response
                          : upsample_bilinear_value(response, image_h, image_w);
    const std::int64_t idx = argmax_flat(up);
    p.row = idx / image_w;
    p.col = idx % image_w;
    return p;
}

double pointm(const std::vector<EvalRecord>& records) {
    if (records.empty()) throw InvalidInputError("pointm: no records");
    double hits = 0.0;
    for (const auto& r : records) hits += r.point_hit ? 1.0 : 0.0;
    return hits / static_cast<double>(records.size());
}

IouPair miou_oiou(const std::vector<Mask>& preds, const std::vector<Mask>& gts) {
    if (preds.size() != gts.size()) throw InvalidInputError("miou_oiou: length mismatch");
    if (preds.empty()) throw InvalidInputError("miou_oiou: empty inputs");
    double iou_sum = 0.0;
    std::int64_t inter_total = 0, union_total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Mask& a = preds[i];
        const Mask& b = gts[i];
        if (a.h != b.h || a.w != b.w) throw InvalidInputError("miou_oiou: resolution mismatch at pair " + std::to_string(i));
        std::int64_t inter = 0, uni = 0;
        for (std::size_t j = 0; j < a.data.size(); ++j) {
            const bool x = a.data[j] != 0, y = b.data[j] != 0;
            inter += (x && y) ? 1 : 0;
            uni += (x || y) ? 1 : 0;
        }
        iou_sum += uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
        inter_total += inter;
        union_total += uni;
    }
    IouPair out;
    out.miou = iou_sum / static_cast<double>(preds.size());
    out.oiou = union_total == 0 ? 0.0 : static_cast<double>(inter_total) / static_cast<double>(union_total);
    return out;
}

MaskSelection select_mask(const Tensor& response, const ProposalSet& props) {
    if (props.valid_count() == 0) throw DegenerateInputError("select_mask: no valid proposals");
    const std::vector<double> scores = alignment_score_values(response, props);
    const int idx = fg_index_of(scores, props.valid);
    MaskSelection sel;
    sel.index = idx;
    sel.mask = props.masks[static_cast<std::size_t>(idx)];
    sel.score = scores[static_cast<std::size_t>(idx)];
    return sel;
}

double oracle_eval(const ProposalSet& props, const Mask& gt) {
    double best = 0.0;
    for (std::int64_t i = 0; i < props.p(); ++i) {
        if (!props.valid[static_cast<std::size_t>(i)]) continue;
        best = std::max(best, binary_iou(props.masks[static_cast<std::size_t>(i)], gt));
    }
    return best;
}

std::string metrics_report_json(const MetricsReport& report) {
    json per_sample = json::array();
    for (const auto& r : report.per_sample) {
        json e{{"sample_id", r.sample_id},
               {"peak", {r.peak.row, r.peak.col}},
               {"degenerate", r.peak.degenerate},
               {"point_hit", r.point_hit},
               {"iou", r.iou}};
        per_sample.push_back(e);
    }
    json doc{{"split", report.split},
             {"n", report.n},
             {"pointm", report.pointm},
             {"miou", report.miou},
             {"oiou", report.oiou},
             {"oracle_miou", report.oracle_miou},
             {"per_sample", per_sample}};
    if (!report.pointm_per_stage.empty()) doc["pointm_per_stage"] = report.pointm_per_stage;
    if (!report.miou_per_stage.empty()) doc["miou_per_stage"] = report.miou_per_stage;
    if (!report.mean_ambiguity_per_stage.empty()) doc["mean_ambiguity_per_stage"] = report.mean_ambiguity_per_stage;
    if (report.argmax_separation >= 0.0) doc["argmax_separation"] = report.argmax_separation;
    return doc.dump(2);
}

}  // namespace pcn
