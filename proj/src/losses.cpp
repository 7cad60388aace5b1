#include "pcn/losses.hpp"

#include <cmath>

namespace pcn {

namespace {

Mask union_of_others(const ProposalSet& props, int skip) {
    Mask bg(props.h, props.w);
    for (std::int64_t i = 0; i < props.p(); ++i) {
        if (static_cast<int>(i) == skip || !props.valid[static_cast<std::size_t>(i)]) continue;
        const Mask& m = props.masks[static_cast<std::size_t>(i)];
        for (std::size_t j = 0; j < bg.data.size(); ++j) bg.data[j] = (bg.data[j] || m.data[j]) ? 1 : 0;
    }
    return bg;
}

}  // namespace

std::vector<double> alignment_score_values(const Tensor& response, const ProposalSet& props) {
    if (response.rank() != 2 || response.rows() != props.h || response.cols() != props.w)
        throw InvalidInputError("alignment_scores: response/proposal resolution mismatch");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(props.p()));
    for (std::int64_t i = 0; i < props.p(); ++i) {
        if (!props.valid[static_cast<std::size_t>(i)]) {
            out.push_back(0.0);
            continue;
        }
        const Mask& m = props.masks[static_cast<std::size_t>(i)];
        double best = 0.0;  // masked product is 0 outside the support
        for (std::int64_t j = 0; j < response.numel(); ++j) {
            const double v = response[j] * (m.data[static_cast<std::size_t>(j)] ? 1.0 : 0.0);
            if (v > best) best = v;
        }
        out.push_back(best);
    }
    return out;
}

int fg_index_of(const std::vector<double>& scores, const std::vector<bool>& valid) {
    int best = -1;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!valid[i]) continue;
        if (best < 0 || scores[i] > scores[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    }
    return best;
}

AlignmentScores alignment_scores(Tape& tape, Var response, const ProposalSet& props, const int* frozen_fg) {
    const Tensor& r = tape.val(response);
    if (r.rank() != 2 || r.rows() != props.h || r.cols() != props.w)
        throw InvalidInputError("alignment_scores: response/proposal resolution mismatch");
    if (props.valid_count() == 0) throw DegenerateInputError("alignment_scores: no valid proposals");

    AlignmentScores out;
    out.valid.assign(props.valid.begin(), props.valid.end());
    for (std::int64_t i = 0; i < props.p(); ++i) {
        if (!props.valid[static_cast<std::size_t>(i)]) {
            out.scores.push_back(tape.constant_scalar(0.0));
            out.values.push_back(0.0);
            continue;
        }
        const Mask& m = props.masks[static_cast<std::size_t>(i)];
        Var masked = tape.mul_const(response, m.to_tensor());
        Var s = tape.max_all(masked);
        out.scores.push_back(s);
        out.values.push_back(tape.val(s)[0]);
    }
    out.fg_index = frozen_fg ? *frozen_fg : fg_index_of(out.values, out.valid);
    if (out.fg_index < 0 || !out.valid[static_cast<std::size_t>(out.fg_index)])
        throw DegenerateInputError("alignment_scores: foreground index is not a valid proposal");
    out.fg_mask = props.masks[static_cast<std::size_t>(out.fg_index)];
    out.bg_mask = union_of_others(props, out.fg_index);
    return out;
}

Var ambiguity(Tape& tape, Var response, const Mask& fg, const Mask& bg) {
    Var iou_f = soft_iou(tape, response, fg);
    Var iou_b = soft_iou(tape, response, bg);
    Var margin = tape.sub(iou_f, iou_b);
    Var amb = tape.sub(tape.constant_scalar(1.0), margin);
    return tape.clamp(amb, 0.0, 1.0);
}

double ambiguity_value(const Tensor& response, const Mask& fg, const Mask& bg) {
    const double margin = soft_iou(response, fg) - soft_iou(response, bg);
    return std::clamp(1.0 - margin, 0.0, 1.0);
}

Var ras_loss(Tape& tape, const std::vector<Var>& ambiguities, const std::function<void(const std::string&)>& warn) {
    const std::size_t n = ambiguities.size();
    if (n < 2) {
        if (warn) warn("ras_loss: fewer than two stages, returning 0");
        return tape.constant_scalar(0.0);
    }
    Var acc = tape.constant_scalar(0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        Var diff = tape.sub(ambiguities[i + 1], ambiguities[i]);
        acc = tape.add(acc, tape.relu(diff));
    }
    return tape.scale(acc, 1.0 / static_cast<double>(n - 1));
}

IndexVector index_vector(Tape& tape, const AlignmentScores& scores, const int* frozen_argmax,
                         const std::vector<double>* frozen_sg) {
    if (scores.scores.empty()) throw InvalidInputError("index_vector: empty score vector");
    IndexVector out;
    out.argmax = frozen_argmax ? *frozen_argmax : fg_index_of(scores.values, scores.valid);
    if (out.argmax < 0) throw DegenerateInputError("index_vector: no valid score");
    Var s = tape.stack_scalars(scores.scores);
    Tensor onehot({static_cast<std::int64_t>(scores.scores.size())});
    onehot[out.argmax] = 1.0;
    Var sg;
    if (frozen_sg) {
        if (frozen_sg->size() != scores.scores.size()) throw InvalidInputError("index_vector: frozen_sg size mismatch");
        sg = tape.constant(Tensor({static_cast<std::int64_t>(frozen_sg->size())}, *frozen_sg));
    } else {
        sg = tape.stopgrad(s);
    }
    Var st = tape.sub(s, sg);  // value-zero straight-through carrier
    out.y = tape.add(st, tape.constant(std::move(onehot)));
    return out;
}

Var iad_loss(Tape& tape, const IndexVector& y_a, const std::vector<IndexVector>& y_ds) {
    if (y_ds.empty()) throw InvalidInputError("iad_loss: need at least one distractor index vector");
    Var acc = tape.constant_scalar(0.0);
    for (const auto& yd : y_ds) {
        Var diff = tape.sub(y_a.y, yd.y);
        Var sq = tape.sum_all(tape.mul(diff, diff));
        acc = tape.add(acc, tape.sub(tape.constant_scalar(1.0), sq));
    }
    return tape.scale(acc, 1.0 / static_cast<double>(y_ds.size()));
}

Var cls_loss(Tape& tape, const std::vector<std::vector<Var>>& score_matrix) {
    const std::size_t b = score_matrix.size();
    if (b == 0) throw InvalidInputError("cls_loss: empty score matrix");
    for (const auto& row : score_matrix)
        if (row.size() != b) throw InvalidInputError("cls_loss: score matrix must be square");
    Var acc = tape.constant_scalar(0.0);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < b; ++j) {
            // -log sigmoid(y) = softplus(-y); -log(1-sigmoid(y)) = softplus(y)
            Var y = score_matrix[i][j];
            Var term = (i == j) ? tape.softplus(tape.scale(y, -1.0)) : tape.softplus(y);
            acc = tape.add(acc, term);
        }
    }
    return tape.scale(acc, 1.0 / static_cast<double>(b * b));
}

Var total_loss(Tape& tape, Var cls, Var ras, Var iad) {
    if (!std::isfinite(tape.val(cls)[0])) throw NumericError("total_loss: non-finite cls component");
    if (!std::isfinite(tape.val(ras)[0])) throw NumericError("total_loss: non-finite ras component");
    if (!std::isfinite(tape.val(iad)[0])) throw NumericError("total_loss: non-finite iad component");
    return tape.add(tape.add(cls, ras), iad);
}

}  // namespace pcn
