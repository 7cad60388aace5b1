#pragma once

#include <functional>
#include <vector>

#include "pcn/autodiff.hpp"
#include "pcn/proposals.hpp"

namespace pcn {

// Per-proposal alignment scores of one response map plus the derived
// foreground/background split. Padding proposals score exactly 0 and are
// excluded from the argmax.
struct AlignmentScores {
    std::vector<Var> scores;     // length P, scalars
    std::vector<double> values;  // forward values of the above
    std::vector<bool> valid;
    int fg_index = -1;
    Mask fg_mask;
    Mask bg_mask;  // elementwise union of the other valid masks
};

// response: (H,W) map at proposal resolution, entries in [0,1].
// frozen_fg pins the foreground selection (used by finite-difference
// harnesses to hold the argmax piecewise-constant).
AlignmentScores alignment_scores(Tape& tape, Var response, const ProposalSet& props, const int* frozen_fg = nullptr);

std::vector<double> alignment_score_values(const Tensor& response, const ProposalSet& props);
int fg_index_of(const std::vector<double>& scores, const std::vector<bool>& valid);

// S_amb = clamp(1 - (softIoU(R,m_f) - softIoU(R,m_b)), 0, 1).
Var ambiguity(Tape& tape, Var response, const Mask& fg, const Mask& bg);
double ambiguity_value(const Tensor& response, const Mask& fg, const Mask& bg);

// Hinge on consecutive-stage ambiguity increases, averaged over the N-1
// transitions. Returns 0 (with a warning) for a single stage.
Var ras_loss(Tape& tape, const std::vector<Var>& ambiguities,
             const std::function<void(const std::string&)>& warn = {});

struct IndexVector {
    Var y;           // (P,) one-hot forward value, straight-through gradient to S
    int argmax = -1;
};
// frozen_argmax pins the one-hot; frozen_sg pins the stop-gradient term to
// externally recorded base scores so a finite-difference harness can probe
// the straight-through surrogate (whose plain forward value is piecewise
// constant) along the S-path.
IndexVector index_vector(Tape& tape, const AlignmentScores& scores, const int* frozen_argmax = nullptr,
                         const std::vector<double>* frozen_sg = nullptr);

// (1/N_d) sum_d (1 - ||y_a - y_d||^2); each pair term is 1 for matching
// argmax and -1 otherwise.
Var iad_loss(Tape& tape, const IndexVector& y_a, const std::vector<IndexVector>& y_ds);

// Batch classification loss over the pooled score matrix y (B x B scalars,
// y[i][j] = image i against text j).
Var cls_loss(Tape& tape, const std::vector<std::vector<Var>>& score_matrix);

// Unweighted sum; throws NumericError naming the non-finite component.
Var total_loss(Tape& tape, Var cls, Var ras, Var iad);

}  // namespace pcn
