#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "abmt/encoder.hpp"
#include "abmt/tensor.hpp"

namespace abmt {

struct LossWeights {
  double lambda_ce_s = 0.5;
  double lambda_tri_s = 0.5;
  double lambda_ce_t = 0.5;
  double lambda_sce_t = 0.5;
  double lambda_stri_t = 1.0;
  double triplet_margin = 0.3;
};

// Mean over the batch of -log_probs[i, labels[i]].
Tensor cross_entropy(Graph* g, const Tensor& log_probs, std::span<const int> labels);

// Batch-hard margin triplet: per anchor, the hardest positive is the farthest
// same-label sample, the hardest negative the closest different-label sample.
// Anchors without a positive or a negative are skipped; mean over the rest.
Tensor batch_hard_triplet(Graph* g, const Tensor& features, std::span<const int> labels, double margin);

// Mean over the batch of -sum_c exp(teacher_log_probs) * student_log_probs.
// Gradient never flows into the teacher argument.
Tensor soft_cross_entropy(Graph* g, const Tensor& teacher_log_probs, const Tensor& student_log_probs);

// Per-anchor softmax triplet distance T = exp(d_pos) / (exp(d_pos) + exp(d_neg))
// with the same hardest mining as batch_hard_triplet. Anchors without a
// positive or negative get T = 0.5 and valid = 0.
struct SoftTripletDistance {
  Tensor t;                        // shape {N}, values in (0, 1)
  std::vector<std::uint8_t> valid;
};
SoftTripletDistance softmax_triplet_T(Graph* g, const Tensor& features, std::span<const int> labels);

// Teacher T values supervise student T values. Default is the full binary
// cross-entropy form; literal_form keeps only the -T' log T term. Values are
// clamped to [1e-12, 1-1e-12] before the logs. Empty valid span = all valid.
Tensor soft_triplet(Graph* g, const Tensor& t_teacher, const Tensor& t_student,
                    std::span<const std::uint8_t> valid = {}, bool literal_form = false);

// Supervised objective: lambda_ce_s * (CE_a + CE_m) + lambda_tri_s * (Tri_a + Tri_m).
Tensor source_objective(Graph* g, const EncoderOutput& out, std::span<const int> labels,
                        const LossWeights& w);

struct TargetLossOptions {
  bool cross_branch = true;  // teacher branch A supervises student branch M and vice versa
  bool literal_soft_triplet = false;
};

// Adaptation objective on a pseudo-labeled batch. Teacher outputs must be
// plain values (computed without a graph); passing tracked teacher tensors is
// a contract error.
Tensor target_objective(Graph* g, const EncoderOutput& student, const EncoderOutput& teacher,
                        std::span<const int> labels, const LossWeights& w,
                        const TargetLossOptions& opt = {});

}  // namespace abmt
