#pragma once

#include <cstdint>
#include <vector>

#include "abmt/tensor.hpp"

namespace abmt {

// Two-branch encoder over part-feature inputs. A shared trunk of residual
// blocks runs on every part vector; branch A (shallow, mean pooling) and
// branch M (one block deeper, max pooling) reduce the part axis to one
// feature vector each, and a bias-free classifier per branch maps features
// to class log-probabilities.
struct EncoderConfig {
  int d_in = 16;
  int d_hidden = 32;
  int d_feat = 16;
  int trunk_blocks = 2;
  int branch_a_blocks = 1;
  int branch_m_blocks = -1;  // -1: branch_a_blocks + 1 when asymmetric, else equal
  int num_classes = 0;       // 0 allowed: predictions skipped until classifiers exist
  bool asymmetric = true;    // false: both branches same depth, both mean-pool,
                             // branch M initialized as a copy of branch A, and
                             // signatures use branch A only
  double classifier_temperature = 1.0;

  int resolved_branch_m_blocks() const {
    if (branch_m_blocks >= 0) return branch_m_blocks;
    return asymmetric ? branch_a_blocks + 1 : branch_a_blocks;
  }
  void validate() const;
};

struct ResidualBlockParams {
  Tensor w1, b1, w2, b2;
};

struct BranchParams {
  Tensor entry_w, entry_b;  // projects trunk width to feature width
  std::vector<ResidualBlockParams> blocks;
};

struct EncoderState {
  EncoderConfig config;
  std::uint64_t rng_seed = 0;
  Tensor stem_w, stem_b;  // d_in -> d_hidden
  std::vector<ResidualBlockParams> trunk;
  BranchParams branch_a;
  BranchParams branch_m;
  Tensor classifier_a;  // num_classes x d_feat, bias-free
  Tensor classifier_m;

  // Stable parameter order: stem, trunk, branch A, branch M, classifiers.
  std::vector<Tensor> all_params() const;
  std::vector<Tensor> backbone_params() const;  // all but the classifiers
  std::vector<Tensor> classifier_params() const;
  std::size_t parameter_count() const;
  EncoderState clone() const;
};

struct EncoderOutput {
  Tensor f_a;  // N x d_feat, mean branch features
  Tensor f_m;  // N x d_feat, max branch features
  Tensor p_a;  // N x num_classes log-probabilities (undefined when no classifier)
  Tensor p_m;
};

// Deterministic scaled-uniform fan-in initialization.
EncoderState build_encoder(const EncoderConfig& config, std::uint64_t seed);

// batch: N x P x d_in. Pass g=nullptr for inference.
EncoderOutput forward(const EncoderState& state, const Tensor& batch, Graph* g);

// Appearance signature: per-branch L2-normalized features, concatenated when
// the encoder is asymmetric, branch A alone otherwise. Inference path only —
// no graph is recorded.
Tensor signature(const EncoderState& state, const EncoderOutput& out);

inline constexpr double kSignatureNormEps = 1e-12;

// Replaces both classifiers with the given per-cluster mean rows and sets
// num_classes to the cluster count. Rows must be L2-normalized.
void init_dynamic_classifiers(EncoderState& state, const Tensor& means_a, const Tensor& means_m);

}  // namespace abmt
