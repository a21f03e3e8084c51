#include "abmt/encoder.hpp"

#include <cmath>

#include "abmt/common.hpp"

namespace abmt {

namespace {

Tensor uniform_fan_in(Rng& rng, int rows, int cols, int fan_in) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros({rows, cols}, /*requires_grad=*/true);
  for (double& v : t.data_mut()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor zero_bias(int n) { return Tensor::zeros({n}, /*requires_grad=*/true); }

ResidualBlockParams init_block(Rng& rng, int width) {
  ResidualBlockParams b;
  b.w1 = uniform_fan_in(rng, width, width, width);
  b.b1 = zero_bias(width);
  b.w2 = uniform_fan_in(rng, width, width, width);
  b.b2 = zero_bias(width);
  return b;
}

BranchParams init_branch(Rng& rng, int d_hidden, int d_feat, int blocks) {
  BranchParams br;
  br.entry_w = uniform_fan_in(rng, d_feat, d_hidden, d_hidden);
  br.entry_b = zero_bias(d_feat);
  br.blocks.reserve(static_cast<std::size_t>(blocks));
  for (int i = 0; i < blocks; ++i) br.blocks.push_back(init_block(rng, d_feat));
  return br;
}

ResidualBlockParams clone_block(const ResidualBlockParams& b) {
  return {b.w1.clone(), b.b1.clone(), b.w2.clone(), b.b2.clone()};
}

BranchParams clone_branch(const BranchParams& br) {
  BranchParams out;
  out.entry_w = br.entry_w.clone();
  out.entry_b = br.entry_b.clone();
  out.blocks.reserve(br.blocks.size());
  for (const auto& b : br.blocks) out.blocks.push_back(clone_block(b));
  return out;
}

// linear -> relu -> linear, skip connection, relu after the add
Tensor apply_block(Graph* g, const Tensor& x, const ResidualBlockParams& b) {
  Tensor h = relu(g, linear(g, x, b.w1, b.b1));
  h = linear(g, h, b.w2, b.b2);
  return relu(g, add(g, x, h));
}

Tensor apply_branch(Graph* g, const Tensor& trunk_out, const BranchParams& br, PoolMode mode) {
  Tensor h = linear(g, trunk_out, br.entry_w, br.entry_b);
  for (const auto& b : br.blocks) h = apply_block(g, h, b);
  return pool(g, h, mode);
}

}  // namespace

void EncoderConfig::validate() const {
  if (d_in < 1 || d_hidden < 1 || d_feat < 1) throw ParameterError("encoder dims must be >= 1");
  if (trunk_blocks < 0 || branch_a_blocks < 0) throw ParameterError("block counts must be >= 0");
  if (num_classes < 0) throw ParameterError("num_classes must be >= 0");
  if (classifier_temperature <= 0.0) throw ParameterError("classifier_temperature must be positive");
}

std::vector<Tensor> EncoderState::all_params() const {
  std::vector<Tensor> out = backbone_params();
  for (const Tensor& t : classifier_params()) out.push_back(t);
  return out;
}

std::vector<Tensor> EncoderState::backbone_params() const {
  std::vector<Tensor> out{stem_w, stem_b};
  auto push_block = [&out](const ResidualBlockParams& b) {
    out.push_back(b.w1);
    out.push_back(b.b1);
    out.push_back(b.w2);
    out.push_back(b.b2);
  };
  for (const auto& b : trunk) push_block(b);
  out.push_back(branch_a.entry_w);
  out.push_back(branch_a.entry_b);
  for (const auto& b : branch_a.blocks) push_block(b);
  out.push_back(branch_m.entry_w);
  out.push_back(branch_m.entry_b);
  for (const auto& b : branch_m.blocks) push_block(b);
  return out;
}

std::vector<Tensor> EncoderState::classifier_params() const {
  return {classifier_a, classifier_m};
}

std::size_t EncoderState::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& t : all_params()) n += t.numel();
  return n;
}

EncoderState EncoderState::clone() const {
  EncoderState out;
  out.config = config;
  out.rng_seed = rng_seed;
  out.stem_w = stem_w.clone();
  out.stem_b = stem_b.clone();
  out.trunk.reserve(trunk.size());
  for (const auto& b : trunk) out.trunk.push_back(clone_block(b));
  out.branch_a = clone_branch(branch_a);
  out.branch_m = clone_branch(branch_m);
  out.classifier_a = classifier_a.clone();
  out.classifier_m = classifier_m.clone();
  return out;
}

EncoderState build_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderState st;
  st.config = config;
  st.rng_seed = seed;
  Rng rng(derive_seed(seed, 0x454e43ULL));  // encoder init stream

  st.stem_w = uniform_fan_in(rng, config.d_hidden, config.d_in, config.d_in);
  st.stem_b = zero_bias(config.d_hidden);
  st.trunk.reserve(static_cast<std::size_t>(config.trunk_blocks));
  for (int i = 0; i < config.trunk_blocks; ++i)
    st.trunk.push_back(init_block(rng, config.d_hidden));

  st.branch_a = init_branch(rng, config.d_hidden, config.d_feat, config.branch_a_blocks);
  if (config.asymmetric) {
    st.branch_m = init_branch(rng, config.d_hidden, config.d_feat, config.resolved_branch_m_blocks());
  } else {
    // Symmetric control: branch M starts as an exact copy of branch A.
    st.branch_m = clone_branch(st.branch_a);
  }

  st.classifier_a = uniform_fan_in(rng, config.num_classes, config.d_feat, config.d_feat);
  if (config.asymmetric)
    st.classifier_m = uniform_fan_in(rng, config.num_classes, config.d_feat, config.d_feat);
  else
    st.classifier_m = st.classifier_a.clone();
  return st;
}

EncoderOutput forward(const EncoderState& state, const Tensor& batch, Graph* g) {
  const EncoderConfig& cfg = state.config;
  if (!batch.defined() || batch.ndim() != 3) throw DimensionError("forward: batch must be N x P x d_in");
  if (batch.dim(2) != cfg.d_in) throw DimensionError("forward: input feature width mismatch");

  Tensor h = linear(g, batch, state.stem_w, state.stem_b);
  for (const auto& b : state.trunk) h = apply_block(g, h, b);

  EncoderOutput out;
  out.f_a = apply_branch(g, h, state.branch_a, PoolMode::mean);
  out.f_m = apply_branch(g, h, state.branch_m, cfg.asymmetric ? PoolMode::max : PoolMode::mean);

  if (state.classifier_a.defined() && state.classifier_a.dim(0) > 0) {
    const double inv_temp = 1.0 / cfg.classifier_temperature;
    out.p_a = log_softmax(g, scale(g, linear(g, out.f_a, state.classifier_a), inv_temp));
    out.p_m = log_softmax(g, scale(g, linear(g, out.f_m, state.classifier_m), inv_temp));
  }
  return out;
}

Tensor signature(const EncoderState& state, const EncoderOutput& out) {
  Tensor na = l2_normalize(nullptr, out.f_a, kSignatureNormEps);
  if (!state.config.asymmetric) return na;
  Tensor nm = l2_normalize(nullptr, out.f_m, kSignatureNormEps);
  return concat(nullptr, na, nm);
}

void init_dynamic_classifiers(EncoderState& state, const Tensor& means_a, const Tensor& means_m) {
  if (!means_a.defined() || !means_m.defined() || means_a.ndim() != 2 || means_m.ndim() != 2)
    throw ContractError("init_dynamic_classifiers: means must be 2-d");
  const int k = means_a.dim(0);
  if (k < 2) throw DegenerateClusteringError("init_dynamic_classifiers: need at least 2 clusters");
  if (means_m.dim(0) != k) throw DimensionError("init_dynamic_classifiers: cluster counts differ");
  if (means_a.dim(1) != state.config.d_feat || means_m.dim(1) != state.config.d_feat)
    throw DimensionError("init_dynamic_classifiers: feature width mismatch");
  for (const Tensor* m : {&means_a, &means_m}) {
    const double* v = m->data().data();
    for (int i = 0; i < k; ++i) {
      double acc = 0.0;
      for (int j = 0; j < m->dim(1); ++j) {
        const double x = v[static_cast<std::size_t>(i) * m->dim(1) + j];
        acc += x * x;
      }
      if (std::abs(std::sqrt(acc) - 1.0) > 1e-6)
        throw ContractError("init_dynamic_classifiers: means rows must be unit norm");
    }
  }
  state.classifier_a = means_a.clone();
  state.classifier_a.set_requires_grad(true);
  state.classifier_m = means_m.clone();
  state.classifier_m.set_requires_grad(true);
  state.config.num_classes = k;
}

}  // namespace abmt
