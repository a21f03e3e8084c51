#include <doctest.h>

#include <cmath>
#include <cstring>

#include "abmt/encoder.hpp"
#include "test_util.hpp"

using namespace abmt;

TEST_SUITE_BEGIN("encoder");

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.d_in = 5;
  cfg.d_hidden = 8;
  cfg.d_feat = 6;
  cfg.trunk_blocks = 1;
  cfg.branch_a_blocks = 1;
  cfg.num_classes = 4;
  return cfg;
}

bool states_equal(const EncoderState& a, const EncoderState& b) {
  const auto pa = a.all_params(), pb = b.all_params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].shape() != pb[i].shape()) return false;
    if (std::memcmp(pa[i].data().data(), pb[i].data().data(),
                    pa[i].numel() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("build_encoder is deterministic and respects the depth asymmetry") {
  const EncoderConfig cfg = tiny_config();
  const EncoderState a = build_encoder(cfg, 42);
  const EncoderState b = build_encoder(cfg, 42);
  CHECK(states_equal(a, b));
  const EncoderState c = build_encoder(cfg, 43);
  CHECK_FALSE(states_equal(a, c));

  // default: branch M one block deeper than branch A
  CHECK(a.branch_a.blocks.size() == 1);
  CHECK(a.branch_m.blocks.size() == 2);
  CHECK(cfg.resolved_branch_m_blocks() == cfg.branch_a_blocks + 1);
}

TEST_CASE("parameter count matches the closed-form formula") {
  const EncoderConfig cfg = tiny_config();
  const EncoderState st = build_encoder(cfg, 7);
  const auto block = [](int w) { return 2 * (w * w + w); };
  const int h = cfg.d_hidden, f = cfg.d_feat;
  const std::size_t expect =
      static_cast<std::size_t>(h * cfg.d_in + h)            // stem
      + static_cast<std::size_t>(cfg.trunk_blocks * block(h))
      + 2 * static_cast<std::size_t>(f * h + f)             // branch entries
      + static_cast<std::size_t>(cfg.branch_a_blocks * block(f))
      + static_cast<std::size_t>(cfg.resolved_branch_m_blocks() * block(f))
      + 2 * static_cast<std::size_t>(cfg.num_classes * f);  // classifiers
  CHECK(st.parameter_count() == expect);
}

TEST_CASE("forward shapes and log-probability rows") {
  const EncoderConfig cfg = tiny_config();
  const EncoderState st = build_encoder(cfg, 1);
  Rng rng(2);
  const Tensor batch = testutil::random_tensor(rng, {3, 4, cfg.d_in});
  const EncoderOutput out = forward(st, batch, nullptr);
  CHECK(out.f_a.shape() == std::vector<int>{3, cfg.d_feat});
  CHECK(out.f_m.shape() == std::vector<int>{3, cfg.d_feat});
  CHECK(out.p_a.shape() == std::vector<int>{3, cfg.num_classes});
  CHECK(out.p_m.shape() == std::vector<int>{3, cfg.num_classes});
  for (int i = 0; i < 3; ++i) {
    double s = 0.0;
    for (int j = 0; j < cfg.num_classes; ++j)
      s += std::exp(out.p_a.at(static_cast<std::size_t>(i) * cfg.num_classes + j));
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(forward(st, testutil::random_tensor(rng, {3, 4, cfg.d_in + 1}), nullptr),
                  DimensionError);
}

TEST_CASE("identical parts make mean and max pooling agree inside a branch") {
  // same depth and same weights for both branches, but A mean-pools and M
  // max-pools; constant parts must make the pooled features identical
  EncoderConfig cfg = tiny_config();
  cfg.branch_m_blocks = cfg.branch_a_blocks;
  EncoderState st = build_encoder(cfg, 11);
  st.branch_m = {st.branch_a.entry_w.clone(), st.branch_a.entry_b.clone(), {}};
  for (const auto& b : st.branch_a.blocks)
    st.branch_m.blocks.push_back({b.w1.clone(), b.b1.clone(), b.w2.clone(), b.b2.clone()});

  Rng rng(3);
  const Tensor row = testutil::random_tensor(rng, {1, 1, cfg.d_in});
  std::vector<double> data;
  for (int p = 0; p < 4; ++p) data.insert(data.end(), row.data().begin(), row.data().end());
  const Tensor batch = Tensor::from_data({1, 4, cfg.d_in}, data);
  const EncoderOutput out = forward(st, batch, nullptr);
  CHECK(testutil::max_abs_diff(out.f_a.data(), out.f_m.data()) == 0.0);
}

TEST_CASE("signature: width, unit halves, determinism") {
  const EncoderConfig cfg = tiny_config();
  const EncoderState st = build_encoder(cfg, 5);
  Rng rng(6);
  const Tensor batch = testutil::random_tensor(rng, {4, 3, cfg.d_in});
  const EncoderOutput out = forward(st, batch, nullptr);
  const Tensor sig = signature(st, out);
  CHECK(sig.shape() == std::vector<int>{4, 2 * cfg.d_feat});
  for (int i = 0; i < 4; ++i) {
    double na = 0.0, nm = 0.0;
    for (int j = 0; j < cfg.d_feat; ++j) {
      na += sig.at(static_cast<std::size_t>(i) * 2 * cfg.d_feat + j) *
            sig.at(static_cast<std::size_t>(i) * 2 * cfg.d_feat + j);
      nm += sig.at(static_cast<std::size_t>(i) * 2 * cfg.d_feat + cfg.d_feat + j) *
            sig.at(static_cast<std::size_t>(i) * 2 * cfg.d_feat + cfg.d_feat + j);
    }
    CHECK(std::abs(std::sqrt(na) - 1.0) < 1e-12);
    CHECK(std::abs(std::sqrt(nm) - 1.0) < 1e-12);
  }
  const EncoderOutput out2 = forward(st, batch, nullptr);
  const Tensor sig2 = signature(st, out2);
  CHECK(std::memcmp(sig.data().data(), sig2.data().data(), sig.numel() * sizeof(double)) == 0);
}

TEST_CASE("dynamic classifiers: shapes, argmax at a cluster mean, reshaping") {
  const EncoderConfig cfg = tiny_config();
  EncoderState st = build_encoder(cfg, 9);
  Rng rng(10);
  const Tensor batch = testutil::random_tensor(rng, {2, 3, cfg.d_in});
  const EncoderOutput out = forward(st, batch, nullptr);

  // means: first row = normalized f_a of sample 0, rest orthogonal to it
  const int f = cfg.d_feat;
  const auto ortho = testutil::random_orthogonal(rng, f);
  std::vector<double> fa0(out.f_a.data().begin(), out.f_a.data().begin() + f);
  double norm = 0.0;
  for (double v : fa0) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<double> means(static_cast<std::size_t>(3) * f);
  for (int j = 0; j < f; ++j) means[static_cast<std::size_t>(j)] = fa0[static_cast<std::size_t>(j)] / norm;
  for (int k = 1; k < 3; ++k) {
    std::vector<double> v(ortho.begin() + static_cast<std::ptrdiff_t>(k) * f,
                          ortho.begin() + static_cast<std::ptrdiff_t>(k + 1) * f);
    for (int prev = 0; prev < k; ++prev) {
      double dot = 0.0;
      for (int j = 0; j < f; ++j)
        dot += v[static_cast<std::size_t>(j)] * means[static_cast<std::size_t>(prev) * f + j];
      for (int j = 0; j < f; ++j)
        v[static_cast<std::size_t>(j)] -= dot * means[static_cast<std::size_t>(prev) * f + j];
    }
    double nv = 0.0;
    for (double x : v) nv += x * x;
    nv = std::sqrt(nv);
    for (int j = 0; j < f; ++j)
      means[static_cast<std::size_t>(k) * f + j] = v[static_cast<std::size_t>(j)] / nv;
  }
  const Tensor means_t = Tensor::from_data({3, f}, means);
  init_dynamic_classifiers(st, means_t, means_t);
  CHECK(st.classifier_a.dim(0) == 3);
  CHECK(st.config.num_classes == 3);

  const EncoderOutput out2 = forward(st, batch, nullptr);
  int argmax = 0;
  for (int j = 1; j < 3; ++j)
    if (out2.p_a.at(static_cast<std::size_t>(j)) > out2.p_a.at(static_cast<std::size_t>(argmax)))
      argmax = j;
  CHECK(argmax == 0);

  // re-clustering with a different K replaces both classifier shapes
  Tensor means5 = Tensor::zeros({5, f});
  {
    auto d = means5.data_mut();
    Rng rng2(55);
    const auto o5 = testutil::random_orthogonal(rng2, f);
    for (int k = 0; k < 5; ++k)
      for (int j = 0; j < f; ++j)
        d[static_cast<std::size_t>(k) * f + j] = o5[static_cast<std::size_t>(k) * f + j];
  }
  init_dynamic_classifiers(st, means5, means5);
  CHECK(st.classifier_a.dim(0) == 5);
  CHECK(st.classifier_m.dim(0) == 5);
  CHECK(st.config.num_classes == 5);

  CHECK_THROWS_AS(
      init_dynamic_classifiers(st, Tensor::from_data({1, f}, std::vector<double>(f, 0.0)),
                               Tensor::from_data({1, f}, std::vector<double>(f, 0.0))),
      DegenerateClusteringError);
}

TEST_CASE("branch independence: zeroing branch M leaves branch A outputs unchanged") {
  const EncoderConfig cfg = tiny_config();
  const EncoderState st = build_encoder(cfg, 13);
  Rng rng(14);
  const Tensor batch = testutil::random_tensor(rng, {3, 4, cfg.d_in});
  const EncoderOutput before = forward(st, batch, nullptr);

  EncoderState zeroed = st.clone();
  for (Tensor t : {zeroed.branch_m.entry_w, zeroed.branch_m.entry_b})
    std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
  for (auto& b : zeroed.branch_m.blocks)
    for (Tensor t : {b.w1, b.b1, b.w2, b.b2})
      std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
  std::fill(zeroed.classifier_m.data_mut().begin(), zeroed.classifier_m.data_mut().end(), 0.0);

  const EncoderOutput after = forward(zeroed, batch, nullptr);
  CHECK(testutil::max_abs_diff(before.f_a.data(), after.f_a.data()) == 0.0);
  CHECK(testutil::max_abs_diff(before.p_a.data(), after.p_a.data()) == 0.0);
  CHECK(testutil::max_abs_diff(before.f_m.data(), after.f_m.data()) > 0.0);
}

TEST_CASE("part permutation leaves pooled branch features unchanged") {
  const EncoderConfig cfg = tiny_config();
  const EncoderState st = build_encoder(cfg, 17);
  Rng rng(18);
  const int p = 4;
  const Tensor batch = testutil::random_tensor(rng, {2, p, cfg.d_in});
  const EncoderOutput base = forward(st, batch, nullptr);

  Tensor permuted = Tensor::zeros({2, p, cfg.d_in});
  for (int i = 0; i < 2; ++i)
    for (int q = 0; q < p; ++q)
      for (int j = 0; j < cfg.d_in; ++j)
        permuted.data_mut()[(static_cast<std::size_t>(i) * p + q) * cfg.d_in + j] =
            batch.at((static_cast<std::size_t>(i) * p + (p - 1 - q)) * cfg.d_in + j);
  const EncoderOutput perm = forward(st, permuted, nullptr);
  CHECK(testutil::max_abs_diff(base.f_a.data(), perm.f_a.data()) < 1e-12);
  CHECK(testutil::max_abs_diff(base.f_m.data(), perm.f_m.data()) < 1e-12);
}

TEST_CASE("symmetric mode: same depth, cloned weights, single-branch signature") {
  EncoderConfig cfg = tiny_config();
  cfg.asymmetric = false;
  const EncoderState st = build_encoder(cfg, 19);
  CHECK(st.branch_a.blocks.size() == st.branch_m.blocks.size());
  CHECK(testutil::max_abs_diff(st.branch_a.entry_w.data(), st.branch_m.entry_w.data()) == 0.0);
  CHECK(testutil::max_abs_diff(st.classifier_a.data(), st.classifier_m.data()) == 0.0);

  Rng rng(20);
  const Tensor batch = testutil::random_tensor(rng, {3, 4, cfg.d_in});
  const EncoderOutput out = forward(st, batch, nullptr);
  // identical branches on identical inputs: same features
  CHECK(testutil::max_abs_diff(out.f_a.data(), out.f_m.data()) == 0.0);
  // signature width halves relative to the asymmetric encoder
  CHECK(signature(st, out).shape() == std::vector<int>{3, cfg.d_feat});
}

TEST_SUITE_END();
