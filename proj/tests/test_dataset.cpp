#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "abmt/dataset.hpp"
#include "test_util.hpp"

using namespace abmt;

TEST_SUITE_BEGIN("dataset");

TEST_CASE("synth: noiseless, shiftless images repeat exactly per id and camera") {
  SynthConfig cfg;
  cfg.n_ids = 4;
  cfg.imgs_per_id = 8;
  cfg.n_cams = 2;
  cfg.P = 3;
  cfg.d_in = 5;
  cfg.domain_shift = 0.0;
  cfg.noise = 0.0;
  cfg.seed = 3;
  const auto [source, target] = synth_dataset(cfg);
  (void)target;

  // same id + same camera -> identical part matrices (images 0 and 2 share cam 0)
  CHECK(source.samples[0].camera == source.samples[2].camera);
  CHECK(source.samples[0].parts == source.samples[2].parts);
  // different camera differs only by the camera bias, so parts differ
  CHECK(source.samples[0].parts != source.samples[1].parts);
}

TEST_CASE("synth: source and target identity sets are disjoint, splits are sane") {
  SynthConfig cfg;
  cfg.n_ids = 5;
  cfg.imgs_per_id = 16;
  cfg.seed = 7;
  const auto [source, target] = synth_dataset(cfg);

  std::set<int> src_ids, tgt_ids;
  for (const Sample& s : source.samples) src_ids.insert(s.identity);
  for (const Sample& s : target.samples) tgt_ids.insert(s.identity);
  for (int id : src_ids) CHECK(tgt_ids.count(id) == 0);

  // 16 images per id: 8 train, 2 query, 6 gallery
  CHECK(target.indices(Split::train).size() == 5 * 8);
  CHECK(target.indices(Split::query).size() == 5 * 2);
  CHECK(target.indices(Split::gallery).size() == 5 * 6);
  CHECK(source.indices(Split::train).size() == source.samples.size());
}

TEST_CASE("synth: nearest-centroid classification on raw source vectors is near-perfect") {
  SynthConfig cfg;
  cfg.n_ids = 10;
  cfg.imgs_per_id = 12;
  cfg.noise = 0.05;  // far below the unit-scale identity spacing
  cfg.seed = 11;
  const auto [source, target] = synth_dataset(cfg);
  (void)target;

  const int dim = cfg.P * cfg.d_in;
  std::map<int, std::vector<double>> centroid;
  std::map<int, int> count;
  for (const Sample& s : source.samples) {
    auto& c = centroid[s.identity];
    c.resize(static_cast<std::size_t>(dim), 0.0);
    for (int j = 0; j < dim; ++j) c[static_cast<std::size_t>(j)] += s.parts[static_cast<std::size_t>(j)];
    count[s.identity] += 1;
  }
  for (auto& [id, c] : centroid)
    for (double& v : c) v /= count[id];

  int correct = 0;
  for (const Sample& s : source.samples) {
    int best_id = -1;
    double best = 1e300;
    for (const auto& [id, c] : centroid) {
      double acc = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double diff = s.parts[static_cast<std::size_t>(j)] - c[static_cast<std::size_t>(j)];
        acc += diff * diff;
      }
      if (acc < best) {
        best = acc;
        best_id = id;
      }
    }
    if (best_id == s.identity) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(source.samples.size()) >= 0.99);
}

TEST_CASE("dataset file round-trip preserves every value and tag") {
  SynthConfig cfg;
  cfg.n_ids = 4;
  cfg.imgs_per_id = 8;
  cfg.seed = 13;
  const auto [source, target] = synth_dataset(cfg);
  (void)source;

  const std::string path = "/tmp/abmt_test_dataset.ds";
  save_dataset(target, path);
  const Dataset loaded = load_dataset(path, Domain::target);
  REQUIRE(loaded.samples.size() == target.samples.size());
  CHECK(loaded.P == target.P);
  CHECK(loaded.d_in == target.d_in);
  CHECK(loaded.n_cams == target.n_cams);
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    CHECK(loaded.samples[i].identity == target.samples[i].identity);
    CHECK(loaded.samples[i].camera == target.samples[i].camera);
    CHECK(loaded.samples[i].split == target.samples[i].split);
    CHECK(loaded.samples[i].parts == target.samples[i].parts);  // exact doubles
  }
  std::remove(path.c_str());
}

TEST_CASE("sample_pk_batch: shape, label histogram, outlier exclusion, errors") {
  Rng rng(17);
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 5);
  labels[3] = -1;  // outliers
  labels[8] = -1;

  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<int> batch = sample_pk_batch(labels, 3, 4, rng);
    CHECK(batch.size() == 12);
    std::map<int, int> hist;
    for (int pos : batch) {
      CHECK(labels[static_cast<std::size_t>(pos)] >= 0);
      hist[labels[static_cast<std::size_t>(pos)]] += 1;
    }
    CHECK(hist.size() == 3);
    for (const auto& [label, n] : hist) CHECK(n == 4);
  }

  // labels with fewer members than k_inst are sampled with replacement
  std::vector<int> small = {0, 0, 1};
  const std::vector<int> batch = sample_pk_batch(small, 2, 4, rng);
  CHECK(batch.size() == 8);

  const std::vector<int> lonely = {0, 0, -1, -1};
  CHECK_THROWS_AS(sample_pk_batch(lonely, 2, 2, rng), BatchError);
}

TEST_CASE("part_erasing: identity, forced, and binomial rate") {
  Rng rng(19);
  Tensor batch = testutil::random_tensor(rng, {50, 4, 3});

  Tensor same = part_erasing(batch, 0.0, rng);
  CHECK(testutil::max_abs_diff(same.data(), batch.data()) == 0.0);

  Tensor forced = part_erasing(batch, 1.0, rng);
  for (int i = 0; i < 50; ++i) {
    int zeroed = 0;
    for (int p = 0; p < 4; ++p) {
      bool all_zero = true;
      for (int j = 0; j < 3; ++j)
        if (forced.at((static_cast<std::size_t>(i) * 4 + p) * 3 + j) != 0.0) all_zero = false;
      if (all_zero) ++zeroed;
    }
    CHECK(zeroed == 1);
  }

  // over many samples the zeroed-part fraction approaches prob / P within 3 sigma
  const int n = 10000, p = 4;
  const double prob = 0.35;
  Tensor big = Tensor::zeros({n, p, 2});
  for (double& v : big.data_mut()) v = 1.0;
  Tensor erased = part_erasing(big, prob, rng);
  int zeroed_parts = 0;
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < p; ++q)
      if (erased.at((static_cast<std::size_t>(i) * p + q) * 2) == 0.0) ++zeroed_parts;
  const double frac = static_cast<double>(zeroed_parts) / (n * p);
  const double expect = prob / p;
  // zeroed parts = Binomial(n, prob) triggered samples, one part each
  const double sigma = std::sqrt(prob * (1 - prob) / n) / p;
  CHECK(std::abs(frac - expect) <= 3.0 * sigma);

  CHECK_THROWS_AS(part_erasing(big, 1.5, rng), ParameterError);
}

TEST_SUITE_END();
