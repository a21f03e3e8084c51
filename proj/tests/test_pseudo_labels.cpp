#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "abmt/pseudo_labels.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace abmt;

TEST_SUITE_BEGIN("pseudo_labels");

namespace {

DistanceMatrix from_flat(const std::vector<double>& values, int n) {
  DistanceMatrix m(n);
  m.values = values;
  return m;
}

// partitions equal up to relabeling; noise (-1) must match exactly
bool same_partition(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) return false;
  std::map<int, int> fwd, bwd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] < 0) != (b[i] < 0)) return false;
    if (a[i] < 0) continue;
    const auto f = fwd.find(a[i]);
    if (f == fwd.end())
      fwd[a[i]] = b[i];
    else if (f->second != b[i])
      return false;
    const auto g = bwd.find(b[i]);
    if (g == bwd.end())
      bwd[b[i]] = a[i];
    else if (g->second != a[i])
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pairwise_euclidean: identical rows, unit vectors, oracle") {
  Tensor same = Tensor::from_data({3, 2}, {1, 2, 1, 2, 1, 2});
  const DistanceMatrix zero = pairwise_euclidean(same);
  for (double v : zero.values) CHECK(v == 0.0);

  Tensor units = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  const DistanceMatrix u = pairwise_euclidean(units);
  CHECK(u.at(0, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  CHECK(u.at(0, 0) == 0.0);

  Rng rng(3);
  Tensor x = testutil::random_tensor(rng, {10, 4});
  const DistanceMatrix d = pairwise_euclidean(x);
  const auto ref = oracles::pairwise(x.data(), 10, 4);
  CHECK(testutil::max_abs_diff(d.values, ref) < 1e-12);
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) CHECK(d.at(i, j) == d.at(j, i));
}

TEST_CASE("k_reciprocal_rerank: blend degeneration, diagonal, oracle instance") {
  Rng rng(5);
  Tensor x = testutil::random_tensor(rng, {8, 3});
  const DistanceMatrix d = pairwise_euclidean(x);

  ClusterConfig cfg;
  cfg.k1 = 3;
  cfg.k2 = 2;

  ClusterConfig all_original = cfg;
  all_original.lambda_rerank = 1.0;
  const DistanceMatrix same = k_reciprocal_rerank(d, all_original);
  CHECK(testutil::max_abs_diff(same.values, d.values) < 1e-15);

  cfg.lambda_rerank = 0.3;
  const DistanceMatrix rr = k_reciprocal_rerank(d, cfg);
  for (int i = 0; i < 8; ++i) CHECK(rr.at(i, i) == 0.0);

  const auto ref = oracles::k_reciprocal_rerank(d.values, 8, 3, 2, 0.3);
  CHECK(testutil::max_abs_diff(rr.values, ref) < 1e-9);

  // symmetric output, entries within [0, max(d_orig, 1)]
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      CHECK(rr.at(i, j) == rr.at(j, i));
      CHECK(rr.at(i, j) >= 0.0);
      CHECK(rr.at(i, j) <= std::max(d.at(i, j), 1.0) + 1e-12);
    }
}

TEST_CASE("k_reciprocal_rerank: blend is linear in lambda") {
  Rng rng(7);
  Tensor x = testutil::random_tensor(rng, {12, 4});
  const DistanceMatrix d = pairwise_euclidean(x);
  ClusterConfig cfg;
  cfg.k1 = 4;
  cfg.k2 = 2;

  cfg.lambda_rerank = 0.0;
  const DistanceMatrix r0 = k_reciprocal_rerank(d, cfg);
  cfg.lambda_rerank = 1.0;
  const DistanceMatrix r1 = k_reciprocal_rerank(d, cfg);
  cfg.lambda_rerank = 0.4;
  const DistanceMatrix r04 = k_reciprocal_rerank(d, cfg);
  for (std::size_t i = 0; i < r04.values.size(); ++i)
    CHECK(std::abs(r04.values[i] - (0.6 * r0.values[i] + 0.4 * r1.values[i])) < 1e-12);
}

TEST_CASE("k_reciprocal_rerank: small sets clamp k1 or raise") {
  Rng rng(9);
  Tensor x = testutil::random_tensor(rng, {5, 3});
  const DistanceMatrix d = pairwise_euclidean(x);
  ClusterConfig cfg;
  cfg.k1 = 20;
  cfg.k2 = 6;
  CHECK_NOTHROW(k_reciprocal_rerank(d, cfg));  // clamp_k on by default
  cfg.clamp_k = false;
  CHECK_THROWS_AS(k_reciprocal_rerank(d, cfg), ParameterError);
}

TEST_CASE("dbscan: construction cases") {
  // two co-located groups of min_pts points far apart: two clusters, no noise
  const int min_pts = 4;
  std::vector<double> pts;
  for (int i = 0; i < min_pts; ++i) pts.insert(pts.end(), {0.0, 0.0});
  for (int i = 0; i < min_pts; ++i) pts.insert(pts.end(), {100.0, 100.0});
  const DistanceMatrix d = pairwise_euclidean(Tensor::from_data({2 * min_pts, 2}, pts));
  const std::vector<int> labels = dbscan(d, 0.5, min_pts);
  CHECK(labels[0] == 0);
  CHECK(labels[static_cast<std::size_t>(min_pts)] == 1);
  for (int i = 0; i < min_pts; ++i) {
    CHECK(labels[static_cast<std::size_t>(i)] == 0);
    CHECK(labels[static_cast<std::size_t>(min_pts + i)] == 1);
  }

  // a single isolated point is noise
  std::vector<double> pts2 = pts;
  pts2.insert(pts2.end(), {50.0, 50.0});
  const DistanceMatrix d2 = pairwise_euclidean(Tensor::from_data({2 * min_pts + 1, 2}, pts2));
  const std::vector<int> labels2 = dbscan(d2, 0.5, min_pts);
  CHECK(labels2.back() == -1);
}

TEST_CASE("dbscan matches the brute-force oracle on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 8 + static_cast<int>(rng.index(57));
    Tensor x = testutil::random_tensor(rng, {n, 3});
    const DistanceMatrix d = pairwise_euclidean(x);
    const double eps = 0.5 + rng.unit();
    const int min_pts = 2 + static_cast<int>(rng.index(4));
    const std::vector<int> mine = dbscan(d, eps, min_pts);
    const std::vector<int> ref = oracles::dbscan(d.values, n, eps, min_pts);
    CHECK(same_partition(mine, ref));

    // every cluster has at least min_pts members
    std::map<int, int> sizes;
    for (int y : mine)
      if (y >= 0) sizes[y] += 1;
    for (const auto& [c, size] : sizes) CHECK(size >= min_pts);
  }
}

TEST_CASE("dbscan is permutation equivariant") {
  Rng rng(13);
  const int n = 24;
  Tensor x = testutil::random_tensor(rng, {n, 3});
  const DistanceMatrix d = pairwise_euclidean(x);
  const std::vector<int> base = dbscan(d, 1.0, 3);

  // random permutation
  std::vector<int> perm(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (std::size_t t = 0; t + 1 < perm.size(); ++t) {
    const std::size_t j = t + rng.index(perm.size() - t);
    std::swap(perm[t], perm[j]);
  }
  DistanceMatrix pd(n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      pd.at(i, j) = d.at(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  const std::vector<int> permuted = dbscan(pd, 1.0, 3);
  std::vector<int> mapped_back(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    mapped_back[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] =
        permuted[static_cast<std::size_t>(i)];
  CHECK(same_partition(base, mapped_back));
}

TEST_CASE("kmeans_pp: degenerate k == N, separated blobs, inertia monotone") {
  Rng rng(17);
  {
    Tensor x = testutil::random_tensor(rng, {6, 2});
    const std::vector<int> assign = kmeans_pp(x, 6, 1, 50);
    std::vector<int> seen(6, 0);
    for (int y : assign) seen[static_cast<std::size_t>(y)] += 1;
    for (int c : seen) CHECK(c == 1);  // every point its own cluster
  }
  {
    std::vector<double> pts;
    for (int i = 0; i < 6; ++i) pts.insert(pts.end(), {0.0 + 0.01 * i, 0.0});
    for (int i = 0; i < 6; ++i) pts.insert(pts.end(), {50.0 + 0.01 * i, 0.0});
    Tensor x = Tensor::from_data({12, 2}, pts);
    const std::vector<int> assign = kmeans_pp(x, 2, 3, 50);
    for (int i = 1; i < 6; ++i) CHECK(assign[static_cast<std::size_t>(i)] == assign[0]);
    for (int i = 7; i < 12; ++i) CHECK(assign[static_cast<std::size_t>(i)] == assign[6]);
    CHECK(assign[0] != assign[6]);
  }
  {
    // inertia (with centers = cluster means) never increases with more Lloyd iterations
    Tensor x = testutil::random_tensor(rng, {40, 3});
    const auto inertia = [&](const std::vector<int>& assign, int k) {
      std::vector<double> centers(static_cast<std::size_t>(k) * 3, 0.0);
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (int i = 0; i < 40; ++i) {
        counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])] += 1;
        for (int j = 0; j < 3; ++j)
          centers[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]) * 3 + j] +=
              x.at(static_cast<std::size_t>(i) * 3 + j);
      }
      for (int c = 0; c < k; ++c)
        if (counts[static_cast<std::size_t>(c)] > 0)
          for (int j = 0; j < 3; ++j)
            centers[static_cast<std::size_t>(c) * 3 + j] /= counts[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (int i = 0; i < 40; ++i)
        for (int j = 0; j < 3; ++j) {
          const double diff =
              x.at(static_cast<std::size_t>(i) * 3 + j) -
              centers[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)]) * 3 + j];
          acc += diff * diff;
        }
      return acc;
    };
    double prev = 1e300;
    for (int iters = 1; iters <= 8; ++iters) {
      const std::vector<int> assign = kmeans_pp(x, 5, 99, iters);
      const double j = inertia(assign, 5);
      CHECK(j <= prev + 1e-9);
      prev = j;
    }
  }
  {
    Tensor x = testutil::random_tensor(rng, {4, 2});
    CHECK_THROWS_AS(kmeans_pp(x, 5, 1, 10), ParameterError);
    // determinism
    Tensor y = testutil::random_tensor(rng, {20, 3});
    CHECK(kmeans_pp(y, 4, 7, 50) == kmeans_pp(y, 4, 7, 50));
  }
}

TEST_CASE("cluster_means: identical rows, unit norms, oracle, noise handling") {
  {
    Tensor f = Tensor::from_data({3, 2}, {3, 4, 3, 4, 3, 4});
    const int assign[] = {0, 0, 0};
    CHECK_THROWS_AS(cluster_means(f, f, std::vector<int>{-1, -1, -1}), DegenerateClusteringError);
    const ClusterMeansResult r = cluster_means(f, f, assign);
    CHECK(r.k == 1);
    CHECK(r.means_a.at(0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r.means_a.at(1) == doctest::Approx(0.8).epsilon(1e-12));
  }
  {
    Rng rng(19);
    Tensor fa = testutil::random_tensor(rng, {12, 5});
    Tensor fm = testutil::random_tensor(rng, {12, 5});
    // sparse ids with gaps and outliers exercise the dense remap
    const std::vector<int> assign = {4, -1, 9, 4, 9, 2, -1, 2, 4, 9, 2, 4};
    const ClusterMeansResult r = cluster_means(fa, fm, assign);
    CHECK(r.k == 3);
    // remap is by ascending original id: 2 -> 0, 4 -> 1, 9 -> 2
    CHECK(r.assignment[0] == 1);
    CHECK(r.assignment[1] == -1);
    CHECK(r.assignment[2] == 2);
    CHECK(r.assignment[5] == 0);

    int k_ref = 0;
    const auto ref_a = oracles::grouped_means(fa.data(), 12, 5, assign, &k_ref);
    CHECK(k_ref == 3);
    CHECK(testutil::max_abs_diff(r.means_a.data(), ref_a) < 1e-12);

    for (int c = 0; c < 3; ++c) {
      double norm = 0.0;
      for (int j = 0; j < 5; ++j)
        norm += r.means_a.at(static_cast<std::size_t>(c) * 5 + j) *
                r.means_a.at(static_cast<std::size_t>(c) * 5 + j);
      CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
    }

    // outliers never contribute: changing an outlier row leaves means alone
    Tensor fa2 = fa.clone();
    for (int j = 0; j < 5; ++j) fa2.data_mut()[5 + static_cast<std::size_t>(j)] = 1e6;  // row 1
    const ClusterMeansResult r2 = cluster_means(fa2, fm, assign);
    CHECK(testutil::max_abs_diff(r.means_a.data(), r2.means_a.data()) == 0.0);
  }
}

TEST_CASE("generate_pseudo_labels recovers well-separated synthetic identities") {
  SynthConfig scfg;
  scfg.n_ids = 5;
  scfg.imgs_per_id = 12;
  scfg.n_cams = 2;
  scfg.P = 3;
  scfg.d_in = 8;
  scfg.noise = 0.02;      // tight: within-identity spread well below id spacing
  scfg.cam_scale = 0.02;
  scfg.domain_shift = 0.1;
  scfg.seed = 23;
  const auto [source, target] = synth_dataset(scfg);
  (void)source;

  EncoderConfig ecfg;
  ecfg.d_in = 8;
  ecfg.d_hidden = 12;
  ecfg.d_feat = 8;
  ecfg.trunk_blocks = 1;
  ecfg.branch_a_blocks = 1;
  ecfg.num_classes = 0;
  const EncoderState enc = build_encoder(ecfg, 29);
  const TeacherState teacher = init_teacher(enc, 0.999);

  ClusterConfig ccfg;
  ccfg.min_pts = 4;
  ccfg.k1 = 8;
  ccfg.k2 = 2;
  ccfg.eps_quantile = 0.15;  // just right of the within-identity distance mass

  const std::vector<int> train_idx = target.indices(Split::train);
  const std::vector<int> truth = target.identities(train_idx);

  const PseudoLabeling lab =
      generate_pseudo_labels(teacher, target, ccfg, ClusterMethod::dbscan_rerank, 1);
  CHECK(lab.k == 5);
  CHECK(same_partition(lab.assignment, truth));

  // kmeans path with the true cluster count
  ClusterConfig kcfg;
  kcfg.kmeans_k = 5;
  const PseudoLabeling klab = generate_pseudo_labels(teacher, target, kcfg, ClusterMethod::kmeans, 1);
  CHECK(klab.k == 5);
  for (int y : klab.assignment) CHECK(y >= 0);  // kmeans discards nothing
}

TEST_SUITE_END();
