#pragma once

#include <cstdint>
#include <vector>

#include "abmt/dataset.hpp"
#include "abmt/mean_teacher.hpp"
#include "abmt/tensor.hpp"

namespace abmt {

struct DistanceMatrix {
  int n = 0;
  std::vector<double> values;  // n * n, row-major

  DistanceMatrix() = default;
  explicit DistanceMatrix(int size) : n(size), values(static_cast<std::size_t>(size) * size, 0.0) {}
  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
};

struct ClusterConfig {
  double eps = 0.0;            // absolute DBSCAN radius, used when use_absolute_eps
  bool use_absolute_eps = false;
  // eps calibration: quantile of per-point core radii (distance to the
  // min_pts-th neighbor) when eps_on_core_radius, else quantile of all
  // positive re-ranked distances
  double eps_quantile = 0.5;
  bool eps_on_core_radius = true;
  int min_pts = 4;
  int k1 = 20;
  int k2 = 6;
  double lambda_rerank = 0.3;
  bool clamp_k = true;         // shrink k1 to N-1 (and k2 to k1) on small sets
  int kmeans_k = 0;            // 0: max(2, N/12)
  int kmeans_max_iter = 100;
  bool rerank_include_source = false;  // append source signatures to the encoding set

  void validate() const;
};

struct PseudoLabeling {
  std::vector<int> assignment;  // -1 = outlier, else dense cluster id in [0, k)
  int k = 0;
  Tensor means_a;  // k x d_feat, rows L2-normalized
  Tensor means_m;
};

enum class ClusterMethod { dbscan_rerank, kmeans };

// values[i][j] = euclidean distance between signature rows; zero diagonal.
DistanceMatrix pairwise_euclidean(const Tensor& signatures);

// k-reciprocal encoding: mutual-kNN sets with half-k1 expansion, Gaussian
// weighted sparse vectors, local query expansion over kNN(i, k2), Jaccard
// distance 1 - sum(min)/sum(max), blended with the original distance by
// lambda_rerank, then symmetrized by averaging with its transpose.
DistanceMatrix k_reciprocal_rerank(const DistanceMatrix& dist, const ClusterConfig& cfg);

// Classical DBSCAN over a precomputed symmetric distance matrix. Core points
// have >= min_pts neighbors within eps, counting themselves. Noise is -1.
// Border points go to the cluster whose core claims them first in index order.
std::vector<int> dbscan(const DistanceMatrix& dist, double eps, int min_pts);

// K-Means++ seeding plus Lloyd iterations until fixpoint or max_iter.
// Every point gets a cluster; deterministic given the seed.
std::vector<int> kmeans_pp(const Tensor& signatures, int k, std::uint64_t seed, int max_iter);

struct ClusterMeansResult {
  Tensor means_a;
  Tensor means_m;
  std::vector<int> assignment;  // input assignment remapped to dense [0, k)
  int k = 0;
};

// Per-cluster mean of member rows (noise excluded), L2-normalized.
ClusterMeansResult cluster_means(const Tensor& f_a, const Tensor& f_m,
                                 std::span<const int> assignment);

// Full labeling pass: teacher signatures over the target training split,
// clustering by the chosen method, cluster means from the teacher's raw
// per-branch features. `seed` drives the kmeans path. `source` may supply
// extra signatures for the re-ranking encoding set (cfg.rerank_include_source).
PseudoLabeling generate_pseudo_labels(const TeacherState& teacher, const Dataset& target,
                                      const ClusterConfig& cfg, ClusterMethod method,
                                      std::uint64_t seed, const Dataset* source = nullptr);

// Optional per-epoch dump: sample_index, pseudo_label, is_outlier.
void dump_labeling_csv(const PseudoLabeling& labeling, const std::string& path);

}  // namespace abmt
