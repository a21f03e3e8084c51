#include "abmt/pseudo_labels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "abmt/kernels.hpp"

namespace abmt {

void ClusterConfig::validate() const {
  if (use_absolute_eps && eps <= 0.0) throw ParameterError("cluster: absolute eps must be positive");
  if (eps_quantile <= 0.0 || eps_quantile >= 1.0)
    throw ParameterError("cluster: eps_quantile must be in (0, 1)");
  if (min_pts < 2) throw ParameterError("cluster: min_pts must be >= 2");
  if (k1 < 1 || k2 < 1 || k2 > k1) throw ParameterError("cluster: need 1 <= k2 <= k1");
  if (lambda_rerank < 0.0 || lambda_rerank > 1.0)
    throw ParameterError("cluster: lambda_rerank must be in [0, 1]");
  if (kmeans_k < 0 || kmeans_max_iter < 1) throw ParameterError("cluster: bad kmeans settings");
}

DistanceMatrix pairwise_euclidean(const Tensor& signatures) {
  if (!signatures.defined() || signatures.ndim() != 2)
    throw DimensionError("pairwise_euclidean: expected a 2-d tensor");
  const int n = signatures.dim(0), d = signatures.dim(1);
  if (n < 1) throw DimensionError("pairwise_euclidean: empty input");
  DistanceMatrix out(n);
  kernels::pairwise_dist(signatures.data().data(), out.values.data(), n, d);
  return out;
}

namespace {

// Neighbor order by (distance, index); knn(i, k) = the first k+1 entries,
// which normally puts the point itself first.
std::vector<std::vector<int>> sorted_ranks(const DistanceMatrix& dist) {
  const int n = dist.n;
  std::vector<std::vector<int>> rank(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return dist.at(i, a) < dist.at(i, b); });
    rank[static_cast<std::size_t>(i)] = std::move(idx);
  });
  return rank;
}

std::vector<int> reciprocal_set(const std::vector<std::vector<int>>& rank, int i, int k) {
  const int take = k + 1;
  const auto& ri = rank[static_cast<std::size_t>(i)];
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(take));
  for (int t = 0; t < take && t < static_cast<int>(ri.size()); ++t) {
    const int j = ri[static_cast<std::size_t>(t)];
    const auto& rj = rank[static_cast<std::size_t>(j)];
    const auto end = rj.begin() + std::min<std::ptrdiff_t>(take, static_cast<std::ptrdiff_t>(rj.size()));
    if (std::find(rj.begin(), end, i) != end) out.push_back(j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DistanceMatrix k_reciprocal_rerank(const DistanceMatrix& dist, const ClusterConfig& cfg) {
  cfg.validate();
  const int n = dist.n;
  int k1 = cfg.k1;
  int k2 = cfg.k2;
  if (n <= k1) {
    if (!cfg.clamp_k) throw ParameterError("k_reciprocal_rerank: need N > k1");
    k1 = n - 1;
  }
  if (k1 < 1) throw ParameterError("k_reciprocal_rerank: too few samples");
  k2 = std::min(k2, k1);
  const int half_k1 = std::max<int>(1, static_cast<int>(std::lround(k1 / 2.0)));

  const auto rank = sorted_ranks(dist);

  // k-reciprocal sets with half-k1 expansion
  std::vector<std::vector<int>> base_sets(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) { base_sets[static_cast<std::size_t>(i)] = reciprocal_set(rank, i, k1); });
  std::vector<std::vector<int>> half_sets(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) { half_sets[static_cast<std::size_t>(i)] = reciprocal_set(rank, i, half_k1); });

  std::vector<std::vector<int>> expanded(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) {
    const auto& base = base_sets[static_cast<std::size_t>(i)];
    std::vector<int> exp_set = base;
    for (int q : base) {
      const auto& half = half_sets[static_cast<std::size_t>(q)];
      std::size_t overlap = 0;
      for (int v : half)
        if (std::binary_search(base.begin(), base.end(), v)) ++overlap;
      if (3 * overlap >= 2 * half.size() && !half.empty())
        exp_set.insert(exp_set.end(), half.begin(), half.end());
    }
    std::sort(exp_set.begin(), exp_set.end());
    exp_set.erase(std::unique(exp_set.begin(), exp_set.end()), exp_set.end());
    expanded[static_cast<std::size_t>(i)] = std::move(exp_set);
  });

  // Gaussian-weighted encoding vectors, L1-normalized per row
  std::vector<std::vector<double>> enc(static_cast<std::size_t>(n),
                                       std::vector<double>(static_cast<std::size_t>(n), 0.0));
  kernels::parallel_for(n, [&](int i) {
    auto& row = enc[static_cast<std::size_t>(i)];
    double total = 0.0;
    for (int j : expanded[static_cast<std::size_t>(i)]) {
      const double w = std::exp(-dist.at(i, j));
      row[static_cast<std::size_t>(j)] = w;
      total += w;
    }
    if (total > 0.0)
      for (int j : expanded[static_cast<std::size_t>(i)]) row[static_cast<std::size_t>(j)] /= total;
  });

  // local query expansion: average encodings over the k2 nearest (self included)
  std::vector<std::vector<double>> smoothed;
  if (k2 > 1) {
    smoothed.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    kernels::parallel_for(n, [&](int i) {
      auto& row = smoothed[static_cast<std::size_t>(i)];
      for (int t = 0; t < k2; ++t) {
        const int q = rank[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)];
        const auto& src = enc[static_cast<std::size_t>(q)];
        for (int c = 0; c < n; ++c) row[static_cast<std::size_t>(c)] += src[static_cast<std::size_t>(c)];
      }
      for (int c = 0; c < n; ++c) row[static_cast<std::size_t>(c)] /= k2;
    });
  } else {
    smoothed = enc;
  }

  // nonzero columns per row, for sparse Jaccard sums
  std::vector<std::vector<int>> nonzero(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) {
    auto& nz = nonzero[static_cast<std::size_t>(i)];
    const auto& row = smoothed[static_cast<std::size_t>(i)];
    for (int c = 0; c < n; ++c)
      if (row[static_cast<std::size_t>(c)] != 0.0) nz.push_back(c);
  });

  DistanceMatrix out(n);
  const double lambda = cfg.lambda_rerank;
  kernels::parallel_for(n, [&](int i) {
    const auto& vi = smoothed[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) {
      const auto& vj = smoothed[static_cast<std::size_t>(j)];
      double sum_min = 0.0, sum_max = 0.0;
      // union of the two nonzero sets, two-pointer walk
      const auto& nzi = nonzero[static_cast<std::size_t>(i)];
      const auto& nzj = nonzero[static_cast<std::size_t>(j)];
      std::size_t a = 0, b = 0;
      while (a < nzi.size() || b < nzj.size()) {
        int c;
        if (b >= nzj.size() || (a < nzi.size() && nzi[a] <= nzj[b]))
          c = nzi[a];
        else
          c = nzj[b];
        const double x = vi[static_cast<std::size_t>(c)];
        const double y = vj[static_cast<std::size_t>(c)];
        sum_min += std::min(x, y);
        sum_max += std::max(x, y);
        if (a < nzi.size() && nzi[a] == c) ++a;
        if (b < nzj.size() && nzj[b] == c) ++b;
      }
      const double jaccard = sum_max > 0.0 ? 1.0 - sum_min / sum_max : 1.0;
      out.at(i, j) = lambda * dist.at(i, j) + (1.0 - lambda) * jaccard;
    }
  });

  // DBSCAN needs symmetric distances; average with the transpose.
  for (int i = 0; i < n; ++i) {
    out.at(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double v = 0.5 * (out.at(i, j) + out.at(j, i));
      out.at(i, j) = v;
      out.at(j, i) = v;
    }
  }
  return out;
}

std::vector<int> dbscan(const DistanceMatrix& dist, double eps, int min_pts) {
  if (eps <= 0.0) throw ParameterError("dbscan: eps must be positive");
  if (min_pts < 2) throw ParameterError("dbscan: min_pts must be >= 2");
  const int n = dist.n;
  std::vector<std::vector<int>> neigh(static_cast<std::size_t>(n));
  kernels::parallel_for(n, [&](int i) {
    auto& ni = neigh[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j)
      if (dist.at(i, j) <= eps) ni.push_back(j);  // includes self
  });

  constexpr int kUndef = -2;
  std::vector<int> label(static_cast<std::size_t>(n), kUndef);
  int next_cluster = 0;
  for (int i = 0; i < n; ++i) {
    if (label[static_cast<std::size_t>(i)] != kUndef) continue;
    if (static_cast<int>(neigh[static_cast<std::size_t>(i)].size()) < min_pts) {
      label[static_cast<std::size_t>(i)] = -1;
      continue;
    }
    const int c = next_cluster++;
    label[static_cast<std::size_t>(i)] = c;
    std::vector<int> queue(neigh[static_cast<std::size_t>(i)]);
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const int q = queue[qi];
      if (label[static_cast<std::size_t>(q)] == -1) label[static_cast<std::size_t>(q)] = c;  // border
      if (label[static_cast<std::size_t>(q)] != kUndef) continue;
      label[static_cast<std::size_t>(q)] = c;
      if (static_cast<int>(neigh[static_cast<std::size_t>(q)].size()) >= min_pts)
        queue.insert(queue.end(), neigh[static_cast<std::size_t>(q)].begin(),
                     neigh[static_cast<std::size_t>(q)].end());
    }
  }
  return label;
}

std::vector<int> kmeans_pp(const Tensor& signatures, int k, std::uint64_t seed, int max_iter) {
  if (!signatures.defined() || signatures.ndim() != 2)
    throw DimensionError("kmeans_pp: expected a 2-d tensor");
  const int n = signatures.dim(0), d = signatures.dim(1);
  if (k < 2 || k > n) throw ParameterError("kmeans_pp: need 2 <= k <= N");
  if (max_iter < 1) throw ParameterError("kmeans_pp: max_iter must be >= 1");
  const double* x = signatures.data().data();
  Rng rng(derive_seed(seed, 0x4b4dULL));

  const auto sqdist_to = [&](int i, const std::vector<double>& center) {
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = x[static_cast<std::size_t>(i) * d + j] - center[static_cast<std::size_t>(j)];
      acc += diff * diff;
    }
    return acc;
  };

  // ++ seeding: first uniform, then proportional to squared distance
  std::vector<std::vector<double>> centers;
  centers.reserve(static_cast<std::size_t>(k));
  {
    const int first = static_cast<int>(rng.index(static_cast<std::uint64_t>(n)));
    centers.emplace_back(x + static_cast<std::size_t>(first) * d,
                         x + static_cast<std::size_t>(first + 1) * d);
  }
  std::vector<double> best_sq(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) best_sq[static_cast<std::size_t>(i)] = sqdist_to(i, centers[0]);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (double v : best_sq) total += v;
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.index(static_cast<std::uint64_t>(n)));
    } else {
      const double r = rng.unit() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        acc += best_sq[static_cast<std::size_t>(i)];
        if (acc > r) {
          pick = i;
          break;
        }
      }
    }
    centers.emplace_back(x + static_cast<std::size_t>(pick) * d,
                         x + static_cast<std::size_t>(pick + 1) * d);
    const auto& c = centers.back();
    for (int i = 0; i < n; ++i)
      best_sq[static_cast<std::size_t>(i)] = std::min(best_sq[static_cast<std::size_t>(i)], sqdist_to(i, c));
  }

  // Lloyd iterations until the assignment stops changing
  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<int> next(static_cast<std::size_t>(n), 0);
  const auto assign_all = [&]() {
    kernels::parallel_for(n, [&](int i) {
      int best = 0;
      double bd = sqdist_to(i, centers[0]);
      for (int c = 1; c < static_cast<int>(centers.size()); ++c) {
        const double dd = sqdist_to(i, centers[static_cast<std::size_t>(c)]);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      next[static_cast<std::size_t>(i)] = best;
    });
    const bool changed = next != assign;
    assign = next;
    return changed;
  };

  assign_all();
  for (int it = 0; it < max_iter; ++it) {
    // recompute means; empty clusters keep their previous center
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k),
                                          std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      counts[static_cast<std::size_t>(c)] += 1;
      for (int j = 0; j < d; ++j)
        sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i) * d + j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;
      for (int j = 0; j < d; ++j)
        centers[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] =
            sums[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] / counts[static_cast<std::size_t>(c)];
    }
    if (!assign_all()) break;
  }
  return assign;
}

ClusterMeansResult cluster_means(const Tensor& f_a, const Tensor& f_m,
                                 std::span<const int> assignment) {
  if (!f_a.defined() || !f_m.defined() || f_a.ndim() != 2 || f_m.ndim() != 2)
    throw DimensionError("cluster_means: expected 2-d feature tensors");
  const int n = f_a.dim(0);
  if (f_m.dim(0) != n || static_cast<int>(assignment.size()) != n)
    throw DimensionError("cluster_means: row/assignment count mismatch");

  std::vector<int> ids;
  for (int y : assignment)
    if (y >= 0) ids.push_back(y);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.empty()) throw DegenerateClusteringError("cluster_means: all samples are outliers");
  const int k = static_cast<int>(ids.size());

  std::vector<int> dense_of(static_cast<std::size_t>(ids.back()) + 1, -1);
  for (int c = 0; c < k; ++c) dense_of[static_cast<std::size_t>(ids[static_cast<std::size_t>(c)])] = c;

  ClusterMeansResult out;
  out.k = k;
  out.assignment.assign(assignment.begin(), assignment.end());
  for (int& y : out.assignment)
    if (y >= 0) y = dense_of[static_cast<std::size_t>(y)];

  const auto grouped_mean = [&](const Tensor& f) {
    const int d = f.dim(1);
    Tensor sums = Tensor::zeros({k, d});
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    double* sv = sums.data_mut().data();
    const double* fv = f.data().data();
    for (int i = 0; i < n; ++i) {
      const int c = out.assignment[static_cast<std::size_t>(i)];
      if (c < 0) continue;
      counts[static_cast<std::size_t>(c)] += 1;
      for (int j = 0; j < d; ++j)
        sv[static_cast<std::size_t>(c) * d + j] += fv[static_cast<std::size_t>(i) * d + j];
    }
    for (int c = 0; c < k; ++c)
      for (int j = 0; j < d; ++j) sv[static_cast<std::size_t>(c) * d + j] /= counts[static_cast<std::size_t>(c)];
    return l2_normalize(nullptr, sums, 1e-12);
  };
  out.means_a = grouped_mean(f_a);
  out.means_m = grouped_mean(f_m);
  return out;
}

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
  if (a.dim(1) != b.dim(1)) throw DimensionError("stack_rows: column counts differ");
  Tensor out = Tensor::zeros({a.dim(0) + b.dim(0), a.dim(1)});
  double* ov = out.data_mut().data();
  std::copy(a.data().begin(), a.data().end(), ov);
  std::copy(b.data().begin(), b.data().end(), ov + a.numel());
  return out;
}

double quantile_of_positive(const DistanceMatrix& m, double q) {
  std::vector<double> vals;
  vals.reserve(m.values.size());
  for (int i = 0; i < m.n; ++i)
    for (int j = 0; j < m.n; ++j) {
      if (i == j) continue;
      const double v = m.at(i, j);
      if (v > 0.0) vals.push_back(v);
    }
  if (vals.empty())
    throw DegenerateClusteringError("eps quantile: no positive distances");
  std::sort(vals.begin(), vals.end());
  const std::size_t idx = static_cast<std::size_t>(q * static_cast<double>(vals.size() - 1));
  return vals[idx];
}

// Quantile over points of the radius that makes each point a core point
// (distance to its min_pts-th neighbor, counting itself). The standard
// k-distance calibration for DBSCAN.
double quantile_of_core_radius(const DistanceMatrix& m, int min_pts, double q) {
  if (m.n < min_pts) throw DegenerateClusteringError("eps quantile: fewer samples than min_pts");
  std::vector<double> radii(static_cast<std::size_t>(m.n));
  std::vector<double> row(static_cast<std::size_t>(m.n));
  for (int i = 0; i < m.n; ++i) {
    for (int j = 0; j < m.n; ++j) row[static_cast<std::size_t>(j)] = m.at(i, j);
    std::nth_element(row.begin(), row.begin() + (min_pts - 1), row.end());
    radii[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(min_pts - 1)];
  }
  std::sort(radii.begin(), radii.end());
  const std::size_t idx = static_cast<std::size_t>(q * static_cast<double>(radii.size() - 1));
  const double eps = radii[idx];
  if (eps <= 0.0) throw DegenerateClusteringError("eps quantile: degenerate core radius");
  return eps;
}

}  // namespace

PseudoLabeling generate_pseudo_labels(const TeacherState& teacher, const Dataset& target,
                                      const ClusterConfig& cfg, ClusterMethod method,
                                      std::uint64_t seed, const Dataset* source) {
  cfg.validate();
  const std::vector<int> train_idx = target.indices(Split::train);
  if (train_idx.empty()) throw ContractError("generate_pseudo_labels: empty target train split");
  const Tensor batch = target.batch_tensor(train_idx);
  const EncoderOutput out = forward(teacher.params, batch, nullptr);
  const Tensor sigs = signature(teacher.params, out);
  const int n = sigs.dim(0);

  std::vector<int> assign;
  if (method == ClusterMethod::kmeans) {
    int k = cfg.kmeans_k > 0 ? cfg.kmeans_k : std::max(2, n / 12);
    k = std::min(k, n);
    assign = kmeans_pp(sigs, k, seed, cfg.kmeans_max_iter);
  } else {
    Tensor enc_sigs = sigs;
    if (cfg.rerank_include_source && source != nullptr) {
      const Tensor src_batch = source->split_tensor(Split::train);
      const EncoderOutput src_out = forward(teacher.params, src_batch, nullptr);
      enc_sigs = stack_rows(sigs, signature(teacher.params, src_out));
    }
    DistanceMatrix dist = pairwise_euclidean(enc_sigs);
    DistanceMatrix reranked = k_reciprocal_rerank(dist, cfg);
    if (enc_sigs.dim(0) != n) {
      // keep only the target block for clustering
      DistanceMatrix sliced(n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sliced.at(i, j) = reranked.at(i, j);
      reranked = std::move(sliced);
    }
    const double eps = cfg.use_absolute_eps
                           ? cfg.eps
                           : (cfg.eps_on_core_radius
                                  ? quantile_of_core_radius(reranked, cfg.min_pts, cfg.eps_quantile)
                                  : quantile_of_positive(reranked, cfg.eps_quantile));
    assign = dbscan(reranked, eps, cfg.min_pts);
  }

  ClusterMeansResult means = cluster_means(out.f_a, out.f_m, assign);
  if (means.k < 2)
    throw DegenerateClusteringError("generate_pseudo_labels: fewer than 2 clusters");
  PseudoLabeling lab;
  lab.assignment = std::move(means.assignment);
  lab.k = means.k;
  lab.means_a = means.means_a;
  lab.means_m = means.means_m;
  return lab;
}

void dump_labeling_csv(const PseudoLabeling& labeling, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fprintf(f, "sample_index,pseudo_label,is_outlier\n");
  for (std::size_t i = 0; i < labeling.assignment.size(); ++i) {
    const int y = labeling.assignment[i];
    std::fprintf(f, "%zu,%d,%d\n", i, y, y < 0 ? 1 : 0);
  }
  std::fclose(f);
}

}  // namespace abmt
