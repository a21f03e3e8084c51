#include "abmt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "abmt/kernels.hpp"

namespace abmt {

void RetrievalSplit::validate() const {
  if (!query_sigs.defined() || !gallery_sigs.defined() || query_sigs.ndim() != 2 ||
      gallery_sigs.ndim() != 2)
    throw DimensionError("retrieval split: signatures must be 2-d");
  if (query_sigs.dim(1) != gallery_sigs.dim(1))
    throw DimensionError("retrieval split: signature widths differ");
  const std::size_t q = static_cast<std::size_t>(query_sigs.dim(0));
  const std::size_t g = static_cast<std::size_t>(gallery_sigs.dim(0));
  if (query_ids.size() != q || query_cams.size() != q || gallery_ids.size() != g ||
      gallery_cams.size() != g)
    throw DimensionError("retrieval split: id/camera array lengths mismatch");
}

namespace {

struct QueryOutcome {
  bool valid = false;      // has at least one relevant item after exclusion
  double ap = 0.0;
  int first_hit = -1;      // 0-based rank of the first relevant item
};

QueryOutcome score_query(const RetrievalSplit& split, int q) {
  QueryOutcome out;
  std::vector<int> order;
  try {
    order = rank_gallery(split, q);
  } catch (const EvaluationError&) {
    return out;  // exclusion emptied the gallery: skip and count
  }
  int relevant_seen = 0;
  double ap_acc = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int gi = order[r];
    const bool rel = split.gallery_ids[static_cast<std::size_t>(gi)] ==
                     split.query_ids[static_cast<std::size_t>(q)];
    if (!rel) continue;
    ++relevant_seen;
    ap_acc += static_cast<double>(relevant_seen) / static_cast<double>(r + 1);
    if (out.first_hit < 0) out.first_hit = static_cast<int>(r);
  }
  if (relevant_seen > 0) {
    out.valid = true;
    out.ap = ap_acc / relevant_seen;
  }
  return out;
}

std::vector<QueryOutcome> score_all(const RetrievalSplit& split) {
  split.validate();
  const int nq = split.query_sigs.dim(0);
  std::vector<QueryOutcome> outcomes(static_cast<std::size_t>(nq));
  kernels::parallel_for(nq, [&](int q) { outcomes[static_cast<std::size_t>(q)] = score_query(split, q); });
  return outcomes;
}

}  // namespace

std::vector<int> rank_gallery(const RetrievalSplit& split, int q) {
  const int ng = split.gallery_sigs.dim(0);
  const int d = split.gallery_sigs.dim(1);
  const double* qs = split.query_sigs.data().data() + static_cast<std::size_t>(q) * d;
  const double* gs = split.gallery_sigs.data().data();
  const int qid = split.query_ids[static_cast<std::size_t>(q)];
  const int qcam = split.query_cams[static_cast<std::size_t>(q)];

  std::vector<int> keep;
  keep.reserve(static_cast<std::size_t>(ng));
  for (int i = 0; i < ng; ++i) {
    if (split.gallery_ids[static_cast<std::size_t>(i)] == qid &&
        split.gallery_cams[static_cast<std::size_t>(i)] == qcam)
      continue;
    keep.push_back(i);
  }
  if (keep.empty()) throw EvaluationError("rank_gallery: no valid gallery entries for query");

  std::vector<double> dist(keep.size());
  for (std::size_t t = 0; t < keep.size(); ++t) {
    const double* row = gs + static_cast<std::size_t>(keep[t]) * d;
    double acc = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = qs[j] - row[j];
      acc += diff * diff;
    }
    dist[t] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(keep.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return keep[a] < keep[b];
  });
  std::vector<int> out(keep.size());
  for (std::size_t t = 0; t < keep.size(); ++t) out[t] = keep[order[t]];
  return out;
}

double mean_average_precision(const RetrievalSplit& split) {
  const auto outcomes = score_all(split);
  double acc = 0.0;
  int valid = 0;
  for (const auto& o : outcomes) {
    if (!o.valid) continue;
    ++valid;
    acc += o.ap;
  }
  if (valid == 0) throw EvaluationError("mean_average_precision: no valid queries");
  return acc / valid;
}

std::vector<double> cmc(const RetrievalSplit& split, std::span<const int> ranks) {
  for (int r : ranks)
    if (r < 1) throw ParameterError("cmc: ranks must be >= 1");
  const auto outcomes = score_all(split);
  int valid = 0;
  std::vector<int> hits(ranks.size(), 0);
  for (const auto& o : outcomes) {
    if (!o.valid) continue;
    ++valid;
    for (std::size_t t = 0; t < ranks.size(); ++t)
      if (o.first_hit < ranks[t]) hits[t] += 1;
  }
  if (valid == 0) throw EvaluationError("cmc: no valid queries");
  std::vector<double> out(ranks.size());
  for (std::size_t t = 0; t < ranks.size(); ++t)
    out[t] = static_cast<double>(hits[t]) / static_cast<double>(valid);
  return out;
}

EvalResult evaluate(const RetrievalSplit& split, std::span<const int> ranks) {
  const auto outcomes = score_all(split);
  EvalResult res;
  res.cmc_ranks.assign(ranks.begin(), ranks.end());
  res.cmc.assign(ranks.size(), 0.0);
  double ap_acc = 0.0;
  int valid = 0;
  for (const auto& o : outcomes) {
    if (!o.valid) {
      ++res.num_skipped;
      continue;
    }
    ++valid;
    ap_acc += o.ap;
    for (std::size_t t = 0; t < ranks.size(); ++t)
      if (o.first_hit < ranks[t]) res.cmc[t] += 1.0;
  }
  if (valid == 0) throw EvaluationError("evaluate: no valid queries");
  res.map = ap_acc / valid;
  for (double& v : res.cmc) v /= valid;
  res.num_queries = valid;
  return res;
}

}  // namespace abmt
