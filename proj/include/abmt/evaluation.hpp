#pragma once

#include <vector>

#include "abmt/tensor.hpp"

namespace abmt {

// Query/gallery retrieval split. Gallery entries that share both identity and
// camera with a query are excluded from that query's ranking (standard
// protocol); a gallery match means same identity from a different camera.
struct RetrievalSplit {
  Tensor query_sigs;    // Q x D
  Tensor gallery_sigs;  // G x D
  std::vector<int> query_ids, gallery_ids;
  std::vector<int> query_cams, gallery_cams;

  void validate() const;
};

// Gallery indices sorted by ascending Euclidean distance to query q, after
// the same-id-same-camera exclusion. Ties break by gallery index.
std::vector<int> rank_gallery(const RetrievalSplit& split, int q);

struct EvalResult {
  double map = 0.0;
  std::vector<int> cmc_ranks;
  std::vector<double> cmc;
  int num_queries = 0;
  int num_skipped = 0;
};

// mAP over queries that have at least one valid relevant gallery item; other
// queries are skipped and counted.
double mean_average_precision(const RetrievalSplit& split);

// CMC@k for each requested rank: fraction of valid queries whose first
// relevant item appears within the top k.
std::vector<double> cmc(const RetrievalSplit& split, std::span<const int> ranks);

// One pass computing mAP and CMC together.
EvalResult evaluate(const RetrievalSplit& split, std::span<const int> ranks);

}  // namespace abmt
