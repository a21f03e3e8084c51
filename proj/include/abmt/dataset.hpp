#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "abmt/common.hpp"
#include "abmt/tensor.hpp"

namespace abmt {

enum class Split { train, query, gallery };
enum class Domain { source, target };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct Sample {
  int identity = 0;
  int camera = 0;
  Split split = Split::train;
  std::vector<double> parts;  // P * d_in, row-major by part
};

// A collection of part-feature samples from one domain. P and d_in are
// constant across the dataset; per-sample split tags partition it into
// train/query/gallery.
struct Dataset {
  Domain domain = Domain::source;
  int P = 0;
  int d_in = 0;
  int n_cams = 0;
  std::vector<Sample> samples;

  std::vector<int> indices(Split split) const;
  // N x P x d_in tensor over the given sample indices.
  Tensor batch_tensor(std::span<const int> idx) const;
  Tensor split_tensor(Split split) const;
  std::vector<int> identities(std::span<const int> idx) const;
  std::vector<int> cameras(std::span<const int> idx) const;
  void validate() const;
};

struct SynthConfig {
  int n_ids = 20;
  int imgs_per_id = 16;
  int n_cams = 3;
  int P = 4;
  int d_in = 16;
  double domain_shift = 1.2;
  double noise = 0.15;
  std::uint64_t seed = 1;

  // geometry scales of the generator
  double id_scale = 1.0;
  double part_scale = 0.5;
  double cam_scale = 0.8;
};

// Source domain: all samples tagged train, identities 0..n_ids-1.
// Target domain: fresh identities n_ids..2*n_ids-1, every part vector passed
// through a fixed random affine map scaled by domain_shift, images split
// per-identity into train/query/gallery.
std::pair<Dataset, Dataset> synth_dataset(const SynthConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path, Domain domain);

// PK batch: p distinct labels, k_inst instances each (with replacement when a
// label has fewer members). Samples with label -1 are never selected. Returns
// positions into the labels span.
std::vector<int> sample_pk_batch(std::span<const int> labels, int p, int k_inst, Rng& rng);

// With probability prob per sample, zero out one uniformly chosen part.
Tensor part_erasing(const Tensor& batch, double prob, Rng& rng);

}  // namespace abmt
