#pragma once

#include <string>
#include <vector>

#include "abmt/encoder.hpp"
#include "abmt/losses.hpp"
#include "abmt/pseudo_labels.hpp"

namespace abmt {

enum class TeacherAugment { none, independent };

// Everything a training run needs. Config files are flat `key = value` lines
// with dotted section prefixes; apply_kv handles one such pair.
struct TrainConfig {
  int epochs_pretrain = 40;
  int iters_pretrain = 50;
  int epochs_adapt = 40;
  int iters_adapt = 100;
  double lr = 3.5e-4;
  double weight_decay = 5e-4;
  std::vector<int> lr_decay_epochs;  // empty: round(E/2), round(7E/8)
  int batch_identities = 8;
  int instances_per_identity = 4;
  double alpha = 0.99;  // desk-scale smoothing: horizon scaled to the shorter schedule

  LossWeights weights;
  ClusterConfig cluster;
  EncoderConfig encoder;

  bool use_asymmetric_branches = true;
  bool use_cross_branch = true;
  ClusterMethod clustering_method = ClusterMethod::dbscan_rerank;
  bool source_pretrain = true;
  bool literal_soft_triplet = false;
  double part_erasing_prob = 0.5;
  TeacherAugment teacher_augment = TeacherAugment::none;

  int batch_size() const { return batch_identities * instances_per_identity; }
  std::vector<int> resolved_decay_epochs() const;
  void validate() const;
};

// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
void parse_config_file(const std::string& path, TrainConfig& cfg);
// One dotted key, e.g. "cluster.k1 = 20" split as ("cluster.k1", "20").
void apply_kv(TrainConfig& cfg, const std::string& key, const std::string& value);

std::string config_to_json_string(const TrainConfig& cfg);
TrainConfig config_from_json_string(const std::string& text);

}  // namespace abmt
