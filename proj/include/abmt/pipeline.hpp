#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "abmt/config.hpp"
#include "abmt/dataset.hpp"
#include "abmt/evaluation.hpp"
#include "abmt/mean_teacher.hpp"
#include "abmt/pseudo_labels.hpp"

namespace abmt {

struct EpochStats {
  int epoch = 0;
  bool skipped = false;
  double mean_loss = 0.0;
  int num_clusters = 0;
  int num_outliers = 0;
  double cross_branch_distance = 0.0;
  double teacher_student_distance = 0.0;
};

struct MetricsReport {
  std::uint64_t seed = 0;
  TrainConfig config;
  std::vector<double> pretrain_loss;      // per pre-training epoch
  std::vector<EpochStats> epochs;         // adaptation epochs
  EvalResult final_eval;
  std::optional<EvalResult> direct_transfer;
};

// Test/diagnostic hooks into the adaptation loop.
struct AdaptHooks {
  std::function<void(int epoch, const PseudoLabeling&)> after_labels;
  std::function<void(int epoch, int iter, std::span<const int> batch,
                     const EncoderState& student, const TeacherState& teacher)>
      after_iteration;
};

// Supervised pre-training on the labeled source domain. Step-decay learning
// rate at the configured epochs.
EncoderState pretrain_source(const TrainConfig& cfg, const Dataset& source, std::uint64_t seed,
                             std::vector<double>* loss_trace = nullptr);

struct AdaptResult {
  TeacherState teacher;
  EncoderState student;
  MetricsReport report;
};

// Pseudo-label adaptation on the unlabeled target domain. Pass m_pre from
// pretrain_source for the two-stage mode, or nullopt for the fully
// unsupervised mode (fresh encoder). `source` is only consulted when
// cluster.include_source is set.
AdaptResult adapt_target(const TrainConfig& cfg, std::optional<EncoderState> m_pre,
                         const Dataset* source, const Dataset& target, std::uint64_t seed,
                         const AdaptHooks* hooks = nullptr);

// Retrieval metrics of a state's signatures on the target query/gallery.
EvalResult run_eval(const EncoderState& state, const Dataset& target);

std::string eval_to_json_string(const EvalResult& eval);
std::string report_to_json_string(const MetricsReport& report);
MetricsReport report_from_json_string(const std::string& text);

void write_report(const MetricsReport& report, const std::string& path);
MetricsReport read_report(const std::string& path);
void write_runlog_csv(const MetricsReport& report, const std::string& path);

// Divergence CSV (epoch, cross_branch_distance, teacher_student_distance).
void diagnose(const MetricsReport& report, const std::string& out_path);

}  // namespace abmt
