#include "abmt/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "abmt/checkpoint.hpp"
#include "abmt/losses.hpp"

namespace abmt {

using nlohmann::json;

namespace {

// Dense relabeling of raw identities, ordered by ascending identity.
std::vector<int> dense_labels(std::span<const int> ids, int* num_classes) {
  std::map<int, int> remap;
  for (int id : ids) remap.emplace(id, 0);
  int next = 0;
  for (auto& [id, dense] : remap) dense = next++;
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(remap[id]);
  if (num_classes) *num_classes = next;
  return out;
}

struct Optimizer {
  std::vector<Tensor> backbone;
  std::vector<AdamState> backbone_states;
  std::vector<Tensor> classifiers;
  std::vector<AdamState> classifier_states;

  void init_backbone(const EncoderState& st, const TrainConfig& cfg) {
    backbone = st.backbone_params();
    backbone_states.clear();
    for (const Tensor& t : backbone)
      backbone_states.push_back(make_adam_state(t, cfg.lr, cfg.weight_decay));
  }
  void reset_classifiers(const EncoderState& st, const TrainConfig& cfg) {
    classifiers = st.classifier_params();
    classifier_states.clear();
    for (const Tensor& t : classifiers)
      classifier_states.push_back(make_adam_state(t, cfg.lr, cfg.weight_decay));
  }
  void set_lr(double lr) {
    for (AdamState& s : backbone_states) s.lr = lr;
    for (AdamState& s : classifier_states) s.lr = lr;
  }
  void step() {
    adam_step(backbone, backbone_states);
    adam_step(classifiers, classifier_states);
  }
};

}  // namespace

EncoderState pretrain_source(const TrainConfig& cfg, const Dataset& source, std::uint64_t seed,
                             std::vector<double>* loss_trace) {
  cfg.validate();
  const std::vector<int> train_idx = source.indices(Split::train);
  if (train_idx.empty()) throw ContractError("pretrain_source: empty source train split");
  const std::vector<int> raw_ids = source.identities(train_idx);
  int num_classes = 0;
  const std::vector<int> labels = dense_labels(raw_ids, &num_classes);

  EncoderConfig enc_cfg = cfg.encoder;
  enc_cfg.asymmetric = cfg.use_asymmetric_branches;
  enc_cfg.num_classes = num_classes;
  EncoderState student = build_encoder(enc_cfg, seed);

  Optimizer opt;
  opt.init_backbone(student, cfg);
  opt.reset_classifiers(student, cfg);

  Rng batch_rng(derive_seed(seed, 0x505245ULL));
  const std::vector<int> decay = cfg.resolved_decay_epochs();
  double lr = cfg.lr;

  for (int epoch = 1; epoch <= cfg.epochs_pretrain; ++epoch) {
    if (std::find(decay.begin(), decay.end(), epoch) != decay.end()) {
      lr *= 0.1;
      opt.set_lr(lr);
    }
    double loss_acc = 0.0;
    for (int iter = 0; iter < cfg.iters_pretrain; ++iter) {
      const std::vector<int> pos =
          sample_pk_batch(labels, cfg.batch_identities, cfg.instances_per_identity, batch_rng);
      std::vector<int> batch_idx, batch_labels;
      batch_idx.reserve(pos.size());
      batch_labels.reserve(pos.size());
      for (int p : pos) {
        batch_idx.push_back(train_idx[static_cast<std::size_t>(p)]);
        batch_labels.push_back(labels[static_cast<std::size_t>(p)]);
      }
      const Tensor batch = source.batch_tensor(batch_idx);

      Graph g;
      const EncoderOutput out = forward(student, batch, &g);
      const Tensor loss = source_objective(&g, out, batch_labels, cfg.weights);
      g.backward(loss);
      opt.step();
      loss_acc += loss.value();
    }
    if (loss_trace) loss_trace->push_back(loss_acc / cfg.iters_pretrain);
  }
  return student;
}

AdaptResult adapt_target(const TrainConfig& cfg, std::optional<EncoderState> m_pre,
                         const Dataset* source, const Dataset& target, std::uint64_t seed,
                         const AdaptHooks* hooks) {
  cfg.validate();
  const std::vector<int> train_idx = target.indices(Split::train);
  if (train_idx.empty()) throw ContractError("adapt_target: empty target train split");

  EncoderState student;
  if (m_pre.has_value()) {
    student = std::move(*m_pre);
  } else {
    // fully unsupervised mode: fresh encoder, classifiers arrive with the
    // first dynamic initialization
    EncoderConfig enc_cfg = cfg.encoder;
    enc_cfg.asymmetric = cfg.use_asymmetric_branches;
    enc_cfg.num_classes = 0;
    student = build_encoder(enc_cfg, seed);
  }
  if (student.config.asymmetric != cfg.use_asymmetric_branches)
    throw ConfigError("adapt_target: encoder branch mode does not match the run config");

  TeacherState teacher = init_teacher(student, cfg.alpha);

  Optimizer opt;
  opt.init_backbone(student, cfg);

  Rng batch_rng(derive_seed(seed, 0x414441ULL));
  Rng erase_rng(derive_seed(seed, 0x455253ULL));

  MetricsReport report;
  report.seed = seed;
  report.config = cfg;

  const TargetLossOptions loss_opt{cfg.use_cross_branch, cfg.literal_soft_triplet};
  int skipped = 0;

  for (int epoch = 1; epoch <= cfg.epochs_adapt; ++epoch) {
    EpochStats stats;
    stats.epoch = epoch;

    PseudoLabeling labeling;
    try {
      labeling = generate_pseudo_labels(teacher, target, cfg.cluster, cfg.clustering_method,
                                        derive_seed(seed, 0xC10000ULL + static_cast<std::uint64_t>(epoch)),
                                        source);
    } catch (const DegenerateClusteringError& e) {
      std::fprintf(stderr, "[adapt] epoch %d skipped: %s\n", epoch, e.what());
      stats.skipped = true;
      const DivergenceTrace div = record_divergence(teacher, student, target);
      stats.cross_branch_distance = div.cross_branch_distance;
      stats.teacher_student_distance = div.teacher_student_distance;
      report.epochs.push_back(stats);
      ++skipped;
      continue;
    }
    stats.num_clusters = labeling.k;
    stats.num_outliers = static_cast<int>(
        std::count(labeling.assignment.begin(), labeling.assignment.end(), -1));
    if (hooks && hooks->after_labels) hooks->after_labels(epoch, labeling);

    // dynamic classifiers: same initial values on student and teacher,
    // separate tensors, fresh optimizer state for the student's
    init_dynamic_classifiers(student, labeling.means_a, labeling.means_m);
    init_dynamic_classifiers(teacher.params, labeling.means_a, labeling.means_m);
    opt.reset_classifiers(student, cfg);

    double loss_acc = 0.0;
    for (int iter = 0; iter < cfg.iters_adapt; ++iter) {
      const std::vector<int> pos = sample_pk_batch(labeling.assignment, cfg.batch_identities,
                                                   cfg.instances_per_identity, batch_rng);
      std::vector<int> batch_idx, batch_labels;
      batch_idx.reserve(pos.size());
      batch_labels.reserve(pos.size());
      for (int p : pos) {
        batch_idx.push_back(train_idx[static_cast<std::size_t>(p)]);
        batch_labels.push_back(labeling.assignment[static_cast<std::size_t>(p)]);
      }
      const Tensor batch = target.batch_tensor(batch_idx);
      const Tensor student_in = part_erasing(batch, cfg.part_erasing_prob, erase_rng);
      const Tensor teacher_in = cfg.teacher_augment == TeacherAugment::independent
                                    ? part_erasing(batch, cfg.part_erasing_prob, erase_rng)
                                    : batch;

      const EncoderOutput teacher_out = forward(teacher.params, teacher_in, nullptr);
      Graph g;
      const EncoderOutput student_out = forward(student, student_in, &g);
      const Tensor loss =
          target_objective(&g, student_out, teacher_out, batch_labels, cfg.weights, loss_opt);
      g.backward(loss);
      opt.step();
      ema_update(teacher, student);
      loss_acc += loss.value();
      if (hooks && hooks->after_iteration)
        hooks->after_iteration(epoch, iter, batch_idx, student, teacher);
    }
    stats.mean_loss = loss_acc / cfg.iters_adapt;

    const DivergenceTrace div = record_divergence(teacher, student, target);
    stats.cross_branch_distance = div.cross_branch_distance;
    stats.teacher_student_distance = div.teacher_student_distance;
    report.epochs.push_back(stats);
  }

  if (2 * skipped > cfg.epochs_adapt)
    throw DegenerateClusteringError("adapt_target: more than half of the epochs were skipped");

  report.final_eval = run_eval(teacher.params, target);

  AdaptResult res;
  res.teacher = std::move(teacher);
  res.student = std::move(student);
  res.report = std::move(report);
  return res;
}

EvalResult run_eval(const EncoderState& state, const Dataset& target) {
  const std::vector<int> q_idx = target.indices(Split::query);
  const std::vector<int> g_idx = target.indices(Split::gallery);
  if (q_idx.empty() || g_idx.empty())
    throw EvaluationError("run_eval: target needs query and gallery splits");

  RetrievalSplit split;
  const EncoderOutput q_out = forward(state, target.batch_tensor(q_idx), nullptr);
  const EncoderOutput g_out = forward(state, target.batch_tensor(g_idx), nullptr);
  split.query_sigs = signature(state, q_out);
  split.gallery_sigs = signature(state, g_out);
  split.query_ids = target.identities(q_idx);
  split.query_cams = target.cameras(q_idx);
  split.gallery_ids = target.identities(g_idx);
  split.gallery_cams = target.cameras(g_idx);

  const int ranks[] = {1, 5, 10};
  return evaluate(split, ranks);
}

namespace {

json eval_to_json(const EvalResult& e) {
  json j;
  j["mAP"] = e.map;
  json c;
  for (std::size_t i = 0; i < e.cmc_ranks.size(); ++i)
    c[std::to_string(e.cmc_ranks[i])] = e.cmc[i];
  j["cmc"] = c;
  j["num_queries"] = e.num_queries;
  j["num_skipped"] = e.num_skipped;
  return j;
}

EvalResult eval_from_json(const json& j) {
  EvalResult e;
  e.map = j.at("mAP").get<double>();
  for (auto it = j.at("cmc").begin(); it != j.at("cmc").end(); ++it) {
    e.cmc_ranks.push_back(std::stoi(it.key()));
    e.cmc.push_back(it->get<double>());
  }
  e.num_queries = j.at("num_queries").get<int>();
  e.num_skipped = j.at("num_skipped").get<int>();
  return e;
}

}  // namespace

std::string eval_to_json_string(const EvalResult& eval) { return eval_to_json(eval).dump(2); }

std::string report_to_json_string(const MetricsReport& report) {
  json j;
  j["seed"] = report.seed;
  j["config"] = json::parse(config_to_json_string(report.config));
  j["pretrain_loss"] = report.pretrain_loss;
  json epochs = json::array();
  for (const EpochStats& s : report.epochs) {
    json e;
    e["epoch"] = s.epoch;
    e["skipped"] = s.skipped;
    e["mean_loss"] = s.mean_loss;
    e["num_clusters"] = s.num_clusters;
    e["num_outliers"] = s.num_outliers;
    e["cross_branch_distance"] = s.cross_branch_distance;
    e["teacher_student_distance"] = s.teacher_student_distance;
    epochs.push_back(e);
  }
  j["epochs"] = epochs;
  j["final"] = eval_to_json(report.final_eval);
  if (report.direct_transfer.has_value())
    j["direct_transfer"] = eval_to_json(*report.direct_transfer);
  return j.dump(2);
}

MetricsReport report_from_json_string(const std::string& text) {
  const json j = json::parse(text);
  MetricsReport r;
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = config_from_json_string(j.at("config").dump());
  if (j.contains("pretrain_loss")) r.pretrain_loss = j.at("pretrain_loss").get<std::vector<double>>();
  for (const json& e : j.at("epochs")) {
    EpochStats s;
    s.epoch = e.at("epoch").get<int>();
    s.skipped = e.at("skipped").get<bool>();
    s.mean_loss = e.at("mean_loss").get<double>();
    s.num_clusters = e.at("num_clusters").get<int>();
    s.num_outliers = e.at("num_outliers").get<int>();
    s.cross_branch_distance = e.at("cross_branch_distance").get<double>();
    s.teacher_student_distance = e.at("teacher_student_distance").get<double>();
    r.epochs.push_back(s);
  }
  r.final_eval = eval_from_json(j.at("final"));
  if (j.contains("direct_transfer")) r.direct_transfer = eval_from_json(j.at("direct_transfer"));
  return r;
}

void write_report(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << report_to_json_string(report) << "\n";
}

MetricsReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_json_string(ss.str());
}

void write_runlog_csv(const MetricsReport& report, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fprintf(f, "epoch,skipped,mean_loss,num_clusters,num_outliers,"
                  "cross_branch_distance,teacher_student_distance\n");
  for (const EpochStats& s : report.epochs)
    std::fprintf(f, "%d,%d,%.17g,%d,%d,%.17g,%.17g\n", s.epoch, s.skipped ? 1 : 0, s.mean_loss,
                 s.num_clusters, s.num_outliers, s.cross_branch_distance,
                 s.teacher_student_distance);
  std::fclose(f);
}

void diagnose(const MetricsReport& report, const std::string& out_path) {
  if (report.epochs.size() < 2)
    throw ContractError("diagnose: report needs at least 2 epochs");
  std::FILE* f = std::fopen(out_path.c_str(), "wb");
  if (!f) throw IoError("cannot open for writing: " + out_path);
  std::fprintf(f, "epoch,cross_branch_distance,teacher_student_distance\n");
  for (const EpochStats& s : report.epochs)
    std::fprintf(f, "%d,%.17g,%.17g\n", s.epoch, s.cross_branch_distance,
                 s.teacher_student_distance);
  std::fclose(f);
}

}  // namespace abmt
