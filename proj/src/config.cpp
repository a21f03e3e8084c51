#include "abmt/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace abmt {

using nlohmann::json;

std::vector<int> TrainConfig::resolved_decay_epochs() const {
  if (!lr_decay_epochs.empty()) return lr_decay_epochs;
  // step decay at half and at 7/8 of the schedule
  std::vector<int> out;
  const int e1 = static_cast<int>(std::lround(epochs_pretrain * 0.5));
  const int e2 = static_cast<int>(std::lround(epochs_pretrain * 0.875));
  if (e1 >= 1) out.push_back(e1);
  if (e2 > e1) out.push_back(e2);
  return out;
}

void TrainConfig::validate() const {
  if (epochs_pretrain < 1 || iters_pretrain < 1 || epochs_adapt < 1 || iters_adapt < 1)
    throw ConfigError("epoch/iteration counts must be >= 1");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (batch_identities < 1 || instances_per_identity < 1)
    throw ConfigError("batch shape must be >= 1 x 1");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  if (part_erasing_prob < 0.0 || part_erasing_prob > 1.0)
    throw ConfigError("part_erasing_prob must be in [0, 1]");
  if (weights.lambda_ce_s < 0 || weights.lambda_tri_s < 0 || weights.lambda_ce_t < 0 ||
      weights.lambda_sce_t < 0 || weights.lambda_stri_t < 0)
    throw ConfigError("loss weights must be >= 0");
  cluster.validate();
  encoder.validate();
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("expected a boolean, got: " + v);
}

int parse_int(const std::string& v) {
  try {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw ConfigError("expected an integer, got: " + v);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("expected an integer, got: " + v);
  }
}

double parse_double(const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw ConfigError("expected a number, got: " + v);
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got: " + v);
  }
}

std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(parse_int(tok));
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_kv(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  const std::string v = trim(value);

  if (k == "pretrain.epochs") cfg.epochs_pretrain = parse_int(v);
  else if (k == "pretrain.iters") cfg.iters_pretrain = parse_int(v);
  else if (k == "adapt.epochs") cfg.epochs_adapt = parse_int(v);
  else if (k == "adapt.iters") cfg.iters_adapt = parse_int(v);
  else if (k == "optim.lr") cfg.lr = parse_double(v);
  else if (k == "optim.weight_decay") cfg.weight_decay = parse_double(v);
  else if (k == "optim.lr_decay_epochs") cfg.lr_decay_epochs = parse_int_list(v);
  else if (k == "batch.identities") cfg.batch_identities = parse_int(v);
  else if (k == "batch.instances") cfg.instances_per_identity = parse_int(v);
  else if (k == "teacher.alpha") cfg.alpha = parse_double(v);
  else if (k == "weights.lambda_ce_s") cfg.weights.lambda_ce_s = parse_double(v);
  else if (k == "weights.lambda_tri_s") cfg.weights.lambda_tri_s = parse_double(v);
  else if (k == "weights.lambda_ce_t") cfg.weights.lambda_ce_t = parse_double(v);
  else if (k == "weights.lambda_sce_t") cfg.weights.lambda_sce_t = parse_double(v);
  else if (k == "weights.lambda_stri_t") cfg.weights.lambda_stri_t = parse_double(v);
  else if (k == "weights.triplet_margin") cfg.weights.triplet_margin = parse_double(v);
  else if (k == "cluster.eps") cfg.cluster.eps = parse_double(v);
  else if (k == "cluster.use_absolute_eps") cfg.cluster.use_absolute_eps = parse_bool(v);
  else if (k == "cluster.eps_quantile") cfg.cluster.eps_quantile = parse_double(v);
  else if (k == "cluster.eps_on_core_radius") cfg.cluster.eps_on_core_radius = parse_bool(v);
  else if (k == "cluster.min_pts") cfg.cluster.min_pts = parse_int(v);
  else if (k == "cluster.k1") cfg.cluster.k1 = parse_int(v);
  else if (k == "cluster.k2") cfg.cluster.k2 = parse_int(v);
  else if (k == "cluster.lambda_rerank") cfg.cluster.lambda_rerank = parse_double(v);
  else if (k == "cluster.clamp_k") cfg.cluster.clamp_k = parse_bool(v);
  else if (k == "cluster.kmeans_k") cfg.cluster.kmeans_k = parse_int(v);
  else if (k == "cluster.kmeans_max_iter") cfg.cluster.kmeans_max_iter = parse_int(v);
  else if (k == "cluster.include_source") cfg.cluster.rerank_include_source = parse_bool(v);
  else if (k == "encoder.d_in") cfg.encoder.d_in = parse_int(v);
  else if (k == "encoder.d_hidden") cfg.encoder.d_hidden = parse_int(v);
  else if (k == "encoder.d_feat") cfg.encoder.d_feat = parse_int(v);
  else if (k == "encoder.trunk_blocks") cfg.encoder.trunk_blocks = parse_int(v);
  else if (k == "encoder.branch_a_blocks") cfg.encoder.branch_a_blocks = parse_int(v);
  else if (k == "encoder.branch_m_blocks") cfg.encoder.branch_m_blocks = parse_int(v);
  else if (k == "encoder.classifier_temperature") cfg.encoder.classifier_temperature = parse_double(v);
  else if (k == "mode.asymmetric_branches") cfg.use_asymmetric_branches = parse_bool(v);
  else if (k == "mode.cross_branch") cfg.use_cross_branch = parse_bool(v);
  else if (k == "mode.clustering") {
    if (v == "dbscan_rerank") cfg.clustering_method = ClusterMethod::dbscan_rerank;
    else if (v == "kmeans") cfg.clustering_method = ClusterMethod::kmeans;
    else throw ConfigError("mode.clustering must be dbscan_rerank or kmeans");
  } else if (k == "mode.source_pretrain") cfg.source_pretrain = parse_bool(v);
  else if (k == "mode.literal_soft_triplet") cfg.literal_soft_triplet = parse_bool(v);
  else if (k == "mode.part_erasing_prob") cfg.part_erasing_prob = parse_double(v);
  else if (k == "mode.teacher_augment") {
    if (v == "none") cfg.teacher_augment = TeacherAugment::none;
    else if (v == "independent") cfg.teacher_augment = TeacherAugment::independent;
    else throw ConfigError("mode.teacher_augment must be none or independent");
  } else {
    throw ConfigError("unknown config key: " + k);
  }
}

void parse_config_file(const std::string& path, TrainConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_kv(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
}

std::string config_to_json_string(const TrainConfig& cfg) {
  json j;
  j["pretrain"]["epochs"] = cfg.epochs_pretrain;
  j["pretrain"]["iters"] = cfg.iters_pretrain;
  j["adapt"]["epochs"] = cfg.epochs_adapt;
  j["adapt"]["iters"] = cfg.iters_adapt;
  j["optim"]["lr"] = cfg.lr;
  j["optim"]["weight_decay"] = cfg.weight_decay;
  j["optim"]["lr_decay_epochs"] = cfg.lr_decay_epochs;
  j["batch"]["identities"] = cfg.batch_identities;
  j["batch"]["instances"] = cfg.instances_per_identity;
  j["teacher"]["alpha"] = cfg.alpha;
  j["weights"]["lambda_ce_s"] = cfg.weights.lambda_ce_s;
  j["weights"]["lambda_tri_s"] = cfg.weights.lambda_tri_s;
  j["weights"]["lambda_ce_t"] = cfg.weights.lambda_ce_t;
  j["weights"]["lambda_sce_t"] = cfg.weights.lambda_sce_t;
  j["weights"]["lambda_stri_t"] = cfg.weights.lambda_stri_t;
  j["weights"]["triplet_margin"] = cfg.weights.triplet_margin;
  j["cluster"]["eps"] = cfg.cluster.eps;
  j["cluster"]["use_absolute_eps"] = cfg.cluster.use_absolute_eps;
  j["cluster"]["eps_quantile"] = cfg.cluster.eps_quantile;
  j["cluster"]["eps_on_core_radius"] = cfg.cluster.eps_on_core_radius;
  j["cluster"]["min_pts"] = cfg.cluster.min_pts;
  j["cluster"]["k1"] = cfg.cluster.k1;
  j["cluster"]["k2"] = cfg.cluster.k2;
  j["cluster"]["lambda_rerank"] = cfg.cluster.lambda_rerank;
  j["cluster"]["clamp_k"] = cfg.cluster.clamp_k;
  j["cluster"]["kmeans_k"] = cfg.cluster.kmeans_k;
  j["cluster"]["kmeans_max_iter"] = cfg.cluster.kmeans_max_iter;
  j["cluster"]["include_source"] = cfg.cluster.rerank_include_source;
  j["encoder"]["d_in"] = cfg.encoder.d_in;
  j["encoder"]["d_hidden"] = cfg.encoder.d_hidden;
  j["encoder"]["d_feat"] = cfg.encoder.d_feat;
  j["encoder"]["trunk_blocks"] = cfg.encoder.trunk_blocks;
  j["encoder"]["branch_a_blocks"] = cfg.encoder.branch_a_blocks;
  j["encoder"]["branch_m_blocks"] = cfg.encoder.branch_m_blocks;
  j["encoder"]["classifier_temperature"] = cfg.encoder.classifier_temperature;
  j["mode"]["asymmetric_branches"] = cfg.use_asymmetric_branches;
  j["mode"]["cross_branch"] = cfg.use_cross_branch;
  j["mode"]["clustering"] =
      cfg.clustering_method == ClusterMethod::kmeans ? "kmeans" : "dbscan_rerank";
  j["mode"]["source_pretrain"] = cfg.source_pretrain;
  j["mode"]["literal_soft_triplet"] = cfg.literal_soft_triplet;
  j["mode"]["part_erasing_prob"] = cfg.part_erasing_prob;
  j["mode"]["teacher_augment"] =
      cfg.teacher_augment == TeacherAugment::independent ? "independent" : "none";
  return j.dump(2);
}

TrainConfig config_from_json_string(const std::string& text) {
  const json j = json::parse(text);
  TrainConfig cfg;
  const auto walk = [&cfg](const json& node, const std::string& prefix, const auto& self) -> void {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it->is_object()) {
        self(*it, key, self);
      } else if (it->is_array()) {
        std::string joined;
        for (const auto& e : *it) {
          if (!joined.empty()) joined += ",";
          joined += e.dump();
        }
        apply_kv(cfg, key, joined);
      } else if (it->is_string()) {
        apply_kv(cfg, key, it->get<std::string>());
      } else {
        apply_kv(cfg, key, it->dump());
      }
    }
  };
  walk(j, "", walk);
  return cfg;
}

}  // namespace abmt
