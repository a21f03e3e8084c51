// Command-line driver: dataset synthesis, source pre-training, target
// adaptation, retrieval evaluation, divergence diagnostics.

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "abmt/checkpoint.hpp"
#include "abmt/config.hpp"
#include "abmt/kernels.hpp"
#include "abmt/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  int threads = 0;
  bool serial = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "config file (key = value per line)");
  cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set adapt.epochs=10")
      ->take_all();
  cmd->add_option("--threads", opts.threads, "OpenMP thread count (0 = default)");
  cmd->add_flag("--serial", opts.serial, "disable the parallel kernel paths");
}

abmt::TrainConfig resolve_config(const CommonOpts& opts) {
  abmt::TrainConfig cfg;
  if (!opts.config_path.empty()) abmt::parse_config_file(opts.config_path, cfg);
  for (const std::string& kv : opts.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw abmt::ConfigError("--set expects key=value, got: " + kv);
    abmt::apply_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void apply_execution(const CommonOpts& opts) {
  if (opts.serial) abmt::kernels::set_parallel_enabled(false);
#ifdef _OPENMP
  if (opts.threads > 0) omp_set_num_threads(opts.threads);
#endif
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"asymmetric-branch mean-teacher adaptation on part-feature datasets"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic source/target dataset pair");
  abmt::SynthConfig synth_cfg;
  std::string out_source, out_target;
  synth->add_option("--ids", synth_cfg.n_ids, "identities per domain");
  synth->add_option("--imgs-per-id", synth_cfg.imgs_per_id, "images per identity");
  synth->add_option("--cams", synth_cfg.n_cams, "camera count");
  synth->add_option("--parts", synth_cfg.P, "parts per image");
  synth->add_option("--dim", synth_cfg.d_in, "part vector dimension");
  synth->add_option("--domain-shift", synth_cfg.domain_shift, "target domain distortion");
  synth->add_option("--noise", synth_cfg.noise, "per-value gaussian noise");
  synth->add_option("--seed", synth_cfg.seed, "generator seed")->required();
  synth->add_option("--out-source", out_source, "source dataset file")->required();
  synth->add_option("--out-target", out_target, "target dataset file")->required();

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "supervised pre-training on the source domain");
  CommonOpts pre_opts;
  add_common(pretrain, pre_opts);
  std::string pre_source, pre_out, pre_losslog;
  std::uint64_t pre_seed = 0;
  pretrain->add_option("--source", pre_source, "source dataset file")->required();
  pretrain->add_option("--seed", pre_seed, "training seed")->required();
  pretrain->add_option("--out", pre_out, "output checkpoint")->required();
  pretrain->add_option("--loss-log", pre_losslog, "per-epoch loss CSV");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "unsupervised adaptation on the target domain");
  CommonOpts ada_opts;
  add_common(adapt, ada_opts);
  std::string ada_target, ada_source, ada_init, ada_out, ada_report, ada_runlog, ada_labels_dir;
  std::uint64_t ada_seed = 0;
  bool ada_fresh = false;
  adapt->add_option("--target", ada_target, "target dataset file")->required();
  adapt->add_option("--source", ada_source, "source dataset file (re-ranking fidelity mode)");
  adapt->add_option("--init", ada_init, "pre-trained encoder checkpoint");
  adapt->add_flag("--fresh", ada_fresh, "start from a fresh encoder (fully unsupervised)");
  adapt->add_option("--seed", ada_seed, "training seed")->required();
  adapt->add_option("--out", ada_out, "output teacher checkpoint")->required();
  adapt->add_option("--report", ada_report, "metrics report JSON");
  adapt->add_option("--runlog", ada_runlog, "per-epoch run log CSV");
  adapt->add_option("--dump-labels", ada_labels_dir, "directory for per-epoch label CSVs");

  // eval
  auto* evalc = app.add_subcommand("eval", "retrieval metrics of a checkpoint on the target");
  std::string ev_ckpt, ev_target, ev_out;
  evalc->add_option("--ckpt", ev_ckpt, "encoder checkpoint")->required();
  evalc->add_option("--target", ev_target, "target dataset file")->required();
  evalc->add_option("--out", ev_out, "metrics JSON output");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "divergence CSV from a metrics report");
  std::string dg_report, dg_out;
  diag->add_option("--report", dg_report, "metrics report JSON")->required();
  diag->add_option("--out", dg_out, "divergence CSV output")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto [source, target] = abmt::synth_dataset(synth_cfg);
      abmt::save_dataset(source, out_source);
      abmt::save_dataset(target, out_target);
      std::printf("wrote %zu source and %zu target samples\n", source.samples.size(),
                  target.samples.size());
    } else if (*pretrain) {
      apply_execution(pre_opts);
      const abmt::TrainConfig cfg = resolve_config(pre_opts);
      const abmt::Dataset source = abmt::load_dataset(pre_source, abmt::Domain::source);
      std::vector<double> losses;
      const abmt::EncoderState state = abmt::pretrain_source(cfg, source, pre_seed, &losses);
      abmt::save_encoder(state, pre_out);
      if (!pre_losslog.empty()) {
        std::FILE* f = std::fopen(pre_losslog.c_str(), "wb");
        if (!f) throw abmt::IoError("cannot open for writing: " + pre_losslog);
        std::fprintf(f, "epoch,mean_loss\n");
        for (std::size_t e = 0; e < losses.size(); ++e)
          std::fprintf(f, "%zu,%.17g\n", e + 1, losses[e]);
        std::fclose(f);
      }
      std::printf("pre-trained %zu parameters, final epoch loss %.6f\n", state.parameter_count(),
                  losses.empty() ? 0.0 : losses.back());
    } else if (*adapt) {
      apply_execution(ada_opts);
      const abmt::TrainConfig cfg = resolve_config(ada_opts);
      if (ada_fresh == !ada_init.empty())
        throw abmt::ConfigError("adapt: pass exactly one of --init or --fresh");
      const abmt::Dataset target = abmt::load_dataset(ada_target, abmt::Domain::target);
      std::optional<abmt::Dataset> source;
      if (!ada_source.empty()) source = abmt::load_dataset(ada_source, abmt::Domain::source);

      std::optional<abmt::EncoderState> init;
      if (!ada_init.empty()) init = abmt::load_encoder(ada_init);

      abmt::AdaptHooks hooks;
      if (!ada_labels_dir.empty()) {
        hooks.after_labels = [&ada_labels_dir](int epoch, const abmt::PseudoLabeling& lab) {
          abmt::dump_labeling_csv(lab, ada_labels_dir + "/labels_epoch_" + std::to_string(epoch) +
                                           ".csv");
        };
      }
      abmt::AdaptResult res =
          abmt::adapt_target(cfg, std::move(init), source ? &*source : nullptr, target, ada_seed,
                             ada_labels_dir.empty() ? nullptr : &hooks);
      if (!ada_init.empty()) {
        const abmt::EncoderState pre = abmt::load_encoder(ada_init);
        res.report.direct_transfer = abmt::run_eval(pre, target);
      }
      abmt::save_encoder(res.teacher.params, ada_out);
      if (!ada_report.empty()) abmt::write_report(res.report, ada_report);
      if (!ada_runlog.empty()) abmt::write_runlog_csv(res.report, ada_runlog);
      std::printf("%s\n", abmt::eval_to_json_string(res.report.final_eval).c_str());
    } else if (*evalc) {
      const abmt::EncoderState state = abmt::load_encoder(ev_ckpt);
      const abmt::Dataset target = abmt::load_dataset(ev_target, abmt::Domain::target);
      const abmt::EvalResult metrics = abmt::run_eval(state, target);
      const std::string text = abmt::eval_to_json_string(metrics);
      if (!ev_out.empty()) {
        std::FILE* f = std::fopen(ev_out.c_str(), "wb");
        if (!f) throw abmt::IoError("cannot open for writing: " + ev_out);
        std::fprintf(f, "%s\n", text.c_str());
        std::fclose(f);
      }
      std::printf("%s\n", text.c_str());
    } else if (*diag) {
      const abmt::MetricsReport report = abmt::read_report(dg_report);
      abmt::diagnose(report, dg_out);
      std::printf("wrote %zu epochs to %s\n", report.epochs.size(), dg_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
