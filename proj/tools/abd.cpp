// abd: affective burst detection pipeline tool.
//
// Subcommands: synth, label, stats, train, eval, gradcheck.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "abd/cli.hpp"

using namespace abd;

namespace {

// JSON config file with flag overrides; flags win. Unknown keys are errors.
nlohmann::json load_config_file(const std::string& path,
                                const std::vector<std::string>& known_keys) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config parse error: " + std::string(e.what()));
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(known_keys.begin(), known_keys.end(), key) == known_keys.end())
      throw ConfigError("unknown config key '" + key + "' in " + path);
  }
  return j;
}

FoldStrategy parse_strategy(const std::string& name, int group_size) {
  FoldStrategy s;
  if (name == "k_test_groups")
    s.kind = FoldStrategy::Kind::k_test_groups;
  else if (name == "leave_one_session_out")
    s.kind = FoldStrategy::Kind::leave_one_session_out;
  else
    throw ConfigError("unknown fold strategy '" + name + "'");
  s.group_size = group_size;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affective burst detection: labeling, training and evaluation"};
  app.require_subcommand(1);

  // --- synth -------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  cli::SynthCmdConfig scfg;
  std::string synth_out;
  double synth_tau = 0.0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--count", scfg.count, "Number of recordings");
  synth->add_option("--length", scfg.synth.length, "Frames per recording");
  synth->add_option("--seed", scfg.seed, "Random seed");
  synth->add_option("--burst-rate", scfg.synth.burst_rate, "Sigmoid transitions per second");
  synth->add_option("--noise", scfg.synth.noise_level, "Additive Gaussian noise sigma");
  synth->add_option("--coupling", scfg.synth.coupling, "Feature/label coupling in [0,1]");
  synth->add_option("--channels", scfg.synth.n_channels, "Feature dimension");
  synth->add_option("--L", scfg.synth.delta_half_width, "Delta regression half-width (frames)");
  synth->add_option("--segment-half", scfg.synth.segment_half_window,
                    "Segment half-window Delta (frames)");
  synth->add_option("--tau", synth_tau, "Fixed burst threshold (default: calibrate)");
  synth->add_option("--target-coverage", scfg.target_coverage,
                    "Burst coverage target when calibrating");
  synth->add_option("--sessions", scfg.n_sessions, "Tag recordings with this many sessions");

  // --- label -------------------------------------------------------------
  auto* label = app.add_subcommand("label", "Label affect contours into burst/idle segments");
  cli::LabelCmdConfig lcfg;
  std::vector<std::string> label_contours;
  std::string label_out;
  double label_tau = 0.0;
  label->add_option("--contour", label_contours, "Contour CSV file(s)")->required();
  label->add_option("--out", label_out, "Output directory")->required();
  label->add_option("--frame-rate", lcfg.frame_rate_hz, "Frames per second");
  label->add_option("--L", lcfg.delta_half_width, "Delta regression half-width (frames)");
  label->add_option("--segment-half", lcfg.segment_half_window,
                    "Segment half-window Delta (frames)");
  label->add_option("--tau", label_tau, "Fixed burst threshold (default: calibrate)");
  label->add_option("--target-coverage", lcfg.target_coverage,
                    "Burst coverage target when calibrating");

  // --- stats -------------------------------------------------------------
  auto* stats = app.add_subcommand("stats", "Segment statistics from label/delta files");
  std::string stats_labels, stats_delta;
  double stats_rate = 25.0;
  stats->add_option("--labels", stats_labels, "Labels CSV (frame_index,P)")->required();
  stats->add_option("--delta", stats_delta, "Delta CSV (frame_index,delta)")->required();
  stats->add_option("--frame-rate", stats_rate, "Frames per second");

  // --- train -------------------------------------------------------------
  auto* train = app.add_subcommand("train", "Train cross-validation folds");
  cli::TrainCmdConfig tcfg;
  std::string train_manifest, train_out, train_config_file;
  std::string model_kind = "kfdcnn", strategy_name = "k_test_groups";
  int group_size = 2;
  train->add_option("--data", train_manifest, "Dataset manifest JSON")->required();
  train->add_option("--out", train_out, "Run output directory")->required();
  train->add_option("--config", train_config_file, "JSON config (model/train settings)");
  train->add_option("--model", model_kind, "ffn|cnn|dcnn|kfdcnn");
  train->add_option("--strategy", strategy_name, "k_test_groups|leave_one_session_out");
  train->add_option("--group-size", group_size, "Test group size (k_test_groups)");
  train->add_option("--seed", tcfg.train.seed, "Training seed");
  train->add_option("--epochs", tcfg.train.max_epochs, "Maximum epochs");
  train->add_option("--patience", tcfg.train.patience, "Early-stopping patience");
  train->add_option("--batch-size", tcfg.train.batch_size, "Mini-batch size");
  train->add_option("--lr", tcfg.train.lr, "Learning rate");
  train->add_option("--optimizer", tcfg.train.optimizer, "adam|sgd");
  train->add_option("--frame-stride", tcfg.train.frame_stride, "Training frame stride");
  train->add_option("--jobs", tcfg.jobs, "Parallel fold workers");
  train->add_flag("--per-fold-tau", tcfg.train.per_fold_tau,
                  "Recalibrate the burst threshold per fold");

  // --- eval --------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Evaluate trained folds on their test sets");
  cli::EvalCmdConfig ecfg;
  std::string eval_manifest, eval_run, eval_out;
  eval->add_option("--data", eval_manifest, "Dataset manifest JSON")->required();
  eval->add_option("--run", eval_run, "Training run directory")->required();
  eval->add_option("--out", eval_out, "Report output directory")->required();
  eval->add_option("--attribute", ecfg.attribute, "Attribute tag for the reports");
  eval->add_option("--jobs", ecfg.jobs, "Parallel fold workers");

  // --- gradcheck ---------------------------------------------------------
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  std::string gc_kind = "kfdcnn";
  std::uint64_t gc_seed = 0;
  gradcheck->add_option("--model", gc_kind, "ffn|cnn|dcnn|kfdcnn");
  gradcheck->add_option("--seed", gc_seed, "Seed for parameters and probe batch");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      scfg.out_dir = synth_out;
      if (synth->count("--tau")) scfg.tau = synth_tau;
      cli::cmd_synth(scfg);
      std::cout << "wrote " << scfg.count << " recordings to " << synth_out << "\n";
    } else if (*label) {
      for (const auto& p : label_contours) lcfg.contour_paths.emplace_back(p);
      lcfg.out_dir = label_out;
      if (label->count("--tau")) lcfg.tau = label_tau;
      auto res = cli::cmd_label(lcfg);
      std::cout << "tau " << res.tau << ", coverage " << res.coverage << ", labeled "
                << res.stats.size() << " contours\n";
    } else if (*stats) {
      cli::cmd_stats(stats_labels, stats_delta, stats_rate, std::cout);
    } else if (*train) {
      tcfg.manifest_path = train_manifest;
      tcfg.out_dir = train_out;
      tcfg.model = ModelConfig::defaults(model_kind_from_string(model_kind));
      if (!train_config_file.empty()) {
        auto j = load_config_file(train_config_file, {"model", "train"});
        if (j.contains("model")) tcfg.model = j["model"].get<ModelConfig>();
        if (j.contains("train")) tcfg.train = j["train"].get<TrainConfig>();
      }
      // Flags override the config file.
      if (train->count("--model"))
        tcfg.model = ModelConfig::defaults(model_kind_from_string(model_kind));
      if (train->count("--seed")) tcfg.model.seed = tcfg.train.seed;
      tcfg.folds = parse_strategy(strategy_name, group_size);
      cli::cmd_train(tcfg);
      std::cout << "trained folds written to " << train_out << "\n";
    } else if (*eval) {
      ecfg.manifest_path = eval_manifest;
      ecfg.run_dir = eval_run;
      ecfg.out_dir = eval_out;
      auto summary = cli::cmd_eval(ecfg);
      std::cout << "mean UAF1 " << summary.mean_uaf1 << ", mean UAR " << summary.mean_uar
                << " over " << summary.n_folds << " folds\n";
    } else if (*gradcheck) {
      auto cfg = ModelConfig::defaults(model_kind_from_string(gc_kind));
      auto res = cli::cmd_gradcheck(cfg, gc_seed, std::cout);
      if (res.max_rel_error >= 1e-4) {
        std::cerr << "gradient check FAILED\n";
        return 4;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
