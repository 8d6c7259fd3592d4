#pragma once

// Command implementations behind the abd tool: synth, label, stats, train,
// eval, gradcheck. Everything is deterministic given the configured seed so
// reruns produce byte-identical outputs.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "abd/contour.hpp"
#include "abd/dataio.hpp"
#include "abd/errors.hpp"
#include "abd/metrics.hpp"
#include "abd/models.hpp"
#include "abd/training.hpp"

namespace abd::cli {

namespace fs = std::filesystem;

constexpr const char* kToolVersion = "1.0.0";

inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline void write_run_manifest(const fs::path& dir, const nlohmann::json& config) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["checkpoint_version"] = kCheckpointVersion;
  j["config"] = config;
  j["config_hash"] = fnv1a_hex(config.dump());
  std::ofstream out(dir / "run_manifest.json");
  if (!out) throw DataError("cannot write run manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// synth

struct SynthCmdConfig {
  SynthConfig synth;
  std::size_t count = 6;
  std::uint64_t seed = 0;
  std::optional<double> tau;  // unset: calibrate to target_coverage
  double target_coverage = 0.3;
  int n_sessions = 0;  // 0 = no session tags
  fs::path out_dir;
};

inline Manifest cmd_synth(const SynthCmdConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  auto recs = synth_dataset(cfg.seed, cfg.synth, cfg.count, cfg.tau, cfg.target_coverage);

  Manifest m;
  m.frame_rate_hz = cfg.synth.frame_rate_hz;
  m.delta_half_width = cfg.synth.delta_half_width;
  m.segment_half_window = cfg.synth.segment_half_window;
  m.target_coverage = cfg.target_coverage;
  // All recordings share one threshold; record the one generation used.
  {
    std::vector<DeltaSeries> deltas;
    for (const auto& r : recs) deltas.push_back(r.delta);
    m.tau = cfg.tau ? *cfg.tau
                    : calibrate_threshold(deltas, cfg.synth.segment_half_window,
                                          cfg.target_coverage);
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto& r = recs[i];
    write_features_csv(cfg.out_dir / (r.id + ".features.csv"), r.features);
    write_contour_csv(cfg.out_dir / (r.id + ".contour.csv"), r.contour);
    write_labels_csv(cfg.out_dir / (r.id + ".labels.csv"), r.labels);
    ManifestEntry e;
    e.id = r.id;
    e.features_path = r.id + ".features.csv";
    e.contour_path = r.id + ".contour.csv";
    e.labels_path = r.id + ".labels.csv";
    if (cfg.n_sessions > 0)
      e.session = "s" + std::to_string(i % static_cast<std::size_t>(cfg.n_sessions));
    m.recordings.push_back(std::move(e));
  }
  save_manifest(cfg.out_dir / "manifest.json", m);

  nlohmann::json config;
  config["command"] = "synth";
  config["seed"] = cfg.seed;
  config["count"] = cfg.count;
  config["length"] = cfg.synth.length;
  config["burst_rate"] = cfg.synth.burst_rate;
  config["noise_level"] = cfg.synth.noise_level;
  config["coupling"] = cfg.synth.coupling;
  config["n_channels"] = cfg.synth.n_channels;
  config["tau"] = m.tau;
  write_run_manifest(cfg.out_dir, config);
  return m;
}

// ---------------------------------------------------------------------------
// label / stats

struct LabelCmdConfig {
  std::vector<fs::path> contour_paths;
  double frame_rate_hz = 25.0;
  int delta_half_width = 10;     // L
  int segment_half_window = 25;  // Delta
  std::optional<double> tau;     // unset: calibrate over all inputs
  double target_coverage = 0.3;
  fs::path out_dir;
};

struct LabelResult {
  double tau = 0.0;
  double coverage = 0.0;
  std::vector<SegmentStats> stats;
};

inline LabelResult cmd_label(const LabelCmdConfig& cfg) {
  if (cfg.contour_paths.empty()) throw ConfigError("label: no contour files given");
  fs::create_directories(cfg.out_dir);
  std::vector<AffectContour> contours;
  std::vector<DeltaSeries> deltas;
  for (const auto& p : cfg.contour_paths) {
    contours.push_back(load_contour(p, cfg.frame_rate_hz));
    deltas.push_back(compute_delta(contours.back(), cfg.delta_half_width));
  }
  LabelResult res;
  if (cfg.tau) {
    res.tau = *cfg.tau;
  } else {
    res.tau = calibrate_threshold(deltas, cfg.segment_half_window, cfg.target_coverage);
  }
  std::size_t covered = 0, total = 0;
  for (std::size_t i = 0; i < contours.size(); ++i) {
    const auto labels =
        extend_segments(detect_burst_points(deltas[i], res.tau), cfg.segment_half_window);
    for (auto v : labels.values) covered += v;
    total += labels.values.size();
    const auto stem = cfg.contour_paths[i].stem().string();
    write_labels_csv(cfg.out_dir / (stem + ".labels.csv"), labels);
    write_delta_csv(cfg.out_dir / (stem + ".delta.csv"), deltas[i]);
    res.stats.push_back(segment_stats(labels, deltas[i], cfg.frame_rate_hz));
  }
  res.coverage = static_cast<double>(covered) / static_cast<double>(total);

  nlohmann::json meta;
  meta["tau"] = res.tau;
  meta["delta_half_width"] = cfg.delta_half_width;
  meta["segment_half_window"] = cfg.segment_half_window;
  meta["coverage"] = res.coverage;
  meta["frame_rate_hz"] = cfg.frame_rate_hz;
  std::ofstream out(cfg.out_dir / "labeling.json");
  out << meta.dump(2) << '\n';
  return res;
}

inline SegmentStats cmd_stats(const fs::path& labels_csv, const fs::path& delta_csv,
                              double frame_rate_hz, std::ostream& os) {
  SegmentLabels labels;
  labels.values = load_labels_csv(labels_csv);
  DeltaSeries delta;
  {
    std::ifstream in(delta_csv);
    if (!in) throw DataError("cannot open delta file: " + delta_csv.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto cells = detail::split_csv_line(line);
      double idx, v;
      if (!detail::parse_double(cells[0], idx)) continue;
      if (cells.size() != 2 || !detail::parse_double(cells[1], v))
        throw DataError(delta_csv.string() + ": expected 'frame_index,delta'");
      delta.values.push_back(v);
    }
  }
  const auto st = segment_stats(labels, delta, frame_rate_hz);
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "segments: %zu\nmean duration (s): %.4f\ntotal duration (s): %.4f\n"
                "mean |d| of segments: %.6g\ntotal recording duration (s): %.4f\n",
                st.n_segments, st.mean_duration_s, st.total_duration_s, st.mean_abs_delta,
                st.total_duration_recording_s);
  os << buf;
  return st;
}

// ---------------------------------------------------------------------------
// train / eval

struct TrainCmdConfig {
  fs::path manifest_path;
  ModelConfig model = ModelConfig::defaults(ModelKind::kfdcnn);
  TrainConfig train;
  FoldStrategy folds;
  fs::path out_dir;
  int jobs = 1;
};

inline std::vector<FoldSpec> manifest_folds(const Manifest& m, const FoldStrategy& strategy,
                                            double val_fraction, std::uint64_t seed) {
  std::vector<RecordingRef> refs;
  for (const auto& e : m.recordings) refs.push_back({e.id, e.session});
  return make_folds(refs, strategy, val_fraction, seed);
}

inline void cmd_train(const TrainCmdConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const Manifest manifest = load_manifest(cfg.manifest_path);
  const auto recordings = load_recordings(cfg.manifest_path);
  const auto folds = manifest_folds(manifest, cfg.folds, cfg.train.val_fraction, cfg.train.seed);

  // The input width is a property of the data, not a tunable.
  ModelConfig model_cfg = cfg.model;
  if (!recordings.empty()) model_cfg.in_dim = recordings.front().features.dim();
  model_cfg.validate();

  std::vector<std::optional<TrainedFold>> results(folds.size());
  auto run_fold = [&](std::size_t f) {
    results[f] = train_fold(recordings, folds[f], model_cfg, cfg.train);
  };
  if (cfg.jobs <= 1) {
    for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
  } else {
    std::vector<std::future<void>> futures;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < std::min<int>(cfg.jobs, static_cast<int>(folds.size())); ++t)
      futures.push_back(std::async(std::launch::async, [&] {
        for (std::size_t f = next.fetch_add(1); f < folds.size(); f = next.fetch_add(1))
          run_fold(f);
      }));
    for (auto& fu : futures) fu.get();
  }

  nlohmann::json folds_json = nlohmann::json::array();
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    const auto& res = *results[f];
    save_checkpoint(cfg.out_dir / (fold.fold_id + ".ckpt"), res.model, res.normalizer,
                    cfg.train.seed, res.history.best_epoch);
    write_history_csv(cfg.out_dir / (fold.fold_id + ".history.csv"), res.history);
    nlohmann::json jf;
    jf["fold_id"] = fold.fold_id;
    jf["train_ids"] = fold.train_ids;
    jf["val_ids"] = fold.val_ids;
    jf["test_ids"] = fold.test_ids;
    jf["best_epoch"] = res.history.best_epoch;
    jf["epochs_run"] = res.history.epochs.size();
    jf["clamp_events"] = res.history.clamp_events;
    folds_json.push_back(jf);
  }
  std::ofstream out(cfg.out_dir / "folds.json");
  out << folds_json.dump(2) << '\n';

  nlohmann::json config;
  config["command"] = "train";
  config["model"] = model_cfg;
  config["train"] = cfg.train;
  config["fold_strategy"] =
      cfg.folds.kind == FoldStrategy::Kind::k_test_groups ? "k_test_groups"
                                                          : "leave_one_session_out";
  config["fold_group_size"] = cfg.folds.group_size;
  write_run_manifest(cfg.out_dir, config);
}

struct EvalCmdConfig {
  fs::path manifest_path;
  fs::path run_dir;  // output of cmd_train
  fs::path out_dir;
  std::string attribute = "synthetic";
  int jobs = 1;
};

inline Summary cmd_eval(const EvalCmdConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const auto recordings = load_recordings(cfg.manifest_path);
  std::ifstream fin(cfg.run_dir / "folds.json");
  if (!fin) throw DataError("cannot open folds.json in " + cfg.run_dir.string());
  nlohmann::json folds_json;
  fin >> folds_json;

  std::vector<FoldReport> reports(folds_json.size());
  std::string model_kind = "unknown";
  auto run_fold = [&](std::size_t f) {
    const auto& jf = folds_json[f];
    const std::string fold_id = jf.at("fold_id").get<std::string>();
    auto ck = load_checkpoint(cfg.run_dir / (fold_id + ".ckpt"));
    std::vector<const AlignedRecording*> test;
    for (const auto& id : jf.at("test_ids").get<std::vector<std::string>>()) {
      const AlignedRecording* found = nullptr;
      for (const auto& r : recordings)
        if (r.id == id) found = &r;
      if (!found) throw DataError("eval: test recording '" + id + "' not in manifest");
      test.push_back(found);
    }
    FoldReport rep;
    rep.fold_id = fold_id;
    rep.attribute = cfg.attribute;
    rep.cm = evaluate_recordings(ck.model, ck.normalizer, test, ck.model.cfg.window);
    reports[f] = rep;
    model_kind = to_string(ck.model.cfg.kind);
  };
  if (cfg.jobs <= 1) {
    for (std::size_t f = 0; f < reports.size(); ++f) run_fold(f);
  } else {
    std::vector<std::future<void>> futures;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < std::min<int>(cfg.jobs, static_cast<int>(reports.size())); ++t)
      futures.push_back(std::async(std::launch::async, [&] {
        for (std::size_t f = next.fetch_add(1); f < reports.size(); f = next.fetch_add(1))
          run_fold(f);
      }));
    for (auto& fu : futures) fu.get();
  }

  const Summary summary = aggregate(reports);
  nlohmann::json jr = nlohmann::json::array();
  for (const auto& r : reports) jr.push_back(r);
  std::ofstream rout(cfg.out_dir / "fold_reports.json");
  rout << jr.dump(2) << '\n';
  nlohmann::json js = summary;
  std::ofstream sout(cfg.out_dir / "summary.json");
  sout << js.dump(2) << '\n';

  std::ofstream csv(cfg.out_dir / "report.csv");
  csv << "model,attribute,fold,uaf1,uar\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.17g,%.17g\n", model_kind.c_str(),
                  r.attribute.c_str(), r.fold_id.c_str(), r.uaf1(), r.uar());
    csv << buf;
  }
  return summary;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t params_checked = 0;
  std::size_t param_count = 0;
};

inline GradCheckResult cmd_gradcheck(ModelConfig model_cfg, std::uint64_t seed,
                                     std::ostream& os) {
  model_cfg.seed = seed;
  Model model(model_cfg);
  std::mt19937_64 rng(seed ^ 0x5eedull);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<WindowedExample> batch;
  for (int i = 0; i < 2; ++i) {
    WindowedExample ex;
    const int rows = model_cfg.kind == ModelKind::ffn ? 3 : model_cfg.window.rows();
    ex.window = Tensor2(static_cast<std::size_t>(rows), model_cfg.in_dim);
    for (double& v : ex.window.data()) v = g(rng);
    ex.label = i % 2;
    batch.push_back(std::move(ex));
  }
  GradCheckResult res;
  res.param_count = model.param_count();
  res.params_checked = std::min<std::size_t>(res.param_count, 400);
  res.max_rel_error = grad_check_model(model, batch, ClassWeights{1.0, 2.0}, 1e-5, 400, seed);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "%s: max relative gradient error %.3e over %zu of %zu parameters\n",
                to_string(model.cfg.kind).c_str(), res.max_rel_error, res.params_checked,
                res.param_count);
  os << buf;
  return res;
}

}  // namespace abd::cli
