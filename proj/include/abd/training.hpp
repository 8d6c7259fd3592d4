#pragma once

// Cross-validation folds, the training loop (class-weighted loss, early
// stopping on validation UAF1) and checkpoint IO.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "abd/dataio.hpp"
#include "abd/errors.hpp"
#include "abd/metrics.hpp"
#include "abd/models.hpp"
#include "abd/nn.hpp"

namespace abd {

// Implementation-independent Fisher-Yates shuffle; std::shuffle leaves the
// permutation up to the library.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i)
    std::swap(v[i - 1], v[rng() % i]);
}

struct FoldSpec {
  std::string fold_id;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

struct FoldStrategy {
  enum class Kind { k_test_groups, leave_one_session_out } kind = Kind::k_test_groups;
  int group_size = 2;  // k_test_groups only
};

struct RecordingRef {
  std::string id;
  std::string session;
};

// k_test_groups: recordings in manifest order are cut into consecutive groups
// of k; each group is one fold's test set. leave_one_session_out: one fold per
// distinct session. The remaining recordings are split train/val by a seeded
// shuffle (val_fraction of them, at least one when possible).
inline std::vector<FoldSpec> make_folds(const std::vector<RecordingRef>& recs,
                                        const FoldStrategy& strategy,
                                        double val_fraction = 0.2,
                                        std::uint64_t seed = 0) {
  if (recs.empty()) throw DataError("make_folds: empty manifest");
  std::vector<std::vector<std::string>> test_sets;
  std::vector<std::string> fold_names;
  if (strategy.kind == FoldStrategy::Kind::k_test_groups) {
    const int k = strategy.group_size;
    if (k < 1 || recs.size() % static_cast<std::size_t>(k) != 0)
      throw DataError("k_test_groups: recording count " + std::to_string(recs.size()) +
                      " not divisible by group size " + std::to_string(k));
    for (std::size_t i = 0; i < recs.size(); i += static_cast<std::size_t>(k)) {
      std::vector<std::string> group;
      for (int j = 0; j < k; ++j) group.push_back(recs[i + static_cast<std::size_t>(j)].id);
      fold_names.push_back("fold" + std::to_string(test_sets.size()));
      test_sets.push_back(std::move(group));
    }
  } else {
    std::map<std::string, std::vector<std::string>> by_session;
    for (const auto& r : recs) {
      if (r.session.empty())
        throw DataError("leave_one_session_out: recording '" + r.id + "' has no session");
      by_session[r.session].push_back(r.id);
    }
    if (by_session.size() < 2) throw DataError("leave_one_session_out: need >= 2 sessions");
    for (auto& [session, ids] : by_session) {
      fold_names.push_back("session_" + session);
      test_sets.push_back(ids);
    }
  }

  std::vector<FoldSpec> folds;
  for (std::size_t f = 0; f < test_sets.size(); ++f) {
    FoldSpec fold;
    fold.fold_id = fold_names[f];
    fold.test_ids = test_sets[f];
    std::vector<std::string> rest;
    for (const auto& r : recs)
      if (std::find(fold.test_ids.begin(), fold.test_ids.end(), r.id) == fold.test_ids.end())
        rest.push_back(r.id);
    if (rest.empty()) throw DataError("fold '" + fold.fold_id + "' has no training recordings");
    deterministic_shuffle(rest, seed ^ (0x51ed2701ull + f));
    std::size_t n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(rest.size())));
    if (rest.size() >= 2) n_val = std::clamp<std::size_t>(n_val, 1, rest.size() - 1);
    else n_val = 0;
    fold.val_ids.assign(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_val));
    fold.train_ids.assign(rest.begin() + static_cast<std::ptrdiff_t>(n_val), rest.end());
    std::sort(fold.val_ids.begin(), fold.val_ids.end());
    std::sort(fold.train_ids.begin(), fold.train_ids.end());
    folds.push_back(std::move(fold));
  }
  return folds;
}

struct TrainConfig {
  std::size_t batch_size = 256;
  int max_epochs = 100;
  int patience = 10;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string optimizer = "adam";  // adam | sgd
  int frame_stride = 1;            // subsample training frames
  double val_fraction = 0.2;
  bool per_fold_tau = false;       // recalibrate tau on the fold's training set
  double target_coverage = 0.3;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},   {"max_epochs", c.max_epochs},
                     {"patience", c.patience},       {"lr", c.lr},
                     {"seed", c.seed},               {"optimizer", c.optimizer},
                     {"frame_stride", c.frame_stride}, {"val_fraction", c.val_fraction},
                     {"per_fold_tau", c.per_fold_tau}, {"target_coverage", c.target_coverage}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.frame_stride = j.value("frame_stride", c.frame_stride);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.per_fold_tau = j.value("per_fold_tau", c.per_fold_tau);
  c.target_coverage = j.value("target_coverage", c.target_coverage);
}

struct EpochRecord {
  double train_loss = 0.0;  // mean weighted NLL per frame
  double val_uaf1 = 0.0;
  double val_uar = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;  // 0-based
  std::size_t clamp_events = 0;
};

struct TrainedFold {
  Model model;
  Normalizer normalizer;
  ClassWeights weights;
  TrainHistory history;
  double tau = 0.0;  // threshold the fold's labels were generated with
};

inline ConfusionMatrix2 evaluate_recordings(const Model& model, const Normalizer& nz,
                                            const std::vector<const AlignedRecording*>& recs,
                                            const WindowSpec& window) {
  ConfusionMatrix2 cm;
  for (const auto* rec : recs) {
    FeatureSequence norm = apply_normalizer(nz, rec->features);
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(rec->length()); ++n) {
      auto ex = extract_window(norm, n, window);
      const auto p = model.forward_one(ex.window);
      const std::uint8_t pred = p[1] > p[0] ? 1 : 0;
      ++cm.counts[rec->labels.values[static_cast<std::size_t>(n)]][pred];
    }
  }
  return cm;
}

// Trains one fold: normalizer and class weights come from the fold's training
// recordings only; early stopping tracks validation UAF1. Deterministic for a
// fixed (seed, config, data) triple.
inline TrainedFold train_fold(const std::vector<AlignedRecording>& all, const FoldSpec& fold,
                              ModelConfig model_cfg, const TrainConfig& cfg) {
  auto find = [&](const std::string& id) -> const AlignedRecording* {
    for (const auto& r : all)
      if (r.id == id) return &r;
    throw DataError("fold references unknown recording '" + id + "'");
  };
  std::vector<const AlignedRecording*> train_recs, val_recs;
  for (const auto& id : fold.train_ids) train_recs.push_back(find(id));
  for (const auto& id : fold.val_ids) val_recs.push_back(find(id));
  if (train_recs.empty()) throw DataError("fold has no training recordings");

  // Optional per-fold threshold recalibration to avoid label leakage.
  std::vector<AlignedRecording> relabeled;
  double tau = 0.0;
  if (cfg.per_fold_tau) {
    std::vector<DeltaSeries> deltas;
    for (const auto* r : train_recs) deltas.push_back(r->delta);
    const int delta_half = train_recs.front()->labels.half_window;
    tau = calibrate_threshold(deltas, delta_half, cfg.target_coverage);
    auto relabel = [&](const AlignedRecording* r) {
      AlignedRecording copy = *r;
      copy.labels = extend_segments(detect_burst_points(copy.delta, tau), delta_half);
      return copy;
    };
    std::vector<const AlignedRecording*> new_train, new_val;
    for (const auto* r : train_recs) relabeled.push_back(relabel(r));
    for (const auto* r : val_recs) relabeled.push_back(relabel(r));
    for (std::size_t i = 0; i < train_recs.size(); ++i) new_train.push_back(&relabeled[i]);
    for (std::size_t i = 0; i < val_recs.size(); ++i)
      new_val.push_back(&relabeled[train_recs.size() + i]);
    train_recs = new_train;
    val_recs = new_val;
  }

  std::vector<const FeatureSequence*> train_feats;
  for (const auto* r : train_recs) train_feats.push_back(&r->features);
  const Normalizer nz = fit_normalizer(train_feats);

  std::vector<std::uint8_t> train_labels;
  for (const auto* r : train_recs)
    train_labels.insert(train_labels.end(), r->labels.values.begin(), r->labels.values.end());
  const ClassWeights cw = class_weights(train_labels);

  std::vector<FeatureSequence> norm_train;
  for (const auto* r : train_recs) norm_train.push_back(apply_normalizer(nz, r->features));

  // Frame index pool (recording, frame), optionally strided.
  std::vector<std::pair<std::size_t, std::ptrdiff_t>> pool;
  for (std::size_t ri = 0; ri < train_recs.size(); ++ri)
    for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(train_recs[ri]->length());
         n += cfg.frame_stride)
      pool.emplace_back(ri, n);

  Model model(model_cfg);
  ModelGrads grads(model);
  std::vector<AdamState> adam(model.param_blocks().size());
  const AdamConfig adam_cfg{cfg.lr, 0.9, 0.999, 1e-8};

  TrainHistory history;
  std::vector<double> best_params;
  double best_uaf1 = -1.0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    deterministic_shuffle(pool, cfg.seed ^ (0xabcd0000ull + static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    std::size_t frames_seen = 0;
    for (std::size_t start = 0; start < pool.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(pool.size(), start + cfg.batch_size);
      std::vector<WindowedExample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto [ri, n] = pool[i];
        auto ex = extract_window(norm_train[ri], n, model_cfg.window);
        ex.label = train_recs[ri]->labels.values[static_cast<std::size_t>(n)];
        batch.push_back(std::move(ex));
      }
      for (auto blk : grads.param_blocks()) std::fill(blk.begin(), blk.end(), 0.0);
      const double loss = model_backward(model, batch, cw, grads, &history.clamp_events);
      if (!std::isfinite(loss)) throw NumericError("training loss is non-finite");
      epoch_loss += loss;
      frames_seen += batch.size();
      grads.scale(1.0 / static_cast<double>(batch.size()));
      auto pblocks = model.param_blocks();
      auto gblocks = grads.param_blocks();
      for (std::size_t b = 0; b < pblocks.size(); ++b) {
        if (cfg.optimizer == "sgd")
          sgd_step(pblocks[b], gblocks[b], cfg.lr);
        else
          adam_step(pblocks[b], gblocks[b], adam[b], adam_cfg);
      }
    }

    EpochRecord rec;
    rec.train_loss = frames_seen ? epoch_loss / static_cast<double>(frames_seen) : 0.0;
    if (!val_recs.empty()) {
      const auto cm = evaluate_recordings(model, nz, val_recs, model_cfg.window);
      rec.val_uaf1 = uaf1(cm);
      rec.val_uar = uar(cm);
    }
    history.epochs.push_back(rec);

    if (rec.val_uaf1 > best_uaf1) {
      best_uaf1 = rec.val_uaf1;
      history.best_epoch = epoch;
      best_params = model.flat_params();
    }
    if (epoch - history.best_epoch > cfg.patience) break;
  }
  if (!best_params.empty()) model.set_flat_params(best_params);
  return TrainedFold{std::move(model), nz, cw, std::move(history), tau};
}

// ---------------------------------------------------------------------------
// Checkpoints: one line of JSON (version, model config, normalizer, seed,
// epoch, parameter count) followed by the flat parameter block as raw
// little-endian 64-bit floats in param_blocks() order.

constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const Normalizer& nz, std::uint64_t seed, int epoch) {
  nlohmann::json header;
  header["version"] = kCheckpointVersion;
  header["model"] = model.cfg;
  header["normalizer_mean"] = nz.mean;
  header["normalizer_std"] = nz.stddev;
  header["seed"] = seed;
  header["epoch"] = epoch;
  header["param_count"] = model.param_count();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path.string());
  out << header.dump() << '\n';
  const auto flat = model.flat_params();
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!out) throw DataError("checkpoint write failed: " + path.string());
}

struct Checkpoint {
  Model model;
  Normalizer normalizer;
  std::uint64_t seed = 0;
  int epoch = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("corrupt checkpoint (missing header): " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("version", -1) != kCheckpointVersion)
    throw DataError("checkpoint version mismatch (expected " +
                    std::to_string(kCheckpointVersion) + ", got " +
                    header["version"].dump() + ")");
  ModelConfig cfg = header.at("model").get<ModelConfig>();
  Checkpoint ck{Model(cfg), Normalizer{}, header.value("seed", std::uint64_t{0}),
                header.value("epoch", 0)};
  ck.normalizer.mean = header.at("normalizer_mean").get<std::vector<double>>();
  ck.normalizer.stddev = header.at("normalizer_std").get<std::vector<double>>();
  const std::size_t count = header.at("param_count").get<std::size_t>();
  if (count != ck.model.param_count())
    throw DataError("checkpoint parameter count does not match its model config");
  std::vector<double> flat(count);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
    throw DataError("corrupt checkpoint (truncated parameter block): " + path.string());
  ck.model.set_flat_params(flat);
  return ck;
}

inline void write_history_csv(const std::filesystem::path& path, const TrainHistory& h) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,val_uaf1,val_uar\n";
  char buf[128];
  for (std::size_t e = 0; e < h.epochs.size(); ++e) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", e, h.epochs[e].train_loss,
                  h.epochs[e].val_uaf1, h.epochs[e].val_uar);
    out << buf;
  }
}

}  // namespace abd
