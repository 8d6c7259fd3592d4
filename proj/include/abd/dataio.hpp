#pragma once

// Feature-frame ingestion, contour/label file IO, dilated window extraction,
// per-feature normalization and the synthetic recording generator used for
// desk-scale verification.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "abd/contour.hpp"
#include "abd/errors.hpp"
#include "abd/tensor.hpp"

namespace abd {

constexpr std::size_t kFeatureDim = 88;

struct FeatureSequence {
  Tensor2 frames;  // n_frames x dim
  double frame_rate_hz = 25.0;
  std::vector<std::string> feature_names;  // optional, empty or dim entries

  std::size_t length() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }
};

struct WindowSpec {
  int half_span = 100;  // T, frames
  int dilation = 5;     // s, frames

  int rows() const { return 2 * half_span / dilation + 1; }

  void validate() const {
    if (dilation < 1 || half_span < dilation)
      throw ConfigError("window spec requires T >= s >= 1");
    if (half_span % dilation != 0)
      throw ConfigError("window half-span T must be divisible by dilation s");
  }
};

struct WindowedExample {
  Tensor2 window;  // (2T/s + 1) x dim
  std::ptrdiff_t center_frame = 0;
  int label = 0;  // P[n]
};

struct AlignedRecording {
  FeatureSequence features;
  SegmentLabels labels;
  AffectContour contour;
  DeltaSeries delta;
  std::string id;
  std::string session;
  std::string speaker;

  std::size_t length() const { return features.length(); }

  void validate() const {
    if (features.length() != labels.values.size() ||
        features.length() != contour.values.size())
      throw DataError("recording '" + id + "': features, labels and contour lengths differ");
  }
};

// ---------------------------------------------------------------------------
// CSV / JSON IO

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace detail

// Reads a CSV of feature frames: `dim` numeric columns, optionally preceded by
// a frame-index column, optionally with a header row. NaN/Inf cells are errors.
// dim == 0 infers the width from the first data row (no index column).
inline FeatureSequence load_features(const std::filesystem::path& path,
                                     double frame_rate_hz = 25.0,
                                     std::size_t dim = kFeatureDim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open feature file: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  bool first_data_line = true;
  bool has_index_column = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    double v;
    if (first_data_line) {
      if (!detail::parse_double(cells[0], v)) continue;  // header row
      if (dim == 0)
        dim = cells.size();
      else if (cells.size() == dim + 1)
        has_index_column = true;
      else if (cells.size() != dim)
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                        std::to_string(dim) + " feature columns, got " +
                        std::to_string(cells.size()));
      first_data_line = false;
    }
    const std::size_t expect = dim + (has_index_column ? 1 : 0);
    if (cells.size() != expect)
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(expect) + " columns, got " +
                      std::to_string(cells.size()));
    std::vector<double> row(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      const auto& cell = cells[c + (has_index_column ? 1 : 0)];
      if (!detail::parse_double(cell, v))
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": non-numeric cell '" + cell + "'");
      if (!std::isfinite(v))
        throw DataError(path.string() + ":" + std::to_string(line_no) +
                        ": non-finite value '" + cell + "'");
      row[c] = v;
    }
    rows.push_back(std::move(row));
  }
  FeatureSequence seq;
  seq.frame_rate_hz = frame_rate_hz;
  seq.frames = Tensor2(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) seq.frames(r, c) = rows[r][c];
  return seq;
}

// Headered CSV with columns frame_index,value.
inline AffectContour load_contour(const std::filesystem::path& path,
                                  double frame_rate_hz = 25.0,
                                  const std::string& attribute = "arousal") {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open contour file: " + path.string());
  AffectContour contour;
  contour.frame_rate_hz = frame_rate_hz;
  contour.attribute_name = attribute;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    double idx, v;
    if (!detail::parse_double(cells[0], idx)) continue;  // header
    if (cells.size() != 2 || !detail::parse_double(cells[1], v) || !std::isfinite(v))
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected 'frame_index,value'");
    contour.values.push_back(v);
  }
  validate_contour(contour);
  return contour;
}

inline std::vector<std::uint8_t> load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open labels file: " + path.string());
  std::vector<std::uint8_t> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    double idx, v;
    if (!detail::parse_double(cells[0], idx)) continue;  // header
    if (cells.size() != 2 || !detail::parse_double(cells[1], v) || (v != 0.0 && v != 1.0))
      throw DataError(path.string() + ": expected 'frame_index,P' with P in {0,1}");
    labels.push_back(static_cast<std::uint8_t>(v));
  }
  return labels;
}

inline void write_contour_csv(const std::filesystem::path& path, const AffectContour& c) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame_index,value\n";
  char buf[64];
  for (std::size_t n = 0; n < c.values.size(); ++n) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", n, c.values[n]);
    out << buf;
  }
}

inline void write_labels_csv(const std::filesystem::path& path, const SegmentLabels& labels) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame_index,P\n";
  for (std::size_t n = 0; n < labels.values.size(); ++n)
    out << n << ',' << int(labels.values[n]) << '\n';
}

inline void write_delta_csv(const std::filesystem::path& path, const DeltaSeries& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame_index,delta\n";
  char buf[64];
  for (std::size_t n = 0; n < d.values.size(); ++n) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", n, d.values[n]);
    out << buf;
  }
}

inline void write_features_csv(const std::filesystem::path& path, const FeatureSequence& f) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (std::size_t n = 0; n < f.length(); ++n) {
    for (std::size_t c = 0; c < f.dim(); ++c) {
      std::snprintf(buf, sizeof buf, "%s%.17g", c ? "," : "", f.frames(n, c));
      out << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Windowing

// I[n]: rows F[n-T], F[n-T+s], ..., F[n+T] (2T/s + 1 rows). Indices outside
// [0, N-1] contribute zero vectors.
inline WindowedExample extract_window(const FeatureSequence& features, std::ptrdiff_t n,
                                      const WindowSpec& spec) {
  spec.validate();
  const std::ptrdiff_t n_frames = static_cast<std::ptrdiff_t>(features.length());
  const int rows = spec.rows();
  WindowedExample ex;
  ex.center_frame = n;
  ex.window = Tensor2(static_cast<std::size_t>(rows), features.dim());
  for (int r = 0; r < rows; ++r) {
    const std::ptrdiff_t src = n - spec.half_span + static_cast<std::ptrdiff_t>(r) * spec.dilation;
    if (src < 0 || src >= n_frames) continue;  // stays zero
    for (std::size_t c = 0; c < features.dim(); ++c)
      ex.window(static_cast<std::size_t>(r), c) = features.frames(static_cast<std::size_t>(src), c);
  }
  return ex;
}

// One example per frame, label P[n], in frame order.
inline std::vector<WindowedExample> make_examples(const AlignedRecording& rec,
                                                  const WindowSpec& spec) {
  rec.validate();
  std::vector<WindowedExample> out;
  out.reserve(rec.length());
  for (std::ptrdiff_t n = 0; n < static_cast<std::ptrdiff_t>(rec.length()); ++n) {
    auto ex = extract_window(rec.features, n, spec);
    ex.label = rec.labels.values[static_cast<std::size_t>(n)];
    out.push_back(std::move(ex));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // population std; 0 means passthrough

  void apply_inplace(FeatureSequence& f) const {
    if (f.dim() != mean.size()) throw DataError("normalizer dimension mismatch");
    for (std::size_t n = 0; n < f.length(); ++n)
      for (std::size_t c = 0; c < f.dim(); ++c) {
        const double s = stddev[c] > 0.0 ? stddev[c] : 1.0;
        f.frames(n, c) = (f.frames(n, c) - mean[c]) / s;
      }
  }

  void invert_inplace(FeatureSequence& f) const {
    if (f.dim() != mean.size()) throw DataError("normalizer dimension mismatch");
    for (std::size_t n = 0; n < f.length(); ++n)
      for (std::size_t c = 0; c < f.dim(); ++c) {
        const double s = stddev[c] > 0.0 ? stddev[c] : 1.0;
        f.frames(n, c) = f.frames(n, c) * s + mean[c];
      }
  }
};

inline FeatureSequence apply_normalizer(const Normalizer& nz, FeatureSequence f) {
  nz.apply_inplace(f);
  return f;
}

inline Normalizer fit_normalizer(const std::vector<const FeatureSequence*>& training) {
  std::size_t total = 0, dim = 0;
  for (const auto* f : training) {
    if (dim == 0) dim = f->dim();
    if (f->dim() != dim) throw DataError("feature dimension mismatch across recordings");
    total += f->length();
  }
  if (total < 2) throw DataError("need at least 2 training frames to fit a normalizer");
  Normalizer nz;
  nz.mean.assign(dim, 0.0);
  nz.stddev.assign(dim, 0.0);
  for (const auto* f : training)
    for (std::size_t n = 0; n < f->length(); ++n)
      for (std::size_t c = 0; c < dim; ++c) nz.mean[c] += f->frames(n, c);
  for (std::size_t c = 0; c < dim; ++c) nz.mean[c] /= static_cast<double>(total);
  for (const auto* f : training)
    for (std::size_t n = 0; n < f->length(); ++n)
      for (std::size_t c = 0; c < dim; ++c) {
        const double d = f->frames(n, c) - nz.mean[c];
        nz.stddev[c] += d * d;
      }
  for (std::size_t c = 0; c < dim; ++c) {
    nz.stddev[c] = std::sqrt(nz.stddev[c] / static_cast<double>(total));
    // Rounding can leave ~1e-16 variance on a constant column; treat as zero.
    if (nz.stddev[c] < 1e-12 * (1.0 + std::abs(nz.mean[c]))) nz.stddev[c] = 0.0;
  }
  return nz;
}

inline Normalizer fit_normalizer(const std::vector<FeatureSequence>& training) {
  std::vector<const FeatureSequence*> ptrs;
  for (const auto& f : training) ptrs.push_back(&f);
  return fit_normalizer(ptrs);
}

// ---------------------------------------------------------------------------
// Synthetic recordings

struct SynthConfig {
  std::size_t length = 5000;   // frames
  double frame_rate_hz = 25.0;
  double burst_rate = 0.08;    // sigmoid transitions per second
  double noise_level = 0.1;    // additive Gaussian sigma on every channel
  double coupling = 1.0;       // 0 = features carry no label information
  std::size_t n_channels = kFeatureDim;
  int delta_half_width = 10;     // L used for labeling and feature coupling
  int segment_half_window = 25;  // Delta
  std::vector<int> signal_lags = {-5, -2, 0, 2, 5};  // lagged-delta channels
};

// Smooth random contour: slow smoothed random walk plus sparse sigmoid
// transitions at Poisson times. Squashed with tanh to stay nominally in [-1,1].
inline AffectContour synth_contour(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.length < 2 * static_cast<std::size_t>(cfg.delta_half_width + cfg.segment_half_window) + 4)
    throw ConfigError("synth length too short for the labeling parameters");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const std::size_t n = cfg.length;
  std::vector<double> walk(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) walk[i] = walk[i - 1] + 0.01 * gauss(rng);
  // Boxcar smoothing keeps the baseline drift slow.
  const int half = 20;
  std::vector<double> smooth(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    int cnt = 0;
    for (int j = -half; j <= half; ++j) {
      const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(i) + j;
      if (k < 0 || k >= static_cast<std::ptrdiff_t>(n)) continue;
      acc += walk[static_cast<std::size_t>(k)];
      ++cnt;
    }
    smooth[i] = 0.3 * acc / cnt;
  }

  std::vector<double> e = smooth;
  const double mean_gap_frames = cfg.frame_rate_hz / std::max(cfg.burst_rate, 1e-9);
  std::exponential_distribution<double> gap(1.0 / mean_gap_frames);
  double t = gap(rng);
  while (t < static_cast<double>(n)) {
    const double amp = (0.3 + 0.5 * unif(rng)) * (unif(rng) < 0.5 ? -1.0 : 1.0);
    const double width = 4.0 + 8.0 * unif(rng);  // frames
    for (std::size_t i = 0; i < n; ++i)
      e[i] += amp / (1.0 + std::exp(-(static_cast<double>(i) - t) / width));
    t += gap(rng);
  }
  AffectContour c;
  c.frame_rate_hz = cfg.frame_rate_hz;
  c.attribute_name = "synthetic";
  c.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.values[i] = std::tanh(e[i]);
  return c;
}

// Builds a full recording for a given burst threshold. Signal channels carry
// lagged copies of d[n]/tau (and the contour itself), scaled by `coupling`,
// with additive Gaussian noise; remaining channels are pure noise.
inline AlignedRecording synth_recording(std::uint64_t seed, const SynthConfig& cfg,
                                        double tau, const std::string& id = "synth") {
  AlignedRecording rec;
  rec.id = id;
  rec.contour = synth_contour(seed, cfg);
  rec.delta = compute_delta(rec.contour, cfg.delta_half_width);
  rec.labels = extend_segments(detect_burst_points(rec.delta, tau), cfg.segment_half_window);

  const std::size_t n = cfg.length;
  const std::size_t n_signal = cfg.signal_lags.size() + 1;  // lagged deltas + contour
  if (cfg.n_channels < n_signal)
    throw ConfigError("synth config needs at least " + std::to_string(n_signal) + " channels");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> gauss(0.0, 1.0);

  rec.features.frame_rate_hz = cfg.frame_rate_hz;
  rec.features.frames = Tensor2(n, cfg.n_channels);
  const auto& d = rec.delta.values;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t ch = 0;
    for (int lag : cfg.signal_lags) {
      const std::ptrdiff_t k = std::clamp<std::ptrdiff_t>(
          static_cast<std::ptrdiff_t>(i) - lag, 0, static_cast<std::ptrdiff_t>(n) - 1);
      rec.features.frames(i, ch++) =
          cfg.coupling * d[static_cast<std::size_t>(k)] / tau + cfg.noise_level * gauss(rng);
    }
    rec.features.frames(i, ch++) =
        cfg.coupling * rec.contour.values[i] + cfg.noise_level * gauss(rng);
    for (; ch < cfg.n_channels; ++ch)
      rec.features.frames(i, ch) = cfg.noise_level * gauss(rng);
  }
  rec.validate();
  return rec;
}

// Generates `count` recordings with a shared threshold: fixed `tau` if given,
// otherwise calibrated over the whole set to `target_coverage`.
inline std::vector<AlignedRecording> synth_dataset(std::uint64_t seed, const SynthConfig& cfg,
                                                   std::size_t count,
                                                   std::optional<double> tau,
                                                   double target_coverage = 0.3) {
  std::vector<DeltaSeries> deltas;
  for (std::size_t i = 0; i < count; ++i) {
    auto contour = synth_contour(seed + i, cfg);
    deltas.push_back(compute_delta(contour, cfg.delta_half_width));
  }
  const double t =
      tau ? *tau : calibrate_threshold(deltas, cfg.segment_half_window, target_coverage);
  std::vector<AlignedRecording> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(synth_recording(seed + i, cfg, t, "synth_" + std::to_string(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string id;
  std::string features_path;
  std::string contour_path;
  std::string labels_path;  // optional
  std::string session;
  std::string speaker;
};

struct Manifest {
  std::vector<ManifestEntry> recordings;
  double frame_rate_hz = 25.0;
  int delta_half_width = 10;     // L
  int segment_half_window = 25;  // Delta
  double tau = 0.0;              // 0 = calibrate from data
  double target_coverage = 0.3;
};

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  Manifest m;
  m.frame_rate_hz = j.value("frame_rate_hz", 25.0);
  m.delta_half_width = j.value("delta_half_width", 10);
  m.segment_half_window = j.value("segment_half_window", 25);
  m.tau = j.value("tau", 0.0);
  m.target_coverage = j.value("target_coverage", 0.3);
  if (!j.contains("recordings") || !j["recordings"].is_array())
    throw DataError("manifest missing 'recordings' array");
  for (const auto& r : j["recordings"]) {
    ManifestEntry e;
    e.id = r.value("id", "");
    e.features_path = r.value("features_path", "");
    e.contour_path = r.value("contour_path", "");
    e.labels_path = r.value("labels_path", "");
    e.session = r.value("session", "");
    e.speaker = r.value("speaker", "");
    if (e.id.empty()) throw DataError("manifest entry without id");
    m.recordings.push_back(std::move(e));
  }
  return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  nlohmann::json j;
  j["frame_rate_hz"] = m.frame_rate_hz;
  j["delta_half_width"] = m.delta_half_width;
  j["segment_half_window"] = m.segment_half_window;
  j["tau"] = m.tau;
  j["target_coverage"] = m.target_coverage;
  j["recordings"] = nlohmann::json::array();
  for (const auto& e : m.recordings) {
    nlohmann::json r;
    r["id"] = e.id;
    r["features_path"] = e.features_path;
    r["contour_path"] = e.contour_path;
    if (!e.labels_path.empty()) r["labels_path"] = e.labels_path;
    if (!e.session.empty()) r["session"] = e.session;
    if (!e.speaker.empty()) r["speaker"] = e.speaker;
    j["recordings"].push_back(r);
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path.string());
  out << j.dump(2) << '\n';
}

// Loads every recording referenced by a manifest, labeling contours with the
// manifest's parameters (tau calibrated over the whole set when unset).
inline std::vector<AlignedRecording> load_recordings(const std::filesystem::path& manifest_path) {
  const Manifest m = load_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<AlignedRecording> recs;
  std::vector<DeltaSeries> deltas;
  for (const auto& e : m.recordings) {
    AlignedRecording rec;
    rec.id = e.id;
    rec.session = e.session;
    rec.speaker = e.speaker;
    rec.contour = load_contour(base / e.contour_path, m.frame_rate_hz);
    rec.features = load_features(base / e.features_path, m.frame_rate_hz, 0);
    rec.delta = compute_delta(rec.contour, m.delta_half_width);
    deltas.push_back(rec.delta);
    recs.push_back(std::move(rec));
  }
  const double tau = m.tau > 0.0
                         ? m.tau
                         : calibrate_threshold(deltas, m.segment_half_window, m.target_coverage);
  for (auto& rec : recs) {
    rec.labels = extend_segments(detect_burst_points(rec.delta, tau), m.segment_half_window);
    rec.validate();
  }
  return recs;
}

}  // namespace abd
