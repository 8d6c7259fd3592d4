#pragma once

// Ground-truth labeling of affect contours: delta regression coefficients,
// burst-point thresholding, segment extension, threshold calibration and
// segment statistics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "abd/errors.hpp"

namespace abd {

struct AffectContour {
  std::vector<double> values;  // e[n]
  double frame_rate_hz = 25.0;
  std::string attribute_name = "arousal";
};

struct DeltaSeries {
  std::vector<double> values;  // d[n], same length as source contour
  int half_width = 0;          // L, frames
};

struct BurstPointSeries {
  std::vector<std::uint8_t> values;  // p[n] in {0,1}
  double threshold = 0.0;            // tau
};

struct SegmentLabels {
  std::vector<std::uint8_t> values;  // P[n] in {0,1}
  int half_window = 0;               // Delta, frames
  int segment_window_frames() const { return 2 * half_window + 1; }  // w_s
};

struct SegmentStats {
  std::size_t n_segments = 0;
  double mean_duration_s = 0.0;
  double total_duration_s = 0.0;
  double mean_abs_delta = 0.0;
  double total_duration_recording_s = 0.0;
};

inline void validate_contour(const AffectContour& c) {
  if (c.values.empty()) throw DataError("contour is empty");
  if (!(c.frame_rate_hz > 0.0)) throw DataError("frame_rate_hz must be > 0");
  for (std::size_t n = 0; n < c.values.size(); ++n) {
    if (!std::isfinite(c.values[n]))
      throw DataError("non-finite contour value at frame " + std::to_string(n));
  }
}

// First-order regression slope over a +/-L frame window. Out-of-range samples
// replicate the edge values so the output has the same length as the input.
inline DeltaSeries compute_delta(const AffectContour& contour, int half_width) {
  if (half_width < 1) throw ConfigError("delta half-width L must be >= 1");
  validate_contour(contour);
  const auto& e = contour.values;
  const std::ptrdiff_t n_frames = static_cast<std::ptrdiff_t>(e.size());
  auto at = [&](std::ptrdiff_t k) {
    return e[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, n_frames - 1))];
  };
  double denom = 0.0;
  for (int l = 1; l <= half_width; ++l) denom += static_cast<double>(l) * l;
  denom *= 2.0;

  DeltaSeries out;
  out.half_width = half_width;
  out.values.resize(e.size());
  for (std::ptrdiff_t n = 0; n < n_frames; ++n) {
    double num = 0.0;
    for (int l = 1; l <= half_width; ++l)
      num += (at(n + l) - at(n - l)) * static_cast<double>(l);
    out.values[static_cast<std::size_t>(n)] = num / denom;
  }
  return out;
}

// p[n] = 1 iff |d[n]| >= tau. The boundary is inclusive.
inline BurstPointSeries detect_burst_points(const DeltaSeries& delta, double tau) {
  if (!(tau > 0.0)) throw ConfigError("threshold tau must be > 0");
  BurstPointSeries out;
  out.threshold = tau;
  out.values.resize(delta.values.size());
  for (std::size_t n = 0; n < delta.values.size(); ++n)
    out.values[n] = std::abs(delta.values[n]) >= tau ? 1 : 0;
  return out;
}

// P[n] = 1 iff some burst point lies within +/-delta_half frames of n.
// Windows clip at the sequence boundaries; overlapping windows merge.
inline SegmentLabels extend_segments(const BurstPointSeries& points, int delta_half) {
  if (delta_half < 0) throw ConfigError("segment half-window must be >= 0");
  const std::ptrdiff_t n_frames = static_cast<std::ptrdiff_t>(points.values.size());
  SegmentLabels out;
  out.half_window = delta_half;
  out.values.assign(points.values.size(), 0);
  for (std::ptrdiff_t m = 0; m < n_frames; ++m) {
    if (!points.values[static_cast<std::size_t>(m)]) continue;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, m - delta_half);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n_frames - 1, m + delta_half);
    std::fill(out.values.begin() + lo, out.values.begin() + hi + 1, std::uint8_t{1});
  }
  return out;
}

// Fraction of frames labeled 1 after extension, across all series.
inline double extended_coverage(const std::vector<DeltaSeries>& deltas, int delta_half,
                                double tau) {
  std::size_t covered = 0, total = 0;
  for (const auto& d : deltas) {
    const auto labels = extend_segments(detect_burst_points(d, tau), delta_half);
    for (auto v : labels.values) covered += v;
    total += labels.values.size();
  }
  if (total == 0) throw DataError("no frames to calibrate over");
  return static_cast<double>(covered) / static_cast<double>(total);
}

// Picks tau from the distinct nonzero |d| values so that the post-extension
// coverage is closest to target_coverage. Coverage is a non-increasing step
// function of tau, so a binary search over the sorted candidates finds the
// crossing; ties go to the larger tau.
inline double calibrate_threshold(const std::vector<DeltaSeries>& deltas, int delta_half,
                                  double target_coverage) {
  if (!(target_coverage > 0.0 && target_coverage < 1.0))
    throw ConfigError("target coverage must lie in (0,1)");
  std::vector<double> candidates;
  for (const auto& d : deltas)
    for (double v : d.values)
      if (std::abs(v) > 0.0) candidates.push_back(std::abs(v));
  if (candidates.empty()) throw DataError("all delta values are zero; cannot calibrate");
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Largest candidate index with coverage >= target (coverage decreases with
  // the index). -1 if even the smallest tau undershoots.
  std::ptrdiff_t lo = -1, hi = static_cast<std::ptrdiff_t>(candidates.size());
  if (extended_coverage(deltas, delta_half, candidates.front()) >= target_coverage) {
    lo = 0;
    while (hi - lo > 1) {
      const std::ptrdiff_t mid = lo + (hi - lo) / 2;
      if (extended_coverage(deltas, delta_half, candidates[static_cast<std::size_t>(mid)]) >=
          target_coverage)
        lo = mid;
      else
        hi = mid;
    }
  }

  double best_tau = 0.0, best_err = 0.0;
  bool have = false;
  for (std::ptrdiff_t i : {lo, hi}) {
    if (i < 0 || i >= static_cast<std::ptrdiff_t>(candidates.size())) continue;
    const double tau = candidates[static_cast<std::size_t>(i)];
    const double err = std::abs(extended_coverage(deltas, delta_half, tau) - target_coverage);
    if (!have || err < best_err || (err == best_err && tau > best_tau)) {
      best_tau = tau;
      best_err = err;
      have = true;
    }
  }
  return best_tau;
}

inline SegmentStats segment_stats(const SegmentLabels& labels, const DeltaSeries& delta,
                                  double frame_rate_hz) {
  if (labels.values.size() != delta.values.size())
    throw DataError("labels and delta series differ in length");
  if (!(frame_rate_hz > 0.0)) throw DataError("frame_rate_hz must be > 0");
  SegmentStats st;
  st.total_duration_recording_s = static_cast<double>(labels.values.size()) / frame_rate_hz;
  std::size_t burst_frames = 0;
  double abs_delta_sum = 0.0;
  bool in_run = false;
  for (std::size_t n = 0; n < labels.values.size(); ++n) {
    if (labels.values[n]) {
      if (!in_run) ++st.n_segments;
      in_run = true;
      ++burst_frames;
      abs_delta_sum += std::abs(delta.values[n]);
    } else {
      in_run = false;
    }
  }
  st.total_duration_s = static_cast<double>(burst_frames) / frame_rate_hz;
  st.mean_duration_s =
      st.n_segments ? st.total_duration_s / static_cast<double>(st.n_segments) : 0.0;
  st.mean_abs_delta = burst_frames ? abs_delta_sum / static_cast<double>(burst_frames) : 0.0;
  return st;
}

inline SegmentLabels label_pipeline(const AffectContour& contour, int half_width,
                                    int delta_half, double tau) {
  return extend_segments(detect_burst_points(compute_delta(contour, half_width), tau),
                         delta_half);
}

}  // namespace abd
