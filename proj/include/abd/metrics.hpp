#pragma once

// Frame-level confusion matrices, per-class precision/recall/F1, UAR/UAF1 and
// fold aggregation.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "abd/errors.hpp"

namespace abd {

struct ConfusionMatrix2 {
  // counts[truth][pred]
  std::array<std::array<std::size_t, 2>, 2> counts{{{0, 0}, {0, 0}}};

  std::size_t total() const {
    return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
  }
  std::size_t true_count(int c) const { return counts[c][0] + counts[c][1]; }
  std::size_t pred_count(int c) const { return counts[0][c] + counts[1][c]; }

  ConfusionMatrix2& operator+=(const ConfusionMatrix2& o) {
    for (int t = 0; t < 2; ++t)
      for (int p = 0; p < 2; ++p) counts[t][p] += o.counts[t][p];
    return *this;
  }
};

inline ConfusionMatrix2 confusion(std::span<const std::uint8_t> truth,
                                  std::span<const std::uint8_t> pred) {
  if (truth.size() != pred.size()) throw DataError("confusion: length mismatch");
  if (truth.empty()) throw DataError("confusion: empty sequences");
  ConfusionMatrix2 cm;
  for (std::size_t n = 0; n < truth.size(); ++n) ++cm.counts[truth[n]][pred[n]];
  return cm;
}

// Zero-division conventions: recall/precision with an empty denominator are 0;
// F1 with zero precision+recall is 0.
inline double recall(const ConfusionMatrix2& cm, int c) {
  const std::size_t denom = cm.true_count(c);
  return denom ? static_cast<double>(cm.counts[c][c]) / static_cast<double>(denom) : 0.0;
}

inline double precision(const ConfusionMatrix2& cm, int c) {
  const std::size_t denom = cm.pred_count(c);
  return denom ? static_cast<double>(cm.counts[c][c]) / static_cast<double>(denom) : 0.0;
}

inline double f1(const ConfusionMatrix2& cm, int c) {
  const double p = precision(cm, c), r = recall(cm, c);
  return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

inline double uar(const ConfusionMatrix2& cm) { return 0.5 * (recall(cm, 0) + recall(cm, 1)); }
inline double uaf1(const ConfusionMatrix2& cm) { return 0.5 * (f1(cm, 0) + f1(cm, 1)); }

struct FoldReport {
  ConfusionMatrix2 cm;
  std::string fold_id;
  std::string attribute;

  double uar() const { return abd::uar(cm); }
  double uaf1() const { return abd::uaf1(cm); }
};

inline void to_json(nlohmann::json& j, const FoldReport& r) {
  j = nlohmann::json{{"fold_id", r.fold_id},
                     {"attribute", r.attribute},
                     {"confusion",
                      {{"tn", r.cm.counts[0][0]},
                       {"fp", r.cm.counts[0][1]},
                       {"fn", r.cm.counts[1][0]},
                       {"tp", r.cm.counts[1][1]}}},
                     {"precision", {precision(r.cm, 0), precision(r.cm, 1)}},
                     {"recall", {recall(r.cm, 0), recall(r.cm, 1)}},
                     {"f1", {f1(r.cm, 0), f1(r.cm, 1)}},
                     {"uaf1", r.uaf1()},
                     {"uar", r.uar()}};
}

struct Summary {
  double mean_uaf1 = 0.0;
  double mean_uar = 0.0;
  double pooled_uaf1 = 0.0;
  double pooled_uar = 0.0;
  std::size_t n_folds = 0;
};

// Both mean-over-folds and pooled-frame recomputation are reported.
inline Summary aggregate(const std::vector<FoldReport>& reports) {
  if (reports.empty()) throw DataError("aggregate: no fold reports");
  Summary s;
  s.n_folds = reports.size();
  ConfusionMatrix2 pooled;
  for (const auto& r : reports) {
    s.mean_uaf1 += r.uaf1();
    s.mean_uar += r.uar();
    pooled += r.cm;
  }
  s.mean_uaf1 /= static_cast<double>(reports.size());
  s.mean_uar /= static_cast<double>(reports.size());
  s.pooled_uaf1 = uaf1(pooled);
  s.pooled_uar = uar(pooled);
  return s;
}

inline void to_json(nlohmann::json& j, const Summary& s) {
  j = nlohmann::json{{"n_folds", s.n_folds},
                     {"mean_uaf1", s.mean_uaf1},
                     {"mean_uar", s.mean_uar},
                     {"pooled_uaf1", s.pooled_uaf1},
                     {"pooled_uar", s.pooled_uar}};
}

}  // namespace abd
