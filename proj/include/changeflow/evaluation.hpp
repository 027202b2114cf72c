#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "changeflow/grid.hpp"

namespace changeflow {

/// Change-class scores with pixels pooled over a collection.
struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mae = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
};

/// Pooled precision, recall and F1; a zero denominator gives 0. mae is left 0.
MetricsReport binary_prf(std::span<const BinaryMask> pred, std::span<const BinaryMask> gt);

/// Mean absolute error of soft predictions against binary ground truth.
double mae(std::span<const SoftMask> pred, std::span<const BinaryMask> gt);

enum class Connectivity { four = 4, eight = 8 };

inline constexpr int kDefaultMinArea = 10;

/// Foreground components whose area exceeds `min_area` (area > min_area).
int count_components(const BinaryMask& mask, int min_area = kDefaultMinArea,
                     Connectivity connectivity = Connectivity::four);

/// Background components that touch no image border and whose area exceeds
/// `min_area`.
int count_holes(const BinaryMask& mask, int min_area = kDefaultMinArea, Connectivity connectivity = Connectivity::four);

struct CoherenceReport {
  /// Mean over samples of |#CC(pred) - #CC(gt)|.
  double cc_deviation = 0.0;
  /// Mean over samples of |#holes(pred) - #holes(gt)|.
  double hole_deviation = 0.0;
  int min_area = kDefaultMinArea;
  std::vector<int> pred_components, gt_components, pred_holes, gt_holes;
};

CoherenceReport coherence_report(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts,
                                 int min_area = kDefaultMinArea, Connectivity connectivity = Connectivity::four);

/// Area under the ROC curve of `scores` for predicting `targets` (1 = positive),
/// Mann-Whitney form with midranks for ties. Empty when one class is absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> targets);

/// Error AUROC: target 1 where pred != gt, score 1 - max(conf, 1 - conf), so
/// undecided pixels are expected to be the wrong ones.
std::optional<double> error_auroc(std::span<const SoftMask> conf, std::span<const BinaryMask> pred,
                                  std::span<const BinaryMask> gt);

struct SweepRow {
  double theta = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Binarises each confidence map at every theta and scores against gt.
std::vector<SweepRow> threshold_sweep(std::span<const SoftMask> conf, std::span<const BinaryMask> gt,
                                      std::span<const double> thetas);

/// Row with the highest F1; the smallest theta wins ties.
SweepRow best_threshold(std::span<const SweepRow> rows);

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);
void write_coherence_csv(const std::filesystem::path& path, const CoherenceReport& report);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace changeflow
