#include "changeflow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "changeflow/inference.hpp"

namespace changeflow {

namespace {

template <typename A, typename B>
void require_same_extent(const A& a, const B& b, const char* what) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw InvalidShape(std::string(what) + ": " + std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                       " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
  }
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

void fill_scores(MetricsReport& r) {
  r.precision = ratio(r.tp, r.tp + r.fp);
  r.recall = ratio(r.tp, r.tp + r.fn);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

/// Union-find over pixel indices.
class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t i) {
    while (parent_[i] != i) {
      parent_[i] = parent_[parent_[i]];
      i = parent_[i];
    }
    return i;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

  std::size_t size(std::size_t root) const { return size_[root]; }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

/// Counts components of pixels equal to `value` with area > min_area,
/// optionally dropping those touching the border.
int count_regions(const BinaryMask& mask, std::uint8_t value, int min_area, Connectivity connectivity,
                  bool drop_border) {
  const int h = mask.height(), w = mask.width();
  DisjointSet sets(mask.size());
  auto idx = [w](int y, int x) { return static_cast<std::size_t>(y) * w + x; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (mask(y, x) != value) continue;
      // Earlier neighbours in raster order.
      if (x > 0 && mask(y, x - 1) == value) sets.unite(idx(y, x), idx(y, x - 1));
      if (y > 0 && mask(y - 1, x) == value) sets.unite(idx(y, x), idx(y - 1, x));
      if (connectivity == Connectivity::eight && y > 0) {
        if (x > 0 && mask(y - 1, x - 1) == value) sets.unite(idx(y, x), idx(y - 1, x - 1));
        if (x + 1 < w && mask(y - 1, x + 1) == value) sets.unite(idx(y, x), idx(y - 1, x + 1));
      }
    }
  }
  std::vector<std::uint8_t> touches(mask.size(), 0);
  if (drop_border) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if ((y == 0 || x == 0 || y == h - 1 || x == w - 1) && mask(y, x) == value) touches[sets.find(idx(y, x))] = 1;
      }
    }
  }
  int count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = idx(y, x);
      if (mask(y, x) != value || sets.find(i) != i) continue;
      if (touches[i] == 0 && sets.size(i) > static_cast<std::size_t>(min_area)) ++count;
    }
  }
  return count;
}

}  // namespace

MetricsReport binary_prf(std::span<const BinaryMask> pred, std::span<const BinaryMask> gt) {
  if (pred.size() != gt.size()) throw InvalidShape("binary_prf: prediction and ground-truth counts differ");
  MetricsReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require_same_extent(pred[i], gt[i], "binary_prf");
    const auto p = pred[i].values();
    const auto g = gt[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const bool a = p[k] != 0, b = g[k] != 0;
      r.tp += a && b;
      r.fp += a && !b;
      r.fn += !a && b;
      r.tn += !a && !b;
    }
  }
  fill_scores(r);
  return r;
}

double mae(std::span<const SoftMask> pred, std::span<const BinaryMask> gt) {
  if (pred.size() != gt.size()) throw InvalidShape("mae: prediction and ground-truth counts differ");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    require_same_extent(pred[i], gt[i], "mae");
    for (std::size_t k = 0; k < gt[i].size(); ++k) {
      sum += std::abs(static_cast<double>(pred[i].values()[k]) - gt[i].values()[k]);
    }
    count += gt[i].size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

int count_components(const BinaryMask& mask, int min_area, Connectivity connectivity) {
  return count_regions(mask, 1, min_area, connectivity, false);
}

int count_holes(const BinaryMask& mask, int min_area, Connectivity connectivity) {
  return count_regions(mask, 0, min_area, connectivity, true);
}

CoherenceReport coherence_report(std::span<const BinaryMask> preds, std::span<const BinaryMask> gts, int min_area,
                                 Connectivity connectivity) {
  if (preds.size() != gts.size()) throw InvalidShape("coherence: prediction and ground-truth counts differ");
  CoherenceReport r;
  r.min_area = min_area;
  double cc = 0.0, holes = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require_same_extent(preds[i], gts[i], "coherence");
    r.pred_components.push_back(count_components(preds[i], min_area, connectivity));
    r.gt_components.push_back(count_components(gts[i], min_area, connectivity));
    r.pred_holes.push_back(count_holes(preds[i], min_area, connectivity));
    r.gt_holes.push_back(count_holes(gts[i], min_area, connectivity));
    cc += std::abs(r.pred_components.back() - r.gt_components.back());
    holes += std::abs(r.pred_holes.back() - r.gt_holes.back());
  }
  if (!preds.empty()) {
    r.cc_deviation = cc / static_cast<double>(preds.size());
    r.hole_deviation = holes / static_cast<double>(preds.size());
  }
  return r;
}

std::optional<double> auroc(std::span<const double> scores, std::span<const std::uint8_t> targets) {
  if (scores.size() != targets.size()) throw InvalidShape("auroc: scores and targets differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::uint64_t positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // Ranks i+1 .. j share their mean.
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (targets[order[k]] != 0) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const std::uint64_t negatives = n - positives;
  if (positives == 0 || negatives == 0) return std::nullopt;
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(negatives));
}

std::optional<double> error_auroc(std::span<const SoftMask> conf, std::span<const BinaryMask> pred,
                                  std::span<const BinaryMask> gt) {
  if (conf.size() != pred.size() || pred.size() != gt.size()) throw InvalidShape("error_auroc: collection sizes differ");
  std::vector<double> scores;
  std::vector<std::uint8_t> targets;
  for (std::size_t i = 0; i < conf.size(); ++i) {
    require_same_extent(conf[i], gt[i], "error_auroc");
    require_same_extent(pred[i], gt[i], "error_auroc");
    for (std::size_t k = 0; k < gt[i].size(); ++k) {
      const double c = conf[i].values()[k];
      scores.push_back(1.0 - std::max(c, 1.0 - c));
      targets.push_back(pred[i].values()[k] != gt[i].values()[k] ? 1 : 0);
    }
  }
  return auroc(scores, targets);
}

std::vector<SweepRow> threshold_sweep(std::span<const SoftMask> conf, std::span<const BinaryMask> gt,
                                      std::span<const double> thetas) {
  std::vector<SweepRow> rows;
  std::vector<BinaryMask> pred(conf.size());
  for (double theta : thetas) {
    for (std::size_t i = 0; i < conf.size(); ++i) pred[i] = binarize(conf[i], theta);
    const MetricsReport m = binary_prf(pred, gt);
    rows.push_back({theta, m.precision, m.recall, m.f1});
  }
  return rows;
}

SweepRow best_threshold(std::span<const SweepRow> rows) {
  if (rows.empty()) throw InvalidArgument("best_threshold: empty sweep");
  SweepRow best = rows.front();
  for (const auto& r : rows) {
    if (r.f1 > best.f1 || (r.f1 == best.f1 && r.theta < best.theta)) best = r;
  }
  return best;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(10);
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& r) {
  auto out = open_csv(path);
  out << "precision,recall,f1,mae,tp,fp,fn,tn\n"
      << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.mae << ',' << r.tp << ',' << r.fp << ',' << r.fn
      << ',' << r.tn << '\n';
}

void write_coherence_csv(const std::filesystem::path& path, const CoherenceReport& r) {
  auto out = open_csv(path);
  out << "sample,pred_components,gt_components,pred_holes,gt_holes\n";
  for (std::size_t i = 0; i < r.pred_components.size(); ++i) {
    out << i << ',' << r.pred_components[i] << ',' << r.gt_components[i] << ',' << r.pred_holes[i] << ','
        << r.gt_holes[i] << '\n';
  }
  out << "mean_abs_deviation," << r.cc_deviation << ",," << r.hole_deviation << ",\n";
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  auto out = open_csv(path);
  out << "theta,precision,recall,f1\n";
  for (const auto& r : rows) out << r.theta << ',' << r.precision << ',' << r.recall << ',' << r.f1 << '\n';
}

}  // namespace changeflow
