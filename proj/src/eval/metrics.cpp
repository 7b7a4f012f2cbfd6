#include "rfv/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rfv/core/image.hpp"

namespace rfv::eval {

namespace {

struct Counts {
  std::size_t pos = 0, neg = 0;
};

Counts check(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ConfigError("scores and labels differ in length");
  Counts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw ConfigError("labels must be 0 or 1");
    if (!std::isfinite(scores[i]))
      throw ConfigError("scores must be finite");
    (labels[i] ? c.pos : c.neg)++;
  }
  if (c.pos == 0 || c.neg == 0)
    throw ConfigError("AU-ROC/AU-PR need both classes");
  return c;
}

std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Cumulative (tp, fp) after each group of tied scores, highest score first.
template <typename Fn> void sweep(std::span<const double> scores, std::span<const int> labels, Fn &&fn) {
  const auto order = descending(scores);
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    std::size_t j = i;
    for (; j < order.size() && scores[order[j]] == s; ++j)
      (labels[order[j]] ? tp : fp)++;
    fn(tp, fp, s);
    i = j;
  }
}

} // namespace

AreaMetrics auroc_aupr(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = check(scores, labels);
  AreaMetrics m;
  double u = 0.0;
  double ap = 0.0;
  std::size_t prev_tp = 0, prev_fp = 0;
  sweep(scores, labels, [&](std::size_t tp, std::size_t fp, double) {
    const double dtp = static_cast<double>(tp - prev_tp);
    const double dfp = static_cast<double>(fp - prev_fp);
    // positives in this group beat every negative seen before it and tie with the group's own
    u += dtp * (static_cast<double>(c.neg) - static_cast<double>(fp)) + 0.5 * dtp * dfp;
    ap += dtp / static_cast<double>(c.pos) * static_cast<double>(tp) / static_cast<double>(tp + fp);
    prev_tp = tp;
    prev_fp = fp;
  });
  m.au_roc = u / (static_cast<double>(c.pos) * static_cast<double>(c.neg));
  m.au_pr = ap;
  return m;
}

std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = check(scores, labels);
  std::vector<CurvePoint> out{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  sweep(scores, labels, [&](std::size_t tp, std::size_t fp, double s) {
    out.push_back({static_cast<double>(fp) / c.neg, static_cast<double>(tp) / c.pos, s});
  });
  return out;
}

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = check(scores, labels);
  std::vector<CurvePoint> out;
  sweep(scores, labels, [&](std::size_t tp, std::size_t fp, double s) {
    out.push_back({static_cast<double>(tp) / c.pos, static_cast<double>(tp) / static_cast<double>(tp + fp), s});
  });
  return out;
}

double calibrate_threshold(std::span<const double> scores_same, double fpr) {
  if (scores_same.empty())
    throw ConfigError("cannot calibrate on an empty score list");
  if (!(fpr > 0.0 && fpr <= 1.0))
    throw ConfigError("fpr must lie in (0,1]");
  std::vector<double> sorted(scores_same.begin(), scores_same.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0 && sorted[i] == sorted[i - 1])
      continue;
    // scores >= sorted[i] are exactly sorted[i..]
    if (static_cast<double>(sorted.size() - i) / n <= fpr)
      return sorted[i];
  }
  return std::nextafter(sorted.back(), std::numeric_limits<double>::infinity());
}

double detection_rate(std::span<const double> scores, double threshold) {
  if (scores.empty())
    return 0.0;
  const auto hits = std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= threshold; });
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

} // namespace rfv::eval
