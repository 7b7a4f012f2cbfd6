#pragma once

#include <span>
#include <vector>

namespace rfv::eval {

/// Labels: 1 = positive class (different identity / attack), 0 = genuine.
struct AreaMetrics {
  double au_roc = 0.0;
  double au_pr = 0.0;
};

/// AU-ROC as the normalized Mann-Whitney U (ties count one half) and AU-PR as the step-wise
/// sum of precision times recall increments over the distinct score thresholds, descending.
/// Throws ConfigError unless both classes are present.
AreaMetrics auroc_aupr(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
  double threshold = 0.0;
};
/// (FPR, TPR) at every distinct threshold, starting from (0,0).
std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
/// (recall, precision) at every distinct threshold.
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

/// Smallest delta with |{s >= delta}| / n <= fpr. Candidates are the distinct scores and the
/// value just above the maximum. Throws ConfigError on an empty list or fpr outside (0,1].
double calibrate_threshold(std::span<const double> scores_same, double fpr);

/// Fraction of scores >= threshold.
double detection_rate(std::span<const double> scores, double threshold);

} // namespace rfv::eval
