#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nbv/bayesian.hpp"

namespace nbv {

// One evaluated sample. `report` is only present for MC-mode evaluation;
// deterministic passes carry errors and correctness alone.
struct EvalRecord {
  std::string model_id;
  int step = 0;
  std::vector<double> gt;
  std::vector<double> fp;
  double euclid_error = 0.0;
  double squared_error = 0.0;
  bool correct = false;
  std::optional<UncertaintyReport> report;
};

double euclid_error(const std::vector<double>& gt, const std::vector<double>& fp);
double squared_error(const std::vector<double>& gt, const std::vector<double>& fp);

// Band rule: alpha = max(gt) - min(gt); views with gt_j >= max(gt) - 0.15*alpha
// are acceptable; the prediction is correct iff argmax(fp) (lowest index on
// ties) is acceptable.
bool sample_accuracy(const std::vector<double>& gt, const std::vector<double>& fp);

struct ModelMetrics {
  double mean_euclid = 0.0;
  double mean_squared = 0.0;
  double accuracy = 0.0;  // percent
};

ModelMetrics model_metrics(const std::vector<EvalRecord>& records);

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares y = slope*x + intercept. Degenerate SS_tot = 0 yields
// R^2 = 1 when the residuals are also zero and is rejected otherwise; constant
// x is rejected.
FitResult linear_fit(const std::vector<double>& x, const std::vector<double>& y);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

enum class UncertaintyField { kSigmaWhole, kSigmaAccuracy, kSigmaMean, kSigmaNbv };
enum class RejectionMetric { kError, kAccuracy };

std::string field_name(UncertaintyField field);
std::string metric_name(RejectionMetric metric);

// Throws DataError when the record carries no uncertainty report.
double record_uncertainty(const EvalRecord& record, UncertaintyField field);

// Per threshold t: the metric over {records with uncertainty <= t} and over
// the complement. An empty side is marked NaN (absent), never zero.
struct RejectionCurve {
  std::vector<double> thresholds;
  std::vector<double> accepted_metric;
  std::vector<double> rejected_metric;
  std::vector<double> accepted_fraction;
};

std::vector<double> default_thresholds(const std::vector<double>& values, int n = 40);

RejectionCurve rejection_curve(const std::vector<EvalRecord>& records, UncertaintyField field,
                               RejectionMetric metric, const std::vector<double>& thresholds);

struct ThresholdChoice {
  bool attainable = false;
  double threshold = std::numeric_limits<double>::quiet_NaN();
  double achieved = std::numeric_limits<double>::quiet_NaN();
  double target = std::numeric_limits<double>::quiet_NaN();
};

struct CalibrationTargets {
  double max_error = 0.5;
  double min_accuracy = 50.0;  // percent
};

struct CalibrationTable {
  std::vector<double> max_sigma_view;
  ThresholdChoice whole_for_error;        // sigma_whole threshold vs max_error
  ThresholdChoice accuracy_for_accuracy;  // sigma_accuracy threshold vs min_accuracy
};

// Per-view sigma maxima plus, for each target, the largest observed threshold
// whose accepted set meets it; unattainable targets report the best achievable
// value instead.
CalibrationTable calibrate(const std::vector<EvalRecord>& records,
                           const CalibrationTargets& targets);

enum class AdjustFormula { kF1, kF2 };
enum class AdjustSign { kPlus, kMinus };

// sigma_norm_j = sigma_v_j / max_sigma_view_j (0 when the max is 0).
// f1: fp_j +- sigma_v_j * (sigma_norm_j * 0.8)
// f2: fp_j +- sigma_v_j * sigma_norm_j * sigma_acc^0.4
std::vector<double> adjusted_coverage(const std::vector<double>& fp,
                                      const std::vector<double>& sigma_v,
                                      const CalibrationTable& table, AdjustFormula formula,
                                      AdjustSign sign, double sigma_acc);

struct HistogramBin {
  double low = 0.0;
  double high = 0.0;
  int n_correct = 0;
  int n_wrong = 0;
};

std::vector<HistogramBin> uncertainty_histogram(const std::vector<EvalRecord>& records,
                                                UncertaintyField field, int n_bins = 20);

// NDJSON round trip for eval records; `mc` rows are appended when given.
std::string record_to_ndjson(const EvalRecord& record,
                             const std::vector<std::vector<double>>* mc = nullptr);
EvalRecord record_from_ndjson(const std::string& line, const std::string& where);
std::vector<EvalRecord> read_records(const std::string& path);

}  // namespace nbv
