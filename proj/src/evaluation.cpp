#include "nbv/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nbv/errors.hpp"
#include "nbv/util.hpp"

namespace nbv {

namespace {

void check_pair(const std::vector<double>& gt, const std::vector<double>& fp) {
  if (gt.empty()) throw std::invalid_argument("empty score vector");
  if (gt.size() != fp.size()) throw std::invalid_argument("gt/fp length mismatch");
}

}  // namespace

double euclid_error(const std::vector<double>& gt, const std::vector<double>& fp) {
  return std::sqrt(squared_error(gt, fp));
}

double squared_error(const std::vector<double>& gt, const std::vector<double>& fp) {
  check_pair(gt, fp);
  double acc = 0.0;
  for (std::size_t j = 0; j < gt.size(); ++j) {
    const double d = gt[j] - fp[j];
    acc += d * d;
  }
  return acc;
}

bool sample_accuracy(const std::vector<double>& gt, const std::vector<double>& fp) {
  check_pair(gt, fp);
  const double hi = *std::max_element(gt.begin(), gt.end());
  const double lo = *std::min_element(gt.begin(), gt.end());
  const double floor = hi - 0.15 * (hi - lo);
  return gt[argmax_lowest(fp)] >= floor;
}

ModelMetrics model_metrics(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw std::invalid_argument("model_metrics: no records");
  ModelMetrics m;
  int correct = 0;
  for (const EvalRecord& r : records) {
    m.mean_euclid += r.euclid_error;
    m.mean_squared += r.squared_error;
    correct += r.correct ? 1 : 0;
  }
  const double n = static_cast<double>(records.size());
  m.mean_euclid /= n;
  m.mean_squared /= n;
  m.accuracy = 100.0 * static_cast<double>(correct) / n;
  return m;
}

FitResult linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("linear_fit: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("linear_fit: needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0, y2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
    y2 += y[i] * y[i];
  }
  if (sxx <= 0.0) throw std::invalid_argument("linear_fit: x values are all identical");

  FitResult fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (fit.slope * x[i] + fit.intercept);
    ss_res += r * r;
  }
  const double tiny = 1e-20 * std::max(1.0, y2);
  if (syy <= tiny) {
    if (ss_res <= tiny) {
      fit.r_squared = 1.0;
      return fit;
    }
    throw std::invalid_argument("linear_fit: zero total variance with nonzero residuals");
  }
  fit.r_squared = 1.0 - ss_res / syy;
  return fit;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("pearson: needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) throw std::invalid_argument("pearson: zero variance input");
  return sxy / std::sqrt(sxx * syy);
}

std::string field_name(UncertaintyField field) {
  switch (field) {
    case UncertaintyField::kSigmaWhole: return "sigma_whole";
    case UncertaintyField::kSigmaAccuracy: return "sigma_accuracy";
    case UncertaintyField::kSigmaMean: return "sigma_mean";
    case UncertaintyField::kSigmaNbv: return "sigma_nbv";
  }
  throw std::invalid_argument("unknown uncertainty field");
}

std::string metric_name(RejectionMetric metric) {
  return metric == RejectionMetric::kError ? "error" : "accuracy";
}

double record_uncertainty(const EvalRecord& record, UncertaintyField field) {
  if (!record.report) {
    throw DataError("record " + record.model_id + " carries no uncertainty report");
  }
  switch (field) {
    case UncertaintyField::kSigmaWhole: return record.report->sigma_whole;
    case UncertaintyField::kSigmaAccuracy: return record.report->sigma_accuracy;
    case UncertaintyField::kSigmaMean: return record.report->sigma_mean;
    case UncertaintyField::kSigmaNbv: return record.report->sigma_nbv;
  }
  throw std::invalid_argument("unknown uncertainty field");
}

std::vector<double> default_thresholds(const std::vector<double>& values, int n) {
  if (values.empty()) throw std::invalid_argument("default_thresholds: no values");
  if (n < 2) throw std::invalid_argument("default_thresholds: need at least 2 thresholds");
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    out[static_cast<std::size_t>(k)] = lo + (hi - lo) * static_cast<double>(k) / (n - 1);
  }
  out.back() = hi;
  return out;
}

namespace {

double subset_metric(const std::vector<EvalRecord>& records, const std::vector<bool>& mask,
                     bool in_mask, RejectionMetric metric) {
  double err = 0.0;
  int n = 0, correct = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (mask[i] != in_mask) continue;
    err += records[i].euclid_error;
    correct += records[i].correct ? 1 : 0;
    ++n;
  }
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return metric == RejectionMetric::kError ? err / n : 100.0 * correct / n;
}

}  // namespace

RejectionCurve rejection_curve(const std::vector<EvalRecord>& records, UncertaintyField field,
                               RejectionMetric metric, const std::vector<double>& thresholds) {
  if (records.empty()) throw std::invalid_argument("rejection_curve: no records");
  if (thresholds.empty()) throw std::invalid_argument("rejection_curve: no thresholds");
  if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
    throw std::invalid_argument("rejection_curve: thresholds must ascend");
  }
  std::vector<double> u(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) u[i] = record_uncertainty(records[i], field);

  RejectionCurve curve;
  curve.thresholds = thresholds;
  std::vector<bool> accepted(records.size());
  for (double t : thresholds) {
    int n_acc = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
      accepted[i] = u[i] <= t;
      n_acc += accepted[i] ? 1 : 0;
    }
    curve.accepted_metric.push_back(subset_metric(records, accepted, true, metric));
    curve.rejected_metric.push_back(subset_metric(records, accepted, false, metric));
    curve.accepted_fraction.push_back(static_cast<double>(n_acc) /
                                      static_cast<double>(records.size()));
  }
  return curve;
}

namespace {

// Largest candidate threshold whose accepted set meets the target; falls back
// to the best achievable value when none does.
ThresholdChoice choose_threshold(const std::vector<EvalRecord>& records, UncertaintyField field,
                                 RejectionMetric metric, double target) {
  std::vector<double> u(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) u[i] = record_uncertainty(records[i], field);
  std::vector<double> candidates = u;
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  ThresholdChoice choice;
  choice.target = target;
  double best_value = std::numeric_limits<double>::quiet_NaN();
  double best_threshold = std::numeric_limits<double>::quiet_NaN();
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
    const double t = *it;
    std::vector<bool> accepted(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) accepted[i] = u[i] <= t;
    const double value = subset_metric(records, accepted, true, metric);
    const bool met = metric == RejectionMetric::kError ? value <= target : value >= target;
    if (met) {
      choice.attainable = true;
      choice.threshold = t;
      choice.achieved = value;
      return choice;
    }
    const bool better = std::isnan(best_value) ||
                        (metric == RejectionMetric::kError ? value <= best_value
                                                           : value >= best_value);
    if (better) {
      best_value = value;
      best_threshold = t;
    }
  }
  choice.attainable = false;
  choice.threshold = best_threshold;
  choice.achieved = best_value;
  return choice;
}

}  // namespace

CalibrationTable calibrate(const std::vector<EvalRecord>& records,
                           const CalibrationTargets& targets) {
  if (records.empty()) throw std::invalid_argument("calibrate: no records");
  CalibrationTable table;
  for (const EvalRecord& r : records) {
    if (!r.report) throw DataError("record " + r.model_id + " carries no uncertainty report");
    const std::vector<double>& sv = r.report->sigma_v;
    if (table.max_sigma_view.empty()) {
      table.max_sigma_view = sv;
    } else {
      if (sv.size() != table.max_sigma_view.size()) {
        throw DataError("record " + r.model_id + ": sigma_v length mismatch");
      }
      for (std::size_t j = 0; j < sv.size(); ++j) {
        table.max_sigma_view[j] = std::max(table.max_sigma_view[j], sv[j]);
      }
    }
  }
  table.whole_for_error = choose_threshold(records, UncertaintyField::kSigmaWhole,
                                           RejectionMetric::kError, targets.max_error);
  table.accuracy_for_accuracy = choose_threshold(records, UncertaintyField::kSigmaAccuracy,
                                                 RejectionMetric::kAccuracy,
                                                 targets.min_accuracy);
  return table;
}

std::vector<double> adjusted_coverage(const std::vector<double>& fp,
                                      const std::vector<double>& sigma_v,
                                      const CalibrationTable& table, AdjustFormula formula,
                                      AdjustSign sign, double sigma_acc) {
  if (fp.size() != sigma_v.size() || fp.size() != table.max_sigma_view.size()) {
    throw std::invalid_argument("adjusted_coverage: length mismatch");
  }
  if (sigma_acc < 0.0) throw std::invalid_argument("adjusted_coverage: negative sigma_acc");
  const double acc_pow = std::pow(sigma_acc, 0.4);
  std::vector<double> out(fp.size());
  for (std::size_t j = 0; j < fp.size(); ++j) {
    const double norm = table.max_sigma_view[j] > 0.0 ? sigma_v[j] / table.max_sigma_view[j] : 0.0;
    const double delta = formula == AdjustFormula::kF1 ? sigma_v[j] * (norm * 0.8)
                                                       : sigma_v[j] * norm * acc_pow;
    out[j] = sign == AdjustSign::kPlus ? fp[j] + delta : fp[j] - delta;
  }
  return out;
}

std::vector<HistogramBin> uncertainty_histogram(const std::vector<EvalRecord>& records,
                                                UncertaintyField field, int n_bins) {
  if (records.empty()) throw std::invalid_argument("uncertainty_histogram: no records");
  if (n_bins < 1) throw std::invalid_argument("uncertainty_histogram: n_bins must be >= 1");
  std::vector<double> u(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) u[i] = record_uncertainty(records[i], field);
  const double lo = *std::min_element(u.begin(), u.end());
  const double hi = *std::max_element(u.begin(), u.end());
  if (hi == lo) {
    HistogramBin bin{lo, hi, 0, 0};
    for (const EvalRecord& r : records) (r.correct ? bin.n_correct : bin.n_wrong) += 1;
    return {bin};
  }
  const double width = (hi - lo) / n_bins;
  std::vector<HistogramBin> bins(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    bins[static_cast<std::size_t>(b)].low = lo + width * b;
    bins[static_cast<std::size_t>(b)].high = b + 1 == n_bins ? hi : lo + width * (b + 1);
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    int b = static_cast<int>((u[i] - lo) / width);
    b = std::min(b, n_bins - 1);
    auto& bin = bins[static_cast<std::size_t>(b)];
    (records[i].correct ? bin.n_correct : bin.n_wrong) += 1;
  }
  return bins;
}

std::string record_to_ndjson(const EvalRecord& record,
                             const std::vector<std::vector<double>>* mc) {
  nlohmann::json j;
  j["model_id"] = record.model_id;
  j["step"] = record.step;
  j["gt"] = record.gt;
  j["fp"] = record.fp;
  j["euclid_error"] = record.euclid_error;
  j["squared_error"] = record.squared_error;
  j["correct"] = record.correct;
  if (record.report) {
    j["sigma_v"] = record.report->sigma_v;
    j["sigma_mean"] = record.report->sigma_mean;
    j["sigma_nbv"] = record.report->sigma_nbv;
    j["sigma_whole"] = record.report->sigma_whole;
    j["sigma_accuracy"] = record.report->sigma_accuracy;
  }
  if (mc) j["mc"] = *mc;
  return j.dump();
}

namespace {

std::vector<double> number_array(const nlohmann::json& j, const std::string& key,
                                 const std::string& where) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw DataError(where + ": missing array field '" + key + "'");
  }
  std::vector<double> out;
  for (const auto& v : j[key]) {
    if (!v.is_number()) throw DataError(where + ": non-numeric entry in '" + key + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

double number_field(const nlohmann::json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key) || !j[key].is_number()) {
    throw DataError(where + ": missing numeric field '" + key + "'");
  }
  return j[key].get<double>();
}

}  // namespace

EvalRecord record_from_ndjson(const std::string& line, const std::string& where) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + ": bad json: " + e.what());
  }
  EvalRecord r;
  if (!j.contains("model_id") || !j["model_id"].is_string()) {
    throw DataError(where + ": missing string field 'model_id'");
  }
  r.model_id = j["model_id"].get<std::string>();
  if (!j.contains("step") || !j["step"].is_number_integer()) {
    throw DataError(where + ": missing integer field 'step'");
  }
  r.step = j["step"].get<int>();
  r.gt = number_array(j, "gt", where);
  r.fp = number_array(j, "fp", where);
  if (r.gt.empty() || r.gt.size() != r.fp.size()) {
    throw DataError(where + ": gt/fp lengths inconsistent");
  }
  r.euclid_error = number_field(j, "euclid_error", where);
  r.squared_error = number_field(j, "squared_error", where);
  if (!j.contains("correct") || !j["correct"].is_boolean()) {
    throw DataError(where + ": missing boolean field 'correct'");
  }
  r.correct = j["correct"].get<bool>();

  const bool any_sigma = j.contains("sigma_v") || j.contains("sigma_mean") ||
                         j.contains("sigma_nbv") || j.contains("sigma_whole") ||
                         j.contains("sigma_accuracy");
  if (any_sigma) {
    UncertaintyReport rep;
    rep.sigma_v = number_array(j, "sigma_v", where);
    if (rep.sigma_v.size() != r.gt.size()) {
      throw DataError(where + ": sigma_v length inconsistent with gt");
    }
    rep.sigma_mean = number_field(j, "sigma_mean", where);
    rep.sigma_nbv = number_field(j, "sigma_nbv", where);
    rep.sigma_whole = number_field(j, "sigma_whole", where);
    rep.sigma_accuracy = number_field(j, "sigma_accuracy", where);
    r.report = rep;
  }
  return r;
}

std::vector<EvalRecord> read_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<EvalRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    out.push_back(record_from_ndjson(line, path + ":" + std::to_string(line_no)));
  }
  return out;
}

}  // namespace nbv
