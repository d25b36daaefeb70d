#include "nbv/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "nbv/bayesian.hpp"
#include "nbv/errors.hpp"
#include "nbv/evaluation.hpp"
#include "nbv/rng.hpp"
#include "nbv/util.hpp"

namespace fs = std::filesystem;

namespace nbv {

namespace {

std::string csv_cell(double v) { return std::isfinite(v) ? fmt_double(v) : std::string(); }

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  return out;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": bad json: " + e.what());
  }
  return j;
}

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  open_out(path) << j.dump(2) << '\n';
}

}  // namespace

void validate_run_config(const RunConfig& config) {
  validate_gen_config(config.gen);
  if (config.out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (config.per_point.size() < 2 || config.per_point.front() != 3) {
    throw ConfigError("per_point must start at width 3 and hold at least 2 widths");
  }
  for (int w : config.per_point) {
    if (w < 1) throw ConfigError("per_point widths must be positive");
  }
  for (int w : config.head_hidden) {
    if (w < 1) throw ConfigError("head_hidden widths must be positive");
  }
  if (!(config.dropout_rate >= 0.0 && config.dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0,1)");
  }
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (config.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw ConfigError("learning_rate must be positive and finite");
  }
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda)) {
    throw ConfigError("lambda must be nonnegative and finite");
  }
  if (config.n_mc < 2) throw ConfigError("n_mc must be >= 2");
  if (config.n_thresholds < 2) throw ConfigError("n_thresholds must be >= 2");
  if (config.n_bins < 1) throw ConfigError("n_bins must be >= 1");
  if (!(config.target_error >= 0.0)) throw ConfigError("target_error must be >= 0");
  if (!(config.target_accuracy >= 0.0 && config.target_accuracy <= 100.0)) {
    throw ConfigError("target_accuracy must lie in [0,100]");
  }
}

Architecture architecture_for(const RunConfig& config) {
  Architecture arch;
  arch.per_point = config.per_point;
  arch.head.clear();
  arch.head.push_back(config.per_point.back() + config.gen.n_views);
  for (int w : config.head_hidden) arch.head.push_back(w);
  arch.head.push_back(config.gen.n_views);
  arch.dropout_rate = config.dropout_rate;
  try {
    validate_architecture(arch);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return arch;
}

void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": bad json: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config root must be an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "master_seed") config.master_seed = value.get<std::uint64_t>();
      else if (key == "out_dir") config.out_dir = value.get<std::string>();
      else if (key == "n_views") config.gen.n_views = value.get<int>();
      else if (key == "radius") config.gen.radius = value.get<double>();
      else if (key == "epsilon_scale") config.gen.epsilon_scale = value.get<double>();
      else if (key == "angular_bins") config.gen.angular_bins = value.get<int>();
      else if (key == "depth_band_scale") config.gen.depth_band_scale = value.get<double>();
      else if (key == "n_points") config.gen.n_points = value.get<int>();
      else if (key == "n_in") config.gen.n_in = value.get<int>();
      else if (key == "steps") config.gen.steps = value.get<int>();
      else if (key == "train_per_family") config.gen.train_per_family = value.get<int>();
      else if (key == "valid_per_family") config.gen.valid_per_family = value.get<int>();
      else if (key == "test_per_family") config.gen.test_per_family = value.get<int>();
      else if (key == "novel_per_family") config.gen.novel_per_family = value.get<int>();
      else if (key == "random_step_fraction")
        config.gen.random_step_fraction = value.get<double>();
      else if (key == "per_point") config.per_point = value.get<std::vector<int>>();
      else if (key == "head_hidden") config.head_hidden = value.get<std::vector<int>>();
      else if (key == "dropout_rate") config.dropout_rate = value.get<double>();
      else if (key == "epochs") config.epochs = value.get<int>();
      else if (key == "batch_size") config.batch_size = value.get<int>();
      else if (key == "learning_rate") config.learning_rate = value.get<double>();
      else if (key == "lambda") config.lambda = value.get<double>();
      else if (key == "n_mc") config.n_mc = value.get<int>();
      else if (key == "n_thresholds") config.n_thresholds = value.get<int>();
      else if (key == "n_bins") config.n_bins = value.get<int>();
      else if (key == "target_error") config.target_error = value.get<double>();
      else if (key == "target_accuracy") config.target_accuracy = value.get<double>();
      else throw ConfigError(path + ": unknown config key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": key '" + key + "': " + e.what());
    }
  }
}

namespace {

struct SubState {
  CLI::App* cmd = nullptr;
  std::string config_path;
  RunConfig flags;
  std::map<std::string, CLI::Option*> opt;
  // eval
  std::string mode = "mc";
  std::string split = "test";
  bool dump_mc = false;
  std::string checkpoint;
  std::string data_dir;
  // analyze / adjust
  std::string records_path;
  std::string calibration_path;
};

void add_common_flags(SubState& st) {
  CLI::App* cmd = st.cmd;
  st.opt["config"] = cmd->add_option("--config", st.config_path, "JSON config file");
  st.opt["seed"] = cmd->add_option("--seed", st.flags.master_seed, "master seed");
  st.opt["out"] = cmd->add_option("--out", st.flags.out_dir, "output directory");
  st.opt["n_views"] = cmd->add_option("--n-views", st.flags.gen.n_views, "candidate views");
  st.opt["radius"] = cmd->add_option("--radius", st.flags.gen.radius, "view sphere radius");
  st.opt["epsilon_scale"] =
      cmd->add_option("--epsilon-scale", st.flags.gen.epsilon_scale, "epsilon rule scale");
  st.opt["angular_bins"] =
      cmd->add_option("--angular-bins", st.flags.gen.angular_bins, "visibility grid bins");
  st.opt["depth_band_scale"] = cmd->add_option("--depth-band-scale",
                                               st.flags.gen.depth_band_scale,
                                               "visibility depth band in epsilons");
  st.opt["n_points"] = cmd->add_option("--n-points", st.flags.gen.n_points, "full cloud size");
  st.opt["n_in"] = cmd->add_option("--n-in", st.flags.gen.n_in, "stored partial size");
  st.opt["steps"] = cmd->add_option("--steps", st.flags.gen.steps, "scan steps per model");
  st.opt["train_per_family"] =
      cmd->add_option("--train-per-family", st.flags.gen.train_per_family, "train models");
  st.opt["valid_per_family"] =
      cmd->add_option("--valid-per-family", st.flags.gen.valid_per_family, "valid models");
  st.opt["test_per_family"] =
      cmd->add_option("--test-per-family", st.flags.gen.test_per_family, "test models");
  st.opt["novel_per_family"] =
      cmd->add_option("--novel-per-family", st.flags.gen.novel_per_family, "novel models");
  st.opt["random_step_fraction"] = cmd->add_option(
      "--random-step-fraction", st.flags.gen.random_step_fraction, "mixed-policy random share");
  st.opt["per_point"] =
      cmd->add_option("--per-point", st.flags.per_point, "per-point widths")->delimiter(',');
  st.opt["head_hidden"] =
      cmd->add_option("--head-hidden", st.flags.head_hidden, "head hidden widths")
          ->delimiter(',');
  st.opt["dropout_rate"] =
      cmd->add_option("--dropout-rate", st.flags.dropout_rate, "dropout probability");
  st.opt["epochs"] = cmd->add_option("--epochs", st.flags.epochs, "training epochs");
  st.opt["batch_size"] = cmd->add_option("--batch-size", st.flags.batch_size, "batch size");
  st.opt["learning_rate"] =
      cmd->add_option("--learning-rate", st.flags.learning_rate, "Adam step size");
  st.opt["lambda"] = cmd->add_option("--lambda", st.flags.lambda, "weight decay");
  st.opt["n_mc"] = cmd->add_option("--n-mc", st.flags.n_mc, "MC dropout passes");
  st.opt["n_thresholds"] =
      cmd->add_option("--n-thresholds", st.flags.n_thresholds, "rejection grid size");
  st.opt["n_bins"] = cmd->add_option("--n-bins", st.flags.n_bins, "histogram bins");
  st.opt["target_error"] =
      cmd->add_option("--target-error", st.flags.target_error, "calibration error target");
  st.opt["target_accuracy"] = cmd->add_option("--target-accuracy", st.flags.target_accuracy,
                                              "calibration accuracy target (percent)");
}

RunConfig resolve_config(const SubState& st) {
  RunConfig config;
  if (st.opt.at("config")->count() > 0) apply_config_file(config, st.config_path);
  const auto used = [&](const char* key) { return st.opt.at(key)->count() > 0; };
  if (used("seed")) config.master_seed = st.flags.master_seed;
  if (used("out")) config.out_dir = st.flags.out_dir;
  if (used("n_views")) config.gen.n_views = st.flags.gen.n_views;
  if (used("radius")) config.gen.radius = st.flags.gen.radius;
  if (used("epsilon_scale")) config.gen.epsilon_scale = st.flags.gen.epsilon_scale;
  if (used("angular_bins")) config.gen.angular_bins = st.flags.gen.angular_bins;
  if (used("depth_band_scale")) config.gen.depth_band_scale = st.flags.gen.depth_band_scale;
  if (used("n_points")) config.gen.n_points = st.flags.gen.n_points;
  if (used("n_in")) config.gen.n_in = st.flags.gen.n_in;
  if (used("steps")) config.gen.steps = st.flags.gen.steps;
  if (used("train_per_family")) config.gen.train_per_family = st.flags.gen.train_per_family;
  if (used("valid_per_family")) config.gen.valid_per_family = st.flags.gen.valid_per_family;
  if (used("test_per_family")) config.gen.test_per_family = st.flags.gen.test_per_family;
  if (used("novel_per_family")) config.gen.novel_per_family = st.flags.gen.novel_per_family;
  if (used("random_step_fraction")) {
    config.gen.random_step_fraction = st.flags.gen.random_step_fraction;
  }
  if (used("per_point")) config.per_point = st.flags.per_point;
  if (used("head_hidden")) config.head_hidden = st.flags.head_hidden;
  if (used("dropout_rate")) config.dropout_rate = st.flags.dropout_rate;
  if (used("epochs")) config.epochs = st.flags.epochs;
  if (used("batch_size")) config.batch_size = st.flags.batch_size;
  if (used("learning_rate")) config.learning_rate = st.flags.learning_rate;
  if (used("lambda")) config.lambda = st.flags.lambda;
  if (used("n_mc")) config.n_mc = st.flags.n_mc;
  if (used("n_thresholds")) config.n_thresholds = st.flags.n_thresholds;
  if (used("n_bins")) config.n_bins = st.flags.n_bins;
  if (used("target_error")) config.target_error = st.flags.target_error;
  if (used("target_accuracy")) config.target_accuracy = st.flags.target_accuracy;
  validate_run_config(config);
  return config;
}

void check_samples(const RunConfig& config, const std::vector<NbvSample>& samples,
                   const std::string& what) {
  for (const NbvSample& s : samples) {
    if (static_cast<int>(s.view_state.size()) != config.gen.n_views ||
        static_cast<int>(s.gt.size()) != config.gen.n_views) {
      throw DataError(what + ": sample " + s.model_id + " has " +
                      std::to_string(s.view_state.size()) + " views, config expects " +
                      std::to_string(config.gen.n_views));
    }
  }
}

int cmd_gen_data(const RunConfig& config) {
  const fs::path data_dir = fs::path(config.out_dir) / "data";
  fs::create_directories(data_dir);
  const DatasetSplit split = build_dataset(config.gen, config.master_seed, data_dir.string());
  std::cout << "gen-data: " << split.train.size() << " train / " << split.valid.size()
            << " valid / " << split.test.size() << " test / " << split.test_novel.size()
            << " novel models, " << config.gen.steps << " steps each -> " << data_dir.string()
            << "\n";
  return 0;
}

int cmd_train(const RunConfig& config, const std::string& data_dir_flag) {
  const fs::path data_dir =
      data_dir_flag.empty() ? fs::path(config.out_dir) / "data" : fs::path(data_dir_flag);
  const auto train_set = read_dataset((data_dir / "train.ndjson").string());
  const auto valid_set = read_dataset((data_dir / "valid.ndjson").string());
  if (train_set.empty()) throw DataError("training split is empty");
  check_samples(config, train_set, "train");
  check_samples(config, valid_set, "valid");

  const Architecture arch = architecture_for(config);
  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.learning_rate = config.learning_rate;
  tc.lambda = config.lambda;
  tc.seed = config.master_seed;

  std::vector<EpochLog> log;
  const ModelParams params = train(arch, train_set, valid_set, tc, &log);

  fs::create_directories(config.out_dir);
  const fs::path ckpt = fs::path(config.out_dir) / "checkpoint.json";
  save_checkpoint(params, ckpt.string());

  auto curve = open_out(fs::path(config.out_dir) / "learning_curve.csv");
  curve << "epoch,train_loss,valid_loss\n";
  for (const EpochLog& e : log) {
    curve << e.epoch << ',' << csv_cell(e.train_loss) << ',' << csv_cell(e.valid_loss) << '\n';
  }
  std::cout << "train: " << log.size() << " epochs, final train loss "
            << fmt_double(log.back().train_loss) << " -> " << ckpt.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& config, const SubState& st) {
  const fs::path data_dir =
      st.data_dir.empty() ? fs::path(config.out_dir) / "data" : fs::path(st.data_dir);
  const std::string stem = st.split == "novel" ? "test_novel" : st.split;
  const auto samples = read_dataset((data_dir / (stem + ".ndjson")).string());
  if (samples.empty()) throw DataError("split '" + st.split + "' is empty");
  check_samples(config, samples, st.split);

  const fs::path ckpt = st.checkpoint.empty() ? fs::path(config.out_dir) / "checkpoint.json"
                                              : fs::path(st.checkpoint);
  const ModelParams params = load_checkpoint(ckpt.string());
  if (params.arch.n_views() != config.gen.n_views) {
    throw DataError("checkpoint has " + std::to_string(params.arch.n_views()) +
                    " views, config expects " + std::to_string(config.gen.n_views));
  }

  const Rng mc_root = Rng(config.master_seed).child("mc");
  std::vector<EvalRecord> records;
  records.reserve(samples.size());
  std::vector<std::string> lines;
  lines.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const NbvSample& s = samples[i];
    EvalRecord r;
    r.model_id = s.model_id;
    r.step = s.step;
    r.gt = s.gt;
    std::optional<McPredictionSet> set;
    if (st.mode == "mc") {
      set = mc_inference(params, s, config.n_mc, mc_root.child(i).seed());
      r.fp = set->fp;
      r.report = uncertainty_report(*set);
    } else {
      r.fp = forward(params, s);
    }
    if (!all_finite(r.fp)) throw NumericError("non-finite prediction for " + s.model_id);
    r.euclid_error = euclid_error(s.gt, r.fp);
    r.squared_error = squared_error(s.gt, r.fp);
    r.correct = sample_accuracy(s.gt, r.fp);
    lines.push_back(record_to_ndjson(r, st.dump_mc && set ? &set->samples : nullptr));
    records.push_back(std::move(r));
  }

  fs::create_directories(config.out_dir);
  const std::string tag = stem == "test_novel" ? "novel" : stem;
  auto nd = open_out(fs::path(config.out_dir) / ("eval_" + tag + "_" + st.mode + ".ndjson"));
  for (const std::string& line : lines) nd << line << '\n';

  const ModelMetrics m = model_metrics(records);
  nlohmann::json summary = {
      {"loss", m.mean_squared + config.lambda * weight_squared_norm(params)},
      {"euclid_error", m.mean_euclid},
      {"squared_error", m.mean_squared},
      {"accuracy", m.accuracy}};
  write_json_file(fs::path(config.out_dir) / ("summary_" + tag + "_" + st.mode + ".json"),
                  summary);
  std::cout << "eval " << tag << " (" << st.mode << "): " << records.size()
            << " samples, euclid " << fmt_double(m.mean_euclid) << ", accuracy "
            << fmt_double(m.accuracy) << "%\n";
  return 0;
}

std::vector<EvalRecord> read_mc_records(const fs::path& path, const std::string& what) {
  const auto records = read_records(path.string());
  if (records.empty()) throw DataError(what + ": no records in " + path.string());
  for (const EvalRecord& r : records) {
    if (!r.report) {
      throw DataError(what + ": record " + r.model_id + " in " + path.string() +
                      " carries no uncertainty fields; rerun eval with --mode mc");
    }
  }
  return records;
}

nlohmann::json choice_json(const ThresholdChoice& choice) {
  nlohmann::json j;
  j["attainable"] = choice.attainable;
  j["threshold"] = choice.threshold;
  j["achieved"] = choice.achieved;
  j["target"] = choice.target;
  return j;
}

int cmd_analyze(const RunConfig& config, const SubState& st) {
  const fs::path records_path = st.records_path.empty()
                                    ? fs::path(config.out_dir) / "eval_test_mc.ndjson"
                                    : fs::path(st.records_path);
  const fs::path calib_path = st.calibration_path.empty()
                                  ? fs::path(config.out_dir) / "eval_valid_mc.ndjson"
                                  : fs::path(st.calibration_path);
  const auto records = read_mc_records(records_path, "analyze");
  const auto calib = read_mc_records(calib_path, "analyze");

  const fs::path dir = fs::path(config.out_dir) / "analysis";
  fs::create_directories(dir);

  std::vector<double> whole(records.size()), err(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    whole[i] = records[i].report->sigma_whole;
    err[i] = records[i].euclid_error;
  }

  auto scatter = open_out(dir / "scatter.csv");
  scatter << "sigma_whole,euclid_error,correct\n";
  for (const EvalRecord& r : records) {
    scatter << fmt_double(r.report->sigma_whole) << ',' << fmt_double(r.euclid_error) << ','
            << (r.correct ? 1 : 0) << '\n';
  }

  FitResult fit;
  try {
    fit = linear_fit(whole, err);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("analyze: ") + e.what());
  }
  write_json_file(dir / "fit.json", {{"slope", fit.slope},
                                     {"intercept", fit.intercept},
                                     {"r_squared", fit.r_squared}});

  for (const UncertaintyField field :
       {UncertaintyField::kSigmaWhole, UncertaintyField::kSigmaAccuracy}) {
    std::vector<double> values(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      values[i] = record_uncertainty(records[i], field);
    }
    const std::vector<double> thresholds = default_thresholds(values, config.n_thresholds);
    for (const RejectionMetric metric : {RejectionMetric::kError, RejectionMetric::kAccuracy}) {
      const RejectionCurve curve = rejection_curve(records, field, metric, thresholds);
      auto csv = open_out(dir / ("rejection_" + field_name(field) + "_" + metric_name(metric) +
                                 ".csv"));
      csv << "threshold,accepted_value,rejected_value,accepted_fraction\n";
      for (std::size_t k = 0; k < curve.thresholds.size(); ++k) {
        csv << fmt_double(curve.thresholds[k]) << ',' << csv_cell(curve.accepted_metric[k])
            << ',' << csv_cell(curve.rejected_metric[k]) << ','
            << fmt_double(curve.accepted_fraction[k]) << '\n';
      }
    }
  }

  const auto bins = uncertainty_histogram(records, UncertaintyField::kSigmaWhole, config.n_bins);
  auto hist = open_out(dir / "histogram.csv");
  hist << "bin_low,bin_high,n_correct,n_wrong\n";
  for (const HistogramBin& b : bins) {
    hist << fmt_double(b.low) << ',' << fmt_double(b.high) << ',' << b.n_correct << ','
         << b.n_wrong << '\n';
  }

  CalibrationTargets targets;
  targets.max_error = config.target_error;
  targets.min_accuracy = config.target_accuracy;
  const CalibrationTable table = calibrate(calib, targets);
  nlohmann::json cal;
  cal["max_sigma_view"] = table.max_sigma_view;
  cal["sigma_whole_threshold"] = choice_json(table.whole_for_error);
  cal["sigma_accuracy_threshold"] = choice_json(table.accuracy_for_accuracy);
  write_json_file(dir / "calibration.json", cal);

  std::cout << "analyze: " << records.size() << " records, fit r_squared "
            << fmt_double(fit.r_squared) << " -> " << dir.string() << "\n";
  return 0;
}

int cmd_adjust(const RunConfig& config, const SubState& st) {
  const fs::path records_path = st.records_path.empty()
                                    ? fs::path(config.out_dir) / "eval_test_mc.ndjson"
                                    : fs::path(st.records_path);
  const fs::path calib_path = st.calibration_path.empty()
                                  ? fs::path(config.out_dir) / "eval_valid_mc.ndjson"
                                  : fs::path(st.calibration_path);
  const auto records = read_mc_records(records_path, "adjust");
  const auto calib = read_mc_records(calib_path, "adjust");

  CalibrationTargets targets;
  targets.max_error = config.target_error;
  targets.min_accuracy = config.target_accuracy;
  const CalibrationTable table = calibrate(calib, targets);

  const ModelMetrics baseline = model_metrics(records);
  nlohmann::json report;
  report["baseline"] = {{"euclid_error", baseline.mean_euclid},
                        {"squared_error", baseline.mean_squared},
                        {"accuracy", baseline.accuracy}};

  const std::pair<std::string, std::pair<AdjustFormula, AdjustSign>> variants[] = {
      {"f1_plus", {AdjustFormula::kF1, AdjustSign::kPlus}},
      {"f1_minus", {AdjustFormula::kF1, AdjustSign::kMinus}},
      {"f2_plus", {AdjustFormula::kF2, AdjustSign::kPlus}},
      {"f2_minus", {AdjustFormula::kF2, AdjustSign::kMinus}},
  };
  for (const auto& [name, spec] : variants) {
    std::vector<EvalRecord> adjusted = records;
    for (EvalRecord& r : adjusted) {
      r.fp = adjusted_coverage(r.fp, r.report->sigma_v, table, spec.first, spec.second,
                               r.report->sigma_accuracy);
      r.euclid_error = euclid_error(r.gt, r.fp);
      r.squared_error = squared_error(r.gt, r.fp);
      r.correct = sample_accuracy(r.gt, r.fp);
    }
    const ModelMetrics m = model_metrics(adjusted);
    report[name] = {{"euclid_error", m.mean_euclid},
                    {"squared_error", m.mean_squared},
                    {"accuracy", m.accuracy},
                    {"error_change", m.mean_euclid - baseline.mean_euclid},
                    {"accuracy_change", m.accuracy - baseline.accuracy}};
  }

  const fs::path dir = fs::path(config.out_dir) / "analysis";
  fs::create_directories(dir);
  write_json_file(dir / "adjust_report.json", report);
  std::cout << "adjust: baseline accuracy " << fmt_double(baseline.accuracy) << "% -> "
            << (dir / "adjust_report.json").string() << "\n";
  return 0;
}

struct CurveRow {
  double threshold = 0.0;
  double accepted = std::numeric_limits<double>::quiet_NaN();
  double fraction = 0.0;
};

std::vector<CurveRow> read_curve_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::vector<CurveRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(4);
    CurveRow row;
    row.threshold = std::stod(cells[0]);
    row.accepted =
        cells[1].empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(cells[1]);
    row.fraction = cells[3].empty() ? 0.0 : std::stod(cells[3]);
    rows.push_back(row);
  }
  if (rows.empty()) throw DataError(path.string() + ": empty curve");
  return rows;
}

int cmd_report(const RunConfig& config) {
  const fs::path out = fs::path(config.out_dir);
  const fs::path dir = out / "analysis";
  const nlohmann::json det = read_json_file(out / "summary_test_det.json");
  const nlohmann::json mc = read_json_file(out / "summary_test_mc.json");
  const nlohmann::json fit = read_json_file(dir / "fit.json");
  const nlohmann::json cal = read_json_file(dir / "calibration.json");
  const nlohmann::json adj = read_json_file(dir / "adjust_report.json");

  std::ostringstream md;
  md << "# Next-best-view run report\n\n";

  md << "## Test split: deterministic vs MC dropout\n\n";
  md << "| metric | deterministic | mc |\n|---|---|---|\n";
  for (const char* key : {"loss", "euclid_error", "squared_error", "accuracy"}) {
    md << "| " << key << " | " << fmt_double(det.at(key).get<double>()) << " | "
       << fmt_double(mc.at(key).get<double>()) << " |\n";
  }
  md << "\n";

  const fs::path novel_path = out / "summary_novel_mc.json";
  if (fs::exists(novel_path)) {
    const nlohmann::json novel = read_json_file(novel_path);
    md << "## Novel families (mc)\n\n";
    md << "| metric | value |\n|---|---|\n";
    for (const char* key : {"loss", "euclid_error", "squared_error", "accuracy"}) {
      md << "| " << key << " | " << fmt_double(novel.at(key).get<double>()) << " |\n";
    }
    md << "\n";
  }

  md << "## Error vs sigma_whole\n\n";
  md << "Least-squares line: error = " << fmt_double(fit.at("slope").get<double>())
     << " * sigma_whole + " << fmt_double(fit.at("intercept").get<double>())
     << " (R^2 = " << fmt_double(fit.at("r_squared").get<double>()) << ")\n\n";

  md << "## Rejection highlights\n\n";
  {
    const auto rows = read_curve_csv(dir / "rejection_sigma_accuracy_accuracy.csv");
    const double overall = rows.back().accepted;
    const CurveRow* best = nullptr;
    for (const CurveRow& row : rows) {
      if (std::isnan(row.accepted) || row.fraction < 0.2) continue;
      if (!best || row.accepted > best->accepted) best = &row;
    }
    if (best) {
      md << "- sigma_accuracy <= " << fmt_double(best->threshold) << " keeps "
         << fmt_double(100.0 * best->fraction) << "% of samples at "
         << fmt_double(best->accepted) << "% accuracy (overall " << fmt_double(overall)
         << "%)\n";
    }
  }
  {
    const auto rows = read_curve_csv(dir / "rejection_sigma_whole_error.csv");
    const double overall = rows.back().accepted;
    const CurveRow* best = nullptr;
    for (const CurveRow& row : rows) {
      if (std::isnan(row.accepted)) continue;
      if (!best || row.accepted < best->accepted) best = &row;
    }
    if (best) {
      md << "- sigma_whole <= " << fmt_double(best->threshold) << " keeps "
         << fmt_double(100.0 * best->fraction) << "% of samples at mean error "
         << fmt_double(best->accepted) << " (overall " << fmt_double(overall) << ")\n";
    }
  }
  md << "\n";

  md << "## Calibration\n\n";
  for (const char* key : {"sigma_whole_threshold", "sigma_accuracy_threshold"}) {
    const nlohmann::json& c = cal.at(key);
    md << "- " << key << ": ";
    if (c.at("attainable").get<bool>()) {
      md << "threshold " << fmt_double(c.at("threshold").get<double>()) << " achieves "
         << fmt_double(c.at("achieved").get<double>()) << " (target "
         << fmt_double(c.at("target").get<double>()) << ")\n";
    } else {
      md << "target " << fmt_double(c.at("target").get<double>())
         << " unattainable; best achievable "
         << (c.at("achieved").is_null() ? std::string("n/a")
                                        : fmt_double(c.at("achieved").get<double>()))
         << "\n";
    }
  }
  md << "\n";

  md << "## Coverage adjustment\n\n";
  md << "| variant | euclid_error | accuracy | error change | accuracy change |\n";
  md << "|---|---|---|---|---|\n";
  md << "| baseline | " << fmt_double(adj.at("baseline").at("euclid_error").get<double>())
     << " | " << fmt_double(adj.at("baseline").at("accuracy").get<double>()) << " | | |\n";
  for (const char* name : {"f1_plus", "f1_minus", "f2_plus", "f2_minus"}) {
    const nlohmann::json& v = adj.at(name);
    md << "| " << name << " | " << fmt_double(v.at("euclid_error").get<double>()) << " | "
       << fmt_double(v.at("accuracy").get<double>()) << " | "
       << fmt_double(v.at("error_change").get<double>()) << " | "
       << fmt_double(v.at("accuracy_change").get<double>()) << " |\n";
  }

  open_out(out / "report.md") << md.str();
  std::cout << "report -> " << (out / "report.md").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"desk-scale next-best-view experimentation toolkit"};
  app.require_subcommand(1);

  std::map<std::string, SubState> subs;
  const std::pair<const char*, const char*> names[] = {
      {"gen-data", "generate the scan dataset and manifest"},
      {"train", "train the regressor and write checkpoint + learning curve"},
      {"eval", "evaluate a checkpoint on a split"},
      {"analyze", "scatter, fit, rejection curves, histogram, calibration"},
      {"adjust", "coverage adjustment report"},
      {"report", "assemble the markdown report"},
  };
  for (const auto& [name, help] : names) {
    SubState& st = subs[name];
    st.cmd = app.add_subcommand(name, help);
    add_common_flags(st);
  }
  {
    SubState& st = subs["train"];
    st.cmd->add_option("--data-dir", st.data_dir, "dataset directory (default <out>/data)");
  }
  {
    SubState& st = subs["eval"];
    st.cmd->add_option("--mode", st.mode, "det or mc")
        ->check(CLI::IsMember({"det", "mc"}));
    st.cmd->add_option("--split", st.split, "train, valid, test or novel")
        ->check(CLI::IsMember({"train", "valid", "test", "novel"}));
    st.cmd->add_flag("--dump-mc", st.dump_mc, "append raw MC rows to each record");
    st.cmd->add_option("--checkpoint", st.checkpoint, "checkpoint path");
    st.cmd->add_option("--data-dir", st.data_dir, "dataset directory (default <out>/data)");
  }
  for (const char* name : {"analyze", "adjust"}) {
    SubState& st = subs[name];
    st.cmd->add_option("--records", st.records_path,
                       "mc eval records (default <out>/eval_test_mc.ndjson)");
    st.cmd->add_option("--calibration", st.calibration_path,
                       "calibration records (default <out>/eval_valid_mc.ndjson)");
  }

  std::vector<const char*> argv;
  argv.push_back("nbvkit");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    for (auto& [name, st] : subs) {
      if (!st.cmd->parsed()) continue;
      const RunConfig config = resolve_config(st);
      if (name == "gen-data") return cmd_gen_data(config);
      if (name == "train") return cmd_train(config, st.data_dir);
      if (name == "eval") return cmd_eval(config, st);
      if (name == "analyze") return cmd_analyze(config, st);
      if (name == "adjust") return cmd_adjust(config, st);
      if (name == "report") return cmd_report(config);
    }
    std::cerr << "error: no command\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace nbv
