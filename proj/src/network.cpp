#include "nbv/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "nbv/errors.hpp"
#include "nbv/rng.hpp"

namespace nbv {

namespace {

double activate(Activation act, double z) {
  return act == Activation::kRelu ? (z > 0.0 ? z : 0.0) : z;
}

double activate_grad(Activation act, double z) {
  return act == Activation::kRelu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

void check_forward_shapes(const ModelParams& params, const NbvSample& sample,
                          const DropoutPlan* plan) {
  const Architecture& arch = params.arch;
  if (sample.partial.empty()) throw std::invalid_argument("forward: empty partial cloud");
  if (static_cast<int>(sample.view_state.size()) != arch.n_views()) {
    throw std::invalid_argument("forward: view_state length does not match n_views");
  }
  if (plan && plan->head_keep.size() + 1 != params.head_layers.size()) {
    throw std::invalid_argument("forward: dropout plan does not match architecture");
  }
}

}  // namespace

void validate_architecture(const Architecture& arch) {
  if (arch.per_point.size() < 2) throw std::invalid_argument("architecture: per_point too short");
  if (arch.head.size() < 2) throw std::invalid_argument("architecture: head too short");
  for (int w : arch.per_point) {
    if (w < 1) throw std::invalid_argument("architecture: nonpositive per_point width");
  }
  for (int w : arch.head) {
    if (w < 1) throw std::invalid_argument("architecture: nonpositive head width");
  }
  if (arch.head.front() != arch.per_point.back() + arch.head.back()) {
    throw std::invalid_argument(
        "architecture: head input must equal per_point output plus n_views");
  }
  if (!(arch.dropout_rate >= 0.0 && arch.dropout_rate < 1.0)) {
    throw std::invalid_argument("architecture: dropout_rate must lie in [0,1)");
  }
}

bool ModelParams::finite() const {
  for (const auto* layers : {&point_layers, &head_layers}) {
    for (const Layer& l : *layers) {
      for (double v : l.w) {
        if (!std::isfinite(v)) return false;
      }
      for (double v : l.b) {
        if (!std::isfinite(v)) return false;
      }
    }
  }
  return true;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  validate_architecture(arch);
  ModelParams params;
  params.arch = arch;
  params.seed = seed;
  Rng rng = Rng(seed).child("init");
  auto make_stage = [&](const std::vector<int>& widths, std::vector<Layer>& out) {
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      Layer layer(widths[l + 1], widths[l]);
      // Fan-in uniform range at a tenth of the classic ReLU bound. Rate-0.5
      // dropout injects noise proportional to each unit's second moment, so
      // full-scale init buries the (small) coverage signal under mask flicker
      // and training collapses to the mean gain vector; starting small lets
      // the signal path grow before the noise floor does.
      const double bound = 0.1 * std::sqrt(6.0 / widths[l]);
      for (double& w : layer.w) w = rng.uniform(-bound, bound);
      out.push_back(std::move(layer));
    }
  };
  make_stage(arch.per_point, params.point_layers);
  make_stage(arch.head, params.head_layers);
  return params;
}

DropoutPlan make_dropout_plan(const Architecture& arch, std::uint64_t seed) {
  DropoutPlan plan;
  plan.seed = seed;
  Rng rng(seed);
  const double p = arch.dropout_rate;
  for (std::size_t l = 0; l + 2 < arch.head.size(); ++l) {
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(arch.head[l + 1]));
    for (auto& k : keep) k = rng.uniform() >= p ? 1 : 0;
    plan.head_keep.push_back(std::move(keep));
  }
  return plan;
}

std::uint64_t point_mask_base(std::uint64_t plan_seed, const Vec3& p) {
  std::uint64_t h = mix64(plan_seed ^ 0x9e3779b97f4a7c15ULL);
  h = mix64(h ^ std::bit_cast<std::uint64_t>(p.x));
  h = mix64(h ^ std::bit_cast<std::uint64_t>(p.y));
  h = mix64(h ^ std::bit_cast<std::uint64_t>(p.z));
  return h;
}

bool point_mask_keep(std::uint64_t base, std::size_t layer, std::size_t channel, double rate) {
  const std::uint64_t h = mix64(base ^ (static_cast<std::uint64_t>(layer) << 32 ^
                                        static_cast<std::uint64_t>(channel)));
  return static_cast<double>(h >> 11) * 0x1.0p-53 >= rate;
}

std::vector<double> forward(const ModelParams& params, const NbvSample& sample,
                            const DropoutPlan* plan, ForwardCache* cache) {
  check_forward_shapes(params, sample, plan);
  const Architecture& arch = params.arch;
  const std::size_t n = sample.partial.size();
  const double scale = plan ? 1.0 / (1.0 - arch.dropout_rate) : 1.0;

  std::vector<double> cur(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    cur[i * 3 + 0] = sample.partial.points[i].x;
    cur[i * 3 + 1] = sample.partial.points[i].y;
    cur[i * 3 + 2] = sample.partial.points[i].z;
  }
  std::vector<std::uint64_t> bases;
  if (plan) {
    bases.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      bases[i] = point_mask_base(plan->seed, sample.partial.points[i]);
    }
  }
  if (cache) {
    cache->point_z.clear();
    cache->point_a.clear();
    cache->head_z.clear();
    cache->head_a.clear();
    cache->point_a.push_back(cur);
  }

  std::size_t in_w = 3;
  for (std::size_t l = 0; l < params.point_layers.size(); ++l) {
    const Layer& layer = params.point_layers[l];
    const std::size_t out_w = static_cast<std::size_t>(layer.rows);
    std::vector<double> z(n * out_w);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = &cur[i * in_w];
      for (std::size_t o = 0; o < out_w; ++o) {
        const double* wrow = &layer.w[o * in_w];
        double acc = layer.b[o];
        for (std::size_t c = 0; c < in_w; ++c) acc += wrow[c] * x[c];
        z[i * out_w + o] = acc;
      }
    }
    std::vector<double> a(n * out_w);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < out_w; ++o) {
        double v = activate(arch.activation, z[i * out_w + o]);
        if (plan) v = point_mask_keep(bases[i], l, o, arch.dropout_rate) ? v * scale : 0.0;
        a[i * out_w + o] = v;
      }
    }
    if (cache) {
      cache->point_z.push_back(std::move(z));
      cache->point_a.push_back(a);
    }
    cur = std::move(a);
    in_w = out_w;
  }

  const std::size_t feat_w = in_w;
  std::vector<double> pooled(feat_w);
  std::vector<int> argmax(feat_w, 0);
  for (std::size_t o = 0; o < feat_w; ++o) {
    double best = cur[o];
    int best_i = 0;
    for (std::size_t i = 1; i < n; ++i) {
      if (cur[i * feat_w + o] > best) {
        best = cur[i * feat_w + o];
        best_i = static_cast<int>(i);
      }
    }
    pooled[o] = best;
    argmax[o] = best_i;
  }

  std::vector<double> h(feat_w + sample.view_state.size());
  std::copy(pooled.begin(), pooled.end(), h.begin());
  for (std::size_t j = 0; j < sample.view_state.size(); ++j) {
    h[feat_w + j] = static_cast<double>(sample.view_state[j]);
  }
  if (cache) {
    cache->pooled = pooled;
    cache->pool_argmax = argmax;
    cache->head_a.push_back(h);
  }

  for (std::size_t l = 0; l < params.head_layers.size(); ++l) {
    const Layer& layer = params.head_layers[l];
    const std::size_t out_w = static_cast<std::size_t>(layer.rows);
    const std::size_t hw = static_cast<std::size_t>(layer.cols);
    std::vector<double> z(out_w);
    for (std::size_t o = 0; o < out_w; ++o) {
      const double* wrow = &layer.w[o * hw];
      double acc = layer.b[o];
      for (std::size_t c = 0; c < hw; ++c) acc += wrow[c] * h[c];
      z[o] = acc;
    }
    const bool last = l + 1 == params.head_layers.size();
    std::vector<double> a(out_w);
    for (std::size_t o = 0; o < out_w; ++o) {
      if (last) {
        a[o] = z[o];
      } else {
        double v = activate(arch.activation, z[o]);
        if (plan) v = plan->head_keep[l][o] ? v * scale : 0.0;
        a[o] = v;
      }
    }
    if (cache) {
      cache->head_z.push_back(z);
      if (!last) cache->head_a.push_back(a);
    }
    h = std::move(a);
  }
  if (cache) cache->output = h;
  return h;
}

double weight_squared_norm(const ModelParams& params) {
  double reg = 0.0;
  for (const auto* layers : {&params.point_layers, &params.head_layers}) {
    for (const Layer& l : *layers) {
      for (double w : l.w) reg += w * w;
    }
  }
  return reg;
}

double loss(const ModelParams& params, const std::vector<NbvSample>& batch,
            const std::vector<std::vector<double>>& predictions, double lambda) {
  if (batch.empty()) throw std::invalid_argument("loss: empty batch");
  if (predictions.size() != batch.size()) {
    throw std::invalid_argument("loss: predictions misaligned with batch");
  }
  double data = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::vector<double>& y = batch[i].gt;
    const std::vector<double>& yhat = predictions[i];
    if (y.size() != yhat.size()) throw std::invalid_argument("loss: prediction length mismatch");
    for (std::size_t j = 0; j < y.size(); ++j) {
      const double d = y[j] - yhat[j];
      data += d * d;
    }
  }
  data /= static_cast<double>(batch.size());
  return data + lambda * weight_squared_norm(params);
}

namespace {

ParamGrads zero_grads(const ModelParams& params) {
  ParamGrads g;
  for (const Layer& l : params.point_layers) g.point_layers.emplace_back(l.rows, l.cols);
  for (const Layer& l : params.head_layers) g.head_layers.emplace_back(l.rows, l.cols);
  return g;
}

// adds d(||y - yhat||^2)/dparams * weight into grads; returns the squared error
double backward_sample(const ModelParams& params, const NbvSample& sample,
                       const DropoutPlan& plan, double weight, ParamGrads& grads) {
  const Architecture& arch = params.arch;
  ForwardCache cache;
  const std::vector<double> yhat = forward(params, sample, &plan, &cache);
  const double scale = 1.0 / (1.0 - arch.dropout_rate);
  const std::size_t n = sample.partial.size();
  std::vector<std::uint64_t> bases(n);
  for (std::size_t i = 0; i < n; ++i) {
    bases[i] = point_mask_base(plan.seed, sample.partial.points[i]);
  }

  double sq = 0.0;
  std::vector<double> grad_a(yhat.size());
  for (std::size_t j = 0; j < yhat.size(); ++j) {
    const double e = yhat[j] - sample.gt[j];
    sq += e * e;
    grad_a[j] = weight * 2.0 * e;
  }

  // head stage, output layer first
  for (std::size_t li = params.head_layers.size(); li-- > 0;) {
    const Layer& layer = params.head_layers[li];
    Layer& g = grads.head_layers[li];
    const std::size_t out_w = static_cast<std::size_t>(layer.rows);
    const std::size_t in_w = static_cast<std::size_t>(layer.cols);
    const bool last = li + 1 == params.head_layers.size();

    std::vector<double> delta(out_w);
    for (std::size_t o = 0; o < out_w; ++o) {
      double d = grad_a[o];
      if (!last) {
        d *= plan.head_keep[li][o] ? scale : 0.0;
        d *= activate_grad(arch.activation, cache.head_z[li][o]);
      }
      delta[o] = d;
    }
    const std::vector<double>& input = cache.head_a[li];
    std::vector<double> grad_in(in_w, 0.0);
    for (std::size_t o = 0; o < out_w; ++o) {
      const double d = delta[o];
      g.b[o] += d;
      double* grow = &g.w[o * in_w];
      const double* wrow = &layer.w[o * in_w];
      for (std::size_t c = 0; c < in_w; ++c) {
        grow[c] += d * input[c];
        grad_in[c] += wrow[c] * d;
      }
    }
    grad_a = std::move(grad_in);
  }

  // split off the view_state tail, route pooled gradient to winning points
  const std::size_t feat_w = cache.pooled.size();
  std::vector<double> grad_points(n * feat_w, 0.0);
  for (std::size_t o = 0; o < feat_w; ++o) {
    grad_points[static_cast<std::size_t>(cache.pool_argmax[o]) * feat_w + o] = grad_a[o];
  }

  std::vector<double> grad_cur = std::move(grad_points);
  std::size_t cur_w = feat_w;
  for (std::size_t li = params.point_layers.size(); li-- > 0;) {
    const Layer& layer = params.point_layers[li];
    Layer& g = grads.point_layers[li];
    const std::size_t out_w = static_cast<std::size_t>(layer.rows);
    const std::size_t in_w = static_cast<std::size_t>(layer.cols);
    (void)cur_w;

    const std::vector<double>& input = cache.point_a[li];
    std::vector<double> grad_in(n * in_w, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t o = 0; o < out_w; ++o) {
        double d = grad_cur[i * out_w + o];
        if (d == 0.0) continue;
        d *= point_mask_keep(bases[i], li, o, arch.dropout_rate) ? scale : 0.0;
        d *= activate_grad(arch.activation, cache.point_z[li][i * out_w + o]);
        if (d == 0.0) continue;
        g.b[o] += d;
        double* grow = &g.w[o * in_w];
        const double* wrow = &layer.w[o * in_w];
        const double* x = &input[i * in_w];
        double* gin = &grad_in[i * in_w];
        for (std::size_t c = 0; c < in_w; ++c) {
          grow[c] += d * x[c];
          gin[c] += wrow[c] * d;
        }
      }
    }
    grad_cur = std::move(grad_in);
    cur_w = in_w;
  }
  return sq;
}

void add_regularizer(const ModelParams& params, double lambda, ParamGrads& grads) {
  auto add = [&](const std::vector<Layer>& layers, std::vector<Layer>& gs) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t k = 0; k < layers[l].w.size(); ++k) {
        gs[l].w[k] += 2.0 * lambda * layers[l].w[k];
      }
    }
  };
  add(params.point_layers, grads.point_layers);
  add(params.head_layers, grads.head_layers);
}

}  // namespace

ParamGrads backward(const ModelParams& params, const std::vector<NbvSample>& batch,
                    const std::vector<DropoutPlan>& plans, double lambda) {
  if (batch.empty()) throw std::invalid_argument("backward: empty batch");
  if (plans.size() != batch.size()) {
    throw std::invalid_argument("backward: plans misaligned with batch");
  }
  ParamGrads grads = zero_grads(params);
  const double weight = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    backward_sample(params, batch[i], plans[i], weight, grads);
  }
  add_regularizer(params, lambda, grads);
  return grads;
}

double evaluate_loss(const ModelParams& params, const std::vector<NbvSample>& set,
                     double lambda) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> preds;
  preds.reserve(set.size());
  for (const NbvSample& s : set) preds.push_back(forward(params, s));
  return loss(params, set, preds, lambda);
}

ModelParams train(const Architecture& arch, const std::vector<NbvSample>& train_set,
                  const std::vector<NbvSample>& valid_set, const TrainConfig& config,
                  std::vector<EpochLog>* log) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (config.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

  ModelParams params = init_params(arch, config.seed);
  ParamGrads m = zero_grads(params), v = zero_grads(params);
  Rng shuffle_rng = Rng(config.seed).child("shuffle");
  Rng dropout_rng = Rng(config.seed).child("dropout");

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);

      ParamGrads grads = zero_grads(params);
      double batch_sq = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const DropoutPlan plan = make_dropout_plan(arch, dropout_rng.bits());
        batch_sq += backward_sample(params, train_set[order[k]], plan, weight, grads);
      }
      if (!std::isfinite(batch_sq)) throw NumericError("train: loss diverged to non-finite");
      add_regularizer(params, config.lambda, grads);

      params.step += 1;
      const double t = static_cast<double>(params.step);
      const double bc1 = 1.0 - std::pow(kBeta1, t);
      const double bc2 = 1.0 - std::pow(kBeta2, t);
      auto update = [&](std::vector<Layer>& ps, std::vector<Layer>& gs, std::vector<Layer>& ms,
                        std::vector<Layer>& vs) {
        for (std::size_t l = 0; l < ps.size(); ++l) {
          auto step_one = [&](std::vector<double>& p, const std::vector<double>& g,
                              std::vector<double>& mm, std::vector<double>& vv) {
            for (std::size_t k = 0; k < p.size(); ++k) {
              mm[k] = kBeta1 * mm[k] + (1.0 - kBeta1) * g[k];
              vv[k] = kBeta2 * vv[k] + (1.0 - kBeta2) * g[k] * g[k];
              p[k] -= config.learning_rate * (mm[k] / bc1) / (std::sqrt(vv[k] / bc2) + kEps);
            }
          };
          step_one(ps[l].w, gs[l].w, ms[l].w, vs[l].w);
          step_one(ps[l].b, gs[l].b, ms[l].b, vs[l].b);
        }
      };
      update(params.point_layers, grads.point_layers, m.point_layers, v.point_layers);
      update(params.head_layers, grads.head_layers, m.head_layers, v.head_layers);
    }

    if (log) {
      EpochLog entry;
      entry.epoch = epoch + 1;
      entry.train_loss = evaluate_loss(params, train_set, config.lambda);
      entry.valid_loss = evaluate_loss(params, valid_set, config.lambda);
      if (!std::isfinite(entry.train_loss)) {
        throw NumericError("train: loss diverged to non-finite");
      }
      log->push_back(entry);
    }
  }
  return params;
}

// --- checkpointing ---

namespace {

nlohmann::json layers_to_json(const std::vector<Layer>& layers) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Layer& l : layers) {
    arr.push_back({{"rows", l.rows}, {"cols", l.cols}, {"w", l.w}, {"b", l.b}});
  }
  return arr;
}

std::vector<Layer> layers_from_json(const nlohmann::json& arr, const std::vector<int>& widths) {
  if (!arr.is_array() || arr.size() + 1 != widths.size()) {
    throw DataError("checkpoint: layer count does not match architecture");
  }
  std::vector<Layer> out;
  for (std::size_t l = 0; l < arr.size(); ++l) {
    const nlohmann::json& j = arr[l];
    Layer layer(widths[l + 1], widths[l]);
    if (j.value("rows", -1) != layer.rows || j.value("cols", -1) != layer.cols) {
      throw DataError("checkpoint: layer shape mismatch");
    }
    const auto& w = j.at("w");
    const auto& b = j.at("b");
    if (!w.is_array() || w.size() != layer.w.size() || !b.is_array() ||
        b.size() != layer.b.size()) {
      throw DataError("checkpoint: weight array size mismatch");
    }
    for (std::size_t k = 0; k < layer.w.size(); ++k) layer.w[k] = w[k].get<double>();
    for (std::size_t k = 0; k < layer.b.size(); ++k) layer.b[k] = b[k].get<double>();
    out.push_back(std::move(layer));
  }
  return out;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  if (!params.finite()) throw NumericError("refusing to save non-finite parameters");
  nlohmann::json j;
  j["architecture"] = {
      {"per_point", params.arch.per_point},
      {"head", params.arch.head},
      {"dropout_rate", params.arch.dropout_rate},
      {"activation", params.arch.activation == Activation::kRelu ? "relu" : "identity"}};
  j["seed"] = params.seed;
  j["step"] = params.step;
  j["point_layers"] = layers_to_json(params.point_layers);
  j["head_layers"] = layers_to_json(params.head_layers);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << j.dump() << '\n';
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint json: " + e.what());
  }
  ModelParams params;
  try {
    const nlohmann::json& a = j.at("architecture");
    params.arch.per_point = a.at("per_point").get<std::vector<int>>();
    params.arch.head = a.at("head").get<std::vector<int>>();
    params.arch.dropout_rate = a.at("dropout_rate").get<double>();
    const std::string act = a.value("activation", "relu");
    params.arch.activation = act == "identity" ? Activation::kIdentity : Activation::kRelu;
    params.seed = j.at("seed").get<std::uint64_t>();
    params.step = j.at("step").get<std::int64_t>();
    validate_architecture(params.arch);
    params.point_layers = layers_from_json(j.at("point_layers"), params.arch.per_point);
    params.head_layers = layers_from_json(j.at("head_layers"), params.arch.head);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad checkpoint structure: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": bad checkpoint architecture: " + e.what());
  }
  if (!params.finite()) throw NumericError(path + ": checkpoint holds non-finite parameters");
  return params;
}

}  // namespace nbv
