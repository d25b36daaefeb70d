#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nbv/dataset.hpp"

namespace nbv {

enum class Activation { kRelu, kIdentity };

// Shared per-point MLP -> channelwise max-pool -> concat view_state -> head
// MLP. head.front() must equal per_point.back() + head.back(); head.back() is
// n_v. Dropout follows every per-point layer and every hidden head layer.
struct Architecture {
  std::vector<int> per_point = {3, 64, 128};
  std::vector<int> head = {128 + 33, 128, 64, 33};
  double dropout_rate = 0.5;
  Activation activation = Activation::kRelu;

  int n_views() const { return head.back(); }
};

// Throws std::invalid_argument on inconsistent shapes or dropout_rate >= 1.
void validate_architecture(const Architecture& arch);

// y = W x + b with W stored row-major (rows x cols).
struct Layer {
  int rows = 0, cols = 0;
  std::vector<double> w;
  std::vector<double> b;

  Layer() = default;
  Layer(int r, int c) : rows(r), cols(c), w(static_cast<std::size_t>(r) * c, 0.0), b(r, 0.0) {}
  double& at(int r, int c) { return w[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return w[static_cast<std::size_t>(r) * cols + c]; }
};

struct ModelParams {
  Architecture arch;
  std::vector<Layer> point_layers;
  std::vector<Layer> head_layers;
  std::uint64_t seed = 0;
  std::int64_t step = 0;

  bool finite() const;
};

// Uniform in +-sqrt(6/fan_in), zero biases; deterministic for (arch, seed).
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

// Keep masks for one stochastic pass. Head hidden layers carry explicit
// per-channel masks; the linear output never drops. Per-point-stage masks are
// derived per activation from the seed and the point's own coordinates, so a
// permutation of the cloud carries its masks with it and forward stays exactly
// permutation invariant in train mode too.
struct DropoutPlan {
  std::uint64_t seed = 0;
  std::vector<std::vector<std::uint8_t>> head_keep;
};

DropoutPlan make_dropout_plan(const Architecture& arch, std::uint64_t seed);

// Folds a point's coordinate bits into the plan seed.
std::uint64_t point_mask_base(std::uint64_t plan_seed, const Vec3& p);

// Keep decision for one per-point-stage activation; rate 0 always keeps.
bool point_mask_keep(std::uint64_t base, std::size_t layer, std::size_t channel, double rate);

// Intermediates needed by backward; filled by forward when non-null.
struct ForwardCache {
  std::vector<std::vector<double>> point_z;   // per layer, n_points x width
  std::vector<std::vector<double>> point_a;   // post activation/dropout
  std::vector<double> pooled;                 // per_point.back()
  std::vector<int> pool_argmax;               // winning point per channel
  std::vector<std::vector<double>> head_z;
  std::vector<std::vector<double>> head_a;    // head_a[0] is pooled ++ view_state
  std::vector<double> output;
};

// plan == nullptr: deterministic mode (no masks, no scaling). plan != nullptr:
// inverted dropout, activations scaled by 1/(1-dropout_rate).
std::vector<double> forward(const ModelParams& params, const NbvSample& sample,
                            const DropoutPlan* plan = nullptr, ForwardCache* cache = nullptr);

// (1/n_s) sum_i ||y_i - yhat_i||^2 + lambda * sum w^2 (biases excluded).
double loss(const ModelParams& params, const std::vector<NbvSample>& batch,
            const std::vector<std::vector<double>>& predictions, double lambda);

struct ParamGrads {
  std::vector<Layer> point_layers;
  std::vector<Layer> head_layers;
};

// Exact gradient of loss() for the given fixed plans (one per batch sample).
ParamGrads backward(const ModelParams& params, const std::vector<NbvSample>& batch,
                    const std::vector<DropoutPlan>& plans, double lambda);

struct TrainConfig {
  int epochs = 300;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double lambda = 1e-4;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double valid_loss = 0.0;
};

// Adam over seeded-shuffle minibatches; single-threaded. Per-epoch losses are
// deterministic (dropout off) full-set Eq-style losses. Throws NumericError on
// divergence.
ModelParams train(const Architecture& arch, const std::vector<NbvSample>& train_set,
                  const std::vector<NbvSample>& valid_set, const TrainConfig& config,
                  std::vector<EpochLog>* log = nullptr);

// Deterministic-mode loss over a whole set.
double evaluate_loss(const ModelParams& params, const std::vector<NbvSample>& set,
                     double lambda);

// sum of w^2 over every weight matrix, biases excluded.
double weight_squared_norm(const ModelParams& params);

// JSON checkpoint; round-trips bit-exact.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace nbv
