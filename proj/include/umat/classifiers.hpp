#pragma once

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

#include "umat/dataset.hpp"
#include "umat/image.hpp"
#include "umat/transforms.hpp"

namespace umat {

enum class Precision { single_prec, double_prec };
const char* precision_name(Precision p);
Precision precision_from_name(const std::string& name);

template <typename T>
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    data.resize(static_cast<size_t>(n));
  }
  int64_t numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
  }
};

// Four conv stages (3x3, stride 1, replicate padding) each followed by a
// rectifier and 2x2 mean pooling, then global mean pooling and an affine head.
struct SmallConvNetConfig {
  int input_side = 64;
  std::vector<int> stage_channels = {16, 32, 64, 128};

  void validate() const;
  nlohmann::json to_json() const;
  static SmallConvNetConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  double lr = 1e-3;
  int warmup_epochs = 2;
  int epochs = 200;
  int batch_size = 64;
  uint64_t seed = 0;
  bool allow_any_batch_size = false;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TrainMeta {
  uint64_t seed = 0;
  int epochs = 0;
  double final_loss = 0.0;
};

// Immutable trained model. kind is "convnet" or "hist"; parameters are kept
// in the precision they were trained in.
struct Checkpoint {
  std::string kind = "convnet";
  Precision precision = Precision::single_prec;
  SmallConvNetConfig arch;
  ClassKey label_key = ClassKey::model;
  int n_classes = 0;
  std::vector<std::string> labels;
  std::vector<float> params_f;
  std::vector<double> params_d;
  TrainMeta meta;

  size_t param_count() const {
    return precision == Precision::single_prec ? params_f.size() : params_d.size();
  }
};

int64_t convnet_param_count(const SmallConvNetConfig& config, int n_classes);

// Linear warmup from zero over warmup steps, then cosine decay to lr/100 at
// the final step.
double lr_at_step(const TrainConfig& config, int64_t step, int64_t total_steps,
                  int64_t warmup_steps);

template <typename T>
std::vector<T> init_convnet_params(const SmallConvNetConfig& config, int n_classes,
                                   uint64_t seed);

// batch shape [B, 3, S, S], planar channels, values in [0, 1].
template <typename T>
Tensor<T> convnet_forward(const SmallConvNetConfig& config, const std::vector<T>& params,
                          int n_classes, const Tensor<T>& batch);

template <typename T>
double convnet_loss(const SmallConvNetConfig& config, const std::vector<T>& params, int n_classes,
                    const Tensor<T>& batch, const std::vector<int>& labels);

template <typename T>
double convnet_loss_and_grad(const SmallConvNetConfig& config, const std::vector<T>& params,
                             int n_classes, const Tensor<T>& batch,
                             const std::vector<int>& labels, std::vector<T>& grad, int workers);

Tensor<float> forward_logits(const Checkpoint& ckpt, const Tensor<float>& batch);

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
};

// Compares the analytic gradient against a double-precision five-point
// central-difference oracle, cycling through every weight and bias block so
// all layers are probed. A probe only counts when all five stencil samples
// share one rectifier sign pattern (then they lie on a single smooth branch
// and the oracle is exact to truncation error); a contaminated stencil is
// retried at a freshly drawn parameter perturbation and batch. Gradients
// smaller than 1e-4 are held to an absolute tolerance of 1e-4 times the
// relative one.
GradCheckResult gradient_check(const SmallConvNetConfig& config, int n_classes, int batch,
                               uint64_t seed, Precision precision, int n_coords);

struct PredictResult {
  std::vector<int> predicted;           // index into ckpt.labels
  std::vector<double> posteriors;       // rows of size n_classes, sum 1
  std::vector<std::string> true_labels; // class of each row under the label key
};

Checkpoint train_convnet(const std::string& root, const std::vector<ManifestRow>& rows,
                         const TransformSpec& transform, const TrainConfig& train_config,
                         const SmallConvNetConfig& arch, Precision precision, int workers,
                         ClassKey label_key = ClassKey::model);

PredictResult predict(const Checkpoint& ckpt, const std::string& root,
                      const std::vector<ManifestRow>& rows, const TransformSpec& transform,
                      int workers);

// 3 per-channel 32-bin histograms, each L1-normalized, concatenated.
std::vector<double> hist_features(const FloatImage& img);

struct LogRegFit {
  std::vector<double> params;  // W row-major [n_classes x dims] then bias [n_classes]
  std::vector<double> losses;  // one entry per iteration
};

LogRegFit fit_multinomial_logreg(const std::vector<double>& features, int dims,
                                 const std::vector<int>& labels, int n_classes, int iters,
                                 double lr);

Checkpoint train_hist_baseline(const std::string& root, const std::vector<ManifestRow>& rows,
                               const TransformSpec& transform, int workers,
                               ClassKey label_key = ClassKey::model);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace umat
