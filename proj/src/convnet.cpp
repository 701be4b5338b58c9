#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "umat/classifiers.hpp"
#include "umat/error.hpp"
#include "umat/parallel.hpp"
#include "umat/rng.hpp"

namespace umat {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

struct StageDims {
  int c_in;
  int c_out;
  int side;        // input side of the stage
  int64_t w_off;   // weight offset into the flat parameter vector
  int64_t b_off;
};

struct NetDims {
  std::vector<StageDims> stages;
  int64_t head_w_off = 0;
  int64_t head_b_off = 0;
  int feat_dim = 0;
  int n_classes = 0;
  int64_t total = 0;
};

NetDims net_dims(const SmallConvNetConfig& config, int n_classes) {
  config.validate();
  if (n_classes < 2) throw ConfigError("convnet needs at least 2 classes");
  NetDims dims;
  int64_t off = 0;
  int c_in = 3;
  int side = config.input_side;
  for (int c_out : config.stage_channels) {
    StageDims s{c_in, c_out, side, off, off + static_cast<int64_t>(c_out) * c_in * 9};
    off = s.b_off + c_out;
    dims.stages.push_back(s);
    c_in = c_out;
    side /= 2;
  }
  dims.feat_dim = c_in;
  dims.n_classes = n_classes;
  dims.head_w_off = off;
  dims.head_b_off = off + static_cast<int64_t>(n_classes) * c_in;
  dims.total = dims.head_b_off + n_classes;
  return dims;
}

// im2col with replicate padding: column p = y*side+x holds the 3x3 tap
// neighborhood of pixel (x, y) for every input channel.
template <typename T>
void im2col(const T* input, int c_in, int side, Mat<T>& col) {
  col.resize(static_cast<int64_t>(c_in) * 9, static_cast<int64_t>(side) * side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int64_t p = static_cast<int64_t>(y) * side + x;
      for (int c = 0; c < c_in; ++c) {
        const T* plane = input + static_cast<int64_t>(c) * side * side;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = std::clamp(y + dy, 0, side - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, side - 1);
            col(static_cast<int64_t>(c) * 9 + (dy + 1) * 3 + (dx + 1), p) =
                plane[static_cast<int64_t>(yy) * side + xx];
          }
        }
      }
    }
}

template <typename T>
void col2im_add(const Mat<T>& dcol, int c_in, int side, T* dinput) {
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const int64_t p = static_cast<int64_t>(y) * side + x;
      for (int c = 0; c < c_in; ++c) {
        T* plane = dinput + static_cast<int64_t>(c) * side * side;
        for (int dy = -1; dy <= 1; ++dy) {
          const int yy = std::clamp(y + dy, 0, side - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const int xx = std::clamp(x + dx, 0, side - 1);
            plane[static_cast<int64_t>(yy) * side + xx] +=
                dcol(static_cast<int64_t>(c) * 9 + (dy + 1) * 3 + (dx + 1), p);
          }
        }
      }
    }
}

template <typename T>
void mean_pool2(const Mat<T>& act, int c_out, int side, std::vector<T>& pooled) {
  const int half = side / 2;
  pooled.assign(static_cast<size_t>(c_out) * half * half, T(0));
  for (int c = 0; c < c_out; ++c)
    for (int y = 0; y < half; ++y)
      for (int x = 0; x < half; ++x) {
        const int64_t p0 = static_cast<int64_t>(2 * y) * side + 2 * x;
        const T sum = act(c, p0) + act(c, p0 + 1) + act(c, p0 + side) + act(c, p0 + side + 1);
        pooled[static_cast<size_t>(c) * half * half + static_cast<size_t>(y) * half + x] =
            sum / T(4);
      }
}

// Parameters live in Eigen-owned storage during all matrix math. Eigen's own
// allocations are always maximally aligned, so kernel traversal (and with it
// the floating-point summation order) depends only on the matrix dimensions.
// Mapping std::vector memory directly would make results vary with the heap
// address of the buffer under wide SIMD builds.
template <typename T>
struct NetParams {
  std::vector<MatRM<T>> stage_w;
  std::vector<Vec<T>> stage_b;
  MatRM<T> head_w;
  Vec<T> head_b;
};

template <typename T>
NetParams<T> unpack_params(const NetDims& dims, const T* flat) {
  NetParams<T> p;
  p.stage_w.reserve(dims.stages.size());
  p.stage_b.reserve(dims.stages.size());
  for (const StageDims& sd : dims.stages) {
    p.stage_w.emplace_back(
        Eigen::Map<const MatRM<T>>(flat + sd.w_off, sd.c_out, static_cast<int64_t>(sd.c_in) * 9));
    p.stage_b.emplace_back(Eigen::Map<const Vec<T>>(flat + sd.b_off, sd.c_out));
  }
  p.head_w = Eigen::Map<const MatRM<T>>(flat + dims.head_w_off, dims.n_classes, dims.feat_dim);
  p.head_b = Eigen::Map<const Vec<T>>(flat + dims.head_b_off, dims.n_classes);
  return p;
}

template <typename T>
NetParams<T> zero_grads(const NetDims& dims) {
  NetParams<T> g;
  for (const StageDims& sd : dims.stages) {
    g.stage_w.emplace_back(MatRM<T>::Zero(sd.c_out, static_cast<int64_t>(sd.c_in) * 9));
    g.stage_b.emplace_back(Vec<T>::Zero(sd.c_out));
  }
  g.head_w = MatRM<T>::Zero(dims.n_classes, dims.feat_dim);
  g.head_b = Vec<T>::Zero(dims.n_classes);
  return g;
}

// Row-major matrix storage matches the flat parameter layout exactly.
template <typename T>
void flatten_add(const NetDims& dims, const NetParams<T>& g, T* out) {
  for (size_t s = 0; s < dims.stages.size(); ++s) {
    const StageDims& sd = dims.stages[s];
    const T* w = g.stage_w[s].data();
    for (int64_t i = 0; i < sd.b_off - sd.w_off; ++i) out[sd.w_off + i] += w[i];
    const T* b = g.stage_b[s].data();
    for (int64_t i = 0; i < sd.c_out; ++i) out[sd.b_off + i] += b[i];
  }
  const T* hw = g.head_w.data();
  for (int64_t i = 0; i < dims.head_b_off - dims.head_w_off; ++i) out[dims.head_w_off + i] += hw[i];
  const T* hb = g.head_b.data();
  for (int64_t i = 0; i < dims.n_classes; ++i) out[dims.head_b_off + i] += hb[i];
}

template <typename T>
struct ExampleCache {
  std::vector<std::vector<T>> inputs;  // per-stage planar input
  std::vector<Mat<T>> cols;
  std::vector<Mat<T>> acts;  // post-rectifier
  std::vector<T> feat;
};

// Forward for one example; fills the cache when requested and returns logits.
// When preacts is given, every pre-rectifier value is appended in a fixed
// order so callers can compare activation sign patterns between evaluations.
template <typename T>
Vec<T> forward_example(const NetDims& dims, const NetParams<T>& params, const T* image, bool keep,
                       ExampleCache<T>* cache, std::vector<T>* preacts = nullptr) {
  const size_t n_stages = dims.stages.size();
  std::vector<T> cur(image, image + static_cast<int64_t>(3) * dims.stages[0].side *
                                        dims.stages[0].side);
  if (keep) {
    cache->inputs.resize(n_stages);
    cache->cols.resize(n_stages);
    cache->acts.resize(n_stages);
  }
  Mat<T> col, act;
  for (size_t s = 0; s < n_stages; ++s) {
    const StageDims& sd = dims.stages[s];
    if (keep) cache->inputs[s] = cur;
    im2col(cur.data(), sd.c_in, sd.side, col);
    act.noalias() = params.stage_w[s] * col;
    act.colwise() += params.stage_b[s];
    if (preacts) preacts->insert(preacts->end(), act.data(), act.data() + act.size());
    act = act.cwiseMax(T(0));
    mean_pool2(act, sd.c_out, sd.side, cur);
    if (keep) {
      cache->cols[s] = col;
      cache->acts[s] = act;
    }
  }
  const int last_side = dims.stages.back().side / 2;
  const int64_t area = static_cast<int64_t>(last_side) * last_side;
  Vec<T> feat(dims.feat_dim);
  for (int c = 0; c < dims.feat_dim; ++c) {
    T sum = T(0);
    for (int64_t i = 0; i < area; ++i) sum += cur[static_cast<size_t>(c) * area + i];
    feat[c] = sum / static_cast<T>(area);
  }
  if (keep) cache->feat.assign(feat.data(), feat.data() + dims.feat_dim);
  return params.head_w * feat + params.head_b;
}

// Softmax cross-entropy in double precision; writes dlogits (already divided
// by the batch size) and returns the per-example loss.
template <typename T>
double softmax_ce(const Vec<T>& logits, int label, int batch_size, Vec<T>& dlogits) {
  const int n = static_cast<int>(logits.size());
  double max_logit = -1e300;
  for (int i = 0; i < n; ++i) max_logit = std::max(max_logit, static_cast<double>(logits[i]));
  std::vector<double> p(n);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - max_logit);
    sum += p[i];
  }
  dlogits.resize(n);
  for (int i = 0; i < n; ++i) {
    p[i] /= sum;
    dlogits[i] = static_cast<T>((p[i] - (i == label ? 1.0 : 0.0)) / batch_size);
  }
  return -std::log(std::max(p[label], 1e-300));
}

template <typename T>
void backward_example(const NetDims& dims, const NetParams<T>& params,
                      const ExampleCache<T>& cache, const Vec<T>& dlogits, NetParams<T>& grads) {
  Eigen::Map<const Vec<T>> feat(cache.feat.data(), dims.feat_dim);
  grads.head_w.noalias() += dlogits * feat.transpose();
  grads.head_b += dlogits;

  Vec<T> dfeat = params.head_w.transpose() * dlogits;

  const int last_side = dims.stages.back().side / 2;
  const int64_t area = static_cast<int64_t>(last_side) * last_side;
  std::vector<T> dcur(static_cast<size_t>(dims.feat_dim) * area);
  for (int c = 0; c < dims.feat_dim; ++c)
    for (int64_t i = 0; i < area; ++i)
      dcur[static_cast<size_t>(c) * area + i] = dfeat[c] / static_cast<T>(area);

  Mat<T> dact, dcol;
  for (int s = static_cast<int>(dims.stages.size()) - 1; s >= 0; --s) {
    const StageDims& sd = dims.stages[s];
    const int half = sd.side / 2;
    dact.resize(sd.c_out, static_cast<int64_t>(sd.side) * sd.side);
    for (int c = 0; c < sd.c_out; ++c)
      for (int y = 0; y < half; ++y)
        for (int x = 0; x < half; ++x) {
          const T g = dcur[static_cast<size_t>(c) * half * half +
                           static_cast<size_t>(y) * half + x] /
                      T(4);
          const int64_t p0 = static_cast<int64_t>(2 * y) * sd.side + 2 * x;
          dact(c, p0) = g;
          dact(c, p0 + 1) = g;
          dact(c, p0 + sd.side) = g;
          dact(c, p0 + sd.side + 1) = g;
        }
    const Mat<T>& act = cache.acts[s];
    dact = dact.cwiseProduct((act.array() > T(0)).template cast<T>().matrix());

    grads.stage_w[static_cast<size_t>(s)].noalias() += dact * cache.cols[s].transpose();
    grads.stage_b[static_cast<size_t>(s)] += dact.rowwise().sum();

    dcol.noalias() = params.stage_w[static_cast<size_t>(s)].transpose() * dact;
    std::vector<T> dprev(static_cast<size_t>(sd.c_in) * sd.side * sd.side, T(0));
    col2im_add(dcol, sd.c_in, sd.side, dprev.data());
    dcur = std::move(dprev);
  }
}

template <typename T>
void check_batch(const NetDims& dims, const Tensor<T>& batch) {
  if (batch.shape.size() != 4 || batch.shape[1] != 3 ||
      batch.shape[2] != dims.stages[0].side || batch.shape[3] != dims.stages[0].side)
    throw ConfigError("batch shape must be [B, 3, S, S] with S = input_side");
  if (batch.numel() != static_cast<int64_t>(batch.data.size()))
    throw InternalError("tensor data does not match its shape");
}

constexpr int kGradChunk = 8;

}  // namespace

const char* precision_name(Precision p) {
  return p == Precision::single_prec ? "single" : "double";
}

Precision precision_from_name(const std::string& name) {
  if (name == "single") return Precision::single_prec;
  if (name == "double") return Precision::double_prec;
  throw ConfigError("unknown precision: " + name);
}

void SmallConvNetConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError("stage_channels empty");
  for (int c : stage_channels)
    if (c < 1) throw ConfigError("stage channel counts must be positive");
  const int factor = 1 << stage_channels.size();
  if (input_side < factor || input_side % factor != 0)
    throw ConfigError("input_side must be a positive multiple of " + std::to_string(factor));
}

nlohmann::json SmallConvNetConfig::to_json() const {
  return {{"input_side", input_side}, {"stage_channels", stage_channels}};
}

SmallConvNetConfig SmallConvNetConfig::from_json(const nlohmann::json& j) {
  SmallConvNetConfig config;
  config.input_side = j.at("input_side").get<int>();
  config.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  config.validate();
  return config;
}

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!allow_any_batch_size && (batch_size < 32 || batch_size > 256))
    throw ConfigError("batch_size outside [32, 256]; set allow_any_batch_size to override");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"warmup_epochs", warmup_epochs},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"seed", seed},
          {"allow_any_batch_size", allow_any_batch_size}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig config;
  config.lr = j.value("lr", 1e-3);
  config.warmup_epochs = j.value("warmup_epochs", 2);
  config.epochs = j.value("epochs", 200);
  config.batch_size = j.value("batch_size", 64);
  config.seed = j.value("seed", 0ull);
  config.allow_any_batch_size = j.value("allow_any_batch_size", false);
  config.validate();
  return config;
}

int64_t convnet_param_count(const SmallConvNetConfig& config, int n_classes) {
  return net_dims(config, n_classes).total;
}

double lr_at_step(const TrainConfig& config, int64_t step, int64_t total_steps,
                  int64_t warmup_steps) {
  if (step < warmup_steps) return config.lr * static_cast<double>(step) / warmup_steps;
  const double lr_end = config.lr / 100.0;
  const int64_t span = std::max<int64_t>(1, total_steps - 1 - warmup_steps);
  const double t = static_cast<double>(std::min(step, total_steps - 1) - warmup_steps) / span;
  return lr_end + (config.lr - lr_end) * 0.5 * (1.0 + std::cos(t * 3.14159265358979323846));
}

template <typename T>
std::vector<T> init_convnet_params(const SmallConvNetConfig& config, int n_classes,
                                    uint64_t seed) {
  const NetDims dims = net_dims(config, n_classes);
  std::vector<T> params(static_cast<size_t>(dims.total), T(0));
  Rng rng(hash_combine(seed, hash_str("init")));
  for (const StageDims& sd : dims.stages) {
    const double bound = std::sqrt(1.0 / (static_cast<double>(sd.c_in) * 9));
    for (int64_t i = sd.w_off; i < sd.b_off; ++i)
      params[static_cast<size_t>(i)] = static_cast<T>((rng.next_double() * 2.0 - 1.0) * bound);
  }
  const double bound = std::sqrt(1.0 / dims.feat_dim);
  for (int64_t i = dims.head_w_off; i < dims.head_b_off; ++i)
    params[static_cast<size_t>(i)] = static_cast<T>((rng.next_double() * 2.0 - 1.0) * bound);
  return params;
}

template <typename T>
Tensor<T> convnet_forward(const SmallConvNetConfig& config, const std::vector<T>& params,
                          int n_classes, const Tensor<T>& batch) {
  const NetDims dims = net_dims(config, n_classes);
  if (static_cast<int64_t>(params.size()) != dims.total)
    throw ConfigError("parameter vector has wrong length");
  check_batch(dims, batch);
  const NetParams<T> net = unpack_params<T>(dims, params.data());
  const int64_t b = batch.shape[0];
  const int64_t img_len = batch.numel() / std::max<int64_t>(1, b);
  Tensor<T> logits({b, n_classes});
  parallel_chunks(b, default_workers(), [&](int64_t i) {
    const Vec<T> row =
        forward_example<T>(dims, net, batch.data.data() + i * img_len, false, nullptr);
    for (int c = 0; c < n_classes; ++c) logits.data[static_cast<size_t>(i) * n_classes + c] = row[c];
  });
  return logits;
}

template <typename T>
double loss_serial(const NetDims& dims, const NetParams<T>& net, const Tensor<T>& batch,
                   const std::vector<int>& labels, std::vector<T>* preacts) {
  const int64_t b = batch.shape[0];
  const int64_t img_len = batch.numel() / std::max<int64_t>(1, b);
  double loss = 0;
  Vec<T> scratch;
  for (int64_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] >= dims.n_classes) throw ConfigError("label out of range");
    const Vec<T> row = forward_example<T>(dims, net, batch.data.data() + i * img_len, false,
                                          nullptr, preacts);
    loss += softmax_ce(row, labels[i], static_cast<int>(b), scratch);
  }
  return loss / static_cast<double>(b);
}

template <typename T>
double convnet_loss(const SmallConvNetConfig& config, const std::vector<T>& params, int n_classes,
                    const Tensor<T>& batch, const std::vector<int>& labels) {
  const NetDims dims = net_dims(config, n_classes);
  check_batch(dims, batch);
  if (static_cast<int64_t>(labels.size()) != batch.shape[0])
    throw ConfigError("labels do not match batch");
  const NetParams<T> net = unpack_params<T>(dims, params.data());
  return loss_serial<T>(dims, net, batch, labels, nullptr);
}

template <typename T>
double convnet_loss_and_grad(const SmallConvNetConfig& config, const std::vector<T>& params,
                             int n_classes, const Tensor<T>& batch,
                             const std::vector<int>& labels, std::vector<T>& grad, int workers) {
  const NetDims dims = net_dims(config, n_classes);
  check_batch(dims, batch);
  const int64_t b = batch.shape[0];
  if (static_cast<int64_t>(labels.size()) != b) throw ConfigError("labels do not match batch");
  for (int label : labels)
    if (label < 0 || label >= n_classes) throw ConfigError("label out of range");
  const int64_t img_len = batch.numel() / std::max<int64_t>(1, b);
  const NetParams<T> net = unpack_params<T>(dims, params.data());

  // Gradients accumulate into fixed-size per-chunk buffers that are reduced
  // in chunk order, so results do not depend on the worker count.
  const int64_t n_chunks = (b + kGradChunk - 1) / kGradChunk;
  std::vector<NetParams<T>> chunk_grads(static_cast<size_t>(n_chunks));
  std::vector<double> chunk_loss(static_cast<size_t>(n_chunks), 0.0);
  parallel_chunks(n_chunks, workers, [&](int64_t ci) {
    NetParams<T>& local = chunk_grads[static_cast<size_t>(ci)];
    local = zero_grads<T>(dims);
    ExampleCache<T> cache;
    Vec<T> dlogits;
    for (int64_t i = ci * kGradChunk; i < std::min(b, (ci + 1) * kGradChunk); ++i) {
      const Vec<T> logits =
          forward_example<T>(dims, net, batch.data.data() + i * img_len, true, &cache);
      chunk_loss[static_cast<size_t>(ci)] +=
          softmax_ce(logits, labels[i], static_cast<int>(b), dlogits);
      backward_example<T>(dims, net, cache, dlogits, local);
    }
  });

  grad.assign(static_cast<size_t>(dims.total), T(0));
  double loss = 0;
  for (int64_t ci = 0; ci < n_chunks; ++ci) {
    flatten_add<T>(dims, chunk_grads[static_cast<size_t>(ci)], grad.data());
    loss += chunk_loss[static_cast<size_t>(ci)];
  }
  return loss / static_cast<double>(b);
}

GradCheckResult gradient_check(const SmallConvNetConfig& config, int n_classes, int batch,
                               uint64_t seed, Precision precision, int n_coords) {
  const NetDims dims = net_dims(config, n_classes);
  Rng rng(hash_combine(seed, hash_str("gradcheck")));

  // Evaluation point: perturbed parameters, random batch, random labels, plus
  // the analytic gradient at that point. A contaminated stencil is retried at
  // a fresh point; retrying the same point would re-evaluate the identical
  // five samples forever.
  std::vector<double> params_d;
  Tensor<double> batch_d({batch, 3, config.input_side, config.input_side});
  std::vector<int> labels(batch);
  std::vector<double> grad_d;
  const auto draw_point = [&] {
    params_d = init_convnet_params<double>(config, n_classes, seed);
    for (double& p : params_d) p += 0.02 * rng.next_gaussian();
    for (double& v : batch_d.data) v = rng.next_double();
    for (int& l : labels) l = static_cast<int>(rng.next_below(n_classes));
    if (precision == Precision::single_prec) {
      std::vector<float> params_f(params_d.begin(), params_d.end());
      // Quantize the shared parameter point to float so both sides evaluate
      // the same function input.
      for (size_t i = 0; i < params_d.size(); ++i) params_d[i] = params_f[i];
      Tensor<float> batch_f({batch, 3, config.input_side, config.input_side});
      for (size_t i = 0; i < batch_d.data.size(); ++i) {
        batch_f.data[i] = static_cast<float>(batch_d.data[i]);
        batch_d.data[i] = batch_f.data[i];
      }
      std::vector<float> grad_f;
      convnet_loss_and_grad<float>(config, params_f, n_classes, batch_f, labels, grad_f, 1);
      grad_d.assign(grad_f.begin(), grad_f.end());
    } else {
      convnet_loss_and_grad<double>(config, params_d, n_classes, batch_d, labels, grad_d, 1);
    }
  };

  // One evaluation of the reference loss, recording every pre-rectifier value.
  const auto loss_at = [&](int64_t coord, double value, std::vector<double>& preacts) {
    const double saved = params_d[static_cast<size_t>(coord)];
    params_d[static_cast<size_t>(coord)] = value;
    preacts.clear();
    const NetParams<double> net = unpack_params<double>(dims, params_d.data());
    const double loss = loss_serial<double>(dims, net, batch_d, labels, &preacts);
    params_d[static_cast<size_t>(coord)] = saved;
    return loss;
  };

  // Round-robin over parameter blocks so every layer's weights and biases are
  // probed, not just the largest block.
  std::vector<std::pair<int64_t, int64_t>> blocks;
  for (const StageDims& sd : dims.stages) {
    blocks.emplace_back(sd.w_off, sd.b_off);
    blocks.emplace_back(sd.b_off, sd.b_off + sd.c_out);
  }
  blocks.emplace_back(dims.head_w_off, dims.head_b_off);
  blocks.emplace_back(dims.head_b_off, dims.total);

  GradCheckResult result;
  int attempts = 0;
  const int max_attempts = n_coords * 100;
  std::vector<std::vector<double>> pre(5);
  size_t cursor = 0;
  draw_point();
  while (result.coords_checked < n_coords && attempts < max_attempts) {
    ++attempts;
    const auto [lo, hi] = blocks[cursor % blocks.size()];
    const int64_t coord = lo + static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(hi - lo)));
    const double p = params_d[static_cast<size_t>(coord)];
    const double h = 1e-3 * std::max(1.0, std::fabs(p));
    const double f_2 = loss_at(coord, p - 2 * h, pre[0]);
    const double f_1 = loss_at(coord, p - h, pre[1]);
    loss_at(coord, p, pre[2]);
    const double f1 = loss_at(coord, p + h, pre[3]);
    const double f2 = loss_at(coord, p + 2 * h, pre[4]);

    // The five samples lie on a single smooth branch of the piecewise-smooth
    // loss exactly when every rectifier keeps its sign across all of them.
    // Units that respond to the probed coordinate must also clear a small
    // margin so that single-precision rounding cannot flip their sign.
    bool clean = true;
    for (size_t u = 0; u < pre[2].size() && clean; ++u) {
      const bool sign0 = pre[0][u] > 0;
      double lo_abs = 1e300, lo_val = pre[0][u], hi_val = pre[0][u];
      for (int e = 0; e < 5; ++e) {
        const double v = pre[e][u];
        if ((v > 0) != sign0) { clean = false; break; }
        lo_abs = std::min(lo_abs, std::fabs(v));
        lo_val = std::min(lo_val, v);
        hi_val = std::max(hi_val, v);
      }
      if (clean && hi_val > lo_val && lo_abs < 1e-5) clean = false;
    }
    if (!clean) {
      draw_point();
      continue;
    }

    const double d5 = (f_2 - 8 * f_1 + 8 * f1 - f2) / (12 * h);
    const double g = grad_d[static_cast<size_t>(coord)];
    // Coordinates whose gradient magnitude sits below the floor are held to
    // an absolute tolerance of floor * rel_tol; the finite-difference noise
    // floor itself is around 1e-12 at this step size.
    const double rel = std::fabs(g - d5) / std::max({std::fabs(g), std::fabs(d5), 1e-4});
    result.max_rel_error = std::max(result.max_rel_error, rel);
    ++result.coords_checked;
    ++cursor;
  }
  if (result.coords_checked < n_coords)
    throw InternalError("gradient_check: could not find enough kink-free coordinates");
  return result;
}

template std::vector<float> init_convnet_params<float>(const SmallConvNetConfig&, int, uint64_t);
template std::vector<double> init_convnet_params<double>(const SmallConvNetConfig&, int, uint64_t);
template Tensor<float> convnet_forward<float>(const SmallConvNetConfig&, const std::vector<float>&,
                                              int, const Tensor<float>&);
template Tensor<double> convnet_forward<double>(const SmallConvNetConfig&,
                                                const std::vector<double>&, int,
                                                const Tensor<double>&);
template double convnet_loss<float>(const SmallConvNetConfig&, const std::vector<float>&, int,
                                    const Tensor<float>&, const std::vector<int>&);
template double convnet_loss<double>(const SmallConvNetConfig&, const std::vector<double>&, int,
                                     const Tensor<double>&, const std::vector<int>&);
template double convnet_loss_and_grad<float>(const SmallConvNetConfig&, const std::vector<float>&,
                                             int, const Tensor<float>&, const std::vector<int>&,
                                             std::vector<float>&, int);
template double convnet_loss_and_grad<double>(const SmallConvNetConfig&,
                                              const std::vector<double>&, int,
                                              const Tensor<double>&, const std::vector<int>&,
                                              std::vector<double>&, int);

}  // namespace umat
