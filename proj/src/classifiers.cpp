#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>

#include "umat/canonical_json.hpp"
#include "umat/classifiers.hpp"
#include "umat/error.hpp"
#include "umat/parallel.hpp"
#include "umat/png_io.hpp"
#include "umat/resize.hpp"
#include "umat/rng.hpp"

namespace umat {

namespace {

struct LoadedSet {
  std::vector<ImageBuffer> images;
  std::vector<std::string> row_classes;
};

// Reads, corrupts, and resizes every row up front. Corruption happens at the
// stored resolution; resizing to the model input side comes after, mirroring
// a corrupted corpus saved to disk and then fed to a classifier.
LoadedSet load_images(const std::string& root, const std::vector<ManifestRow>& rows,
                      const TransformSpec& transform, int target_side, ClassKey key,
                      int workers) {
  namespace fs = std::filesystem;
  LoadedSet set;
  set.images.resize(rows.size());
  set.row_classes.resize(rows.size());
  parallel_chunks(static_cast<int64_t>(rows.size()), workers, [&](int64_t i) {
    const ManifestRow& row = rows[static_cast<size_t>(i)];
    FloatImage img = to_float(read_png_file((fs::path(root) / row.path).string()));
    img = apply_transform(transform, img, row.path);
    if (target_side > 0 && (img.width != target_side || img.height != target_side))
      img = resize_bilinear(img, target_side, target_side);
    set.images[static_cast<size_t>(i)] = to_bytes(img);
    set.row_classes[static_cast<size_t>(i)] = class_of(row, key);
  });
  return set;
}

std::vector<std::string> distinct_sorted(const std::vector<std::string>& values) {
  std::set<std::string> seen(values.begin(), values.end());
  return {seen.begin(), seen.end()};
}

template <typename T>
void fill_planar(const ImageBuffer& img, T* out) {
  const int side = img.width;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        out[(static_cast<int64_t>(c) * side + y) * side + x] =
            static_cast<T>(img.at(x, y, c)) / T(255);
}

template <typename T>
void adam_update(std::vector<T>& params, const std::vector<T>& grad, std::vector<T>& m,
                 std::vector<T>& v, int64_t t, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
    const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    params[i] = static_cast<T>(static_cast<double>(params[i]) -
                               lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
  }
}

template <typename T>
Checkpoint train_convnet_impl(const std::string& root, const std::vector<ManifestRow>& rows,
                              const TransformSpec& transform, const TrainConfig& tc,
                              const SmallConvNetConfig& arch, Precision precision, int workers,
                              ClassKey label_key) {
  arch.validate();
  tc.validate();
  transform.validate();
  if (rows.empty()) throw ConfigError("train_convnet: no rows");

  const LoadedSet set = load_images(root, rows, transform, arch.input_side, label_key, workers);
  const std::vector<std::string> labels = distinct_sorted(set.row_classes);
  if (labels.size() < 2) throw ConfigError("train_convnet: need at least 2 classes");
  const int n_classes = static_cast<int>(labels.size());
  std::map<std::string, int> label_index;
  for (int i = 0; i < n_classes; ++i) label_index[labels[static_cast<size_t>(i)]] = i;
  std::vector<int> y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) y[i] = label_index.at(set.row_classes[i]);

  std::vector<T> params = init_convnet_params<T>(arch, n_classes, tc.seed);
  std::vector<T> m(params.size(), T(0)), v(params.size(), T(0)), grad;

  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t bs = tc.batch_size;
  const int64_t steps_per_epoch = (n + bs - 1) / bs;
  const int64_t total_steps = steps_per_epoch * tc.epochs;
  const int64_t warmup_steps = steps_per_epoch * tc.warmup_epochs;
  const int side = arch.input_side;
  const int64_t img_len = static_cast<int64_t>(3) * side * side;

  Rng shuffle_rng(hash_combine(tc.seed, hash_str("shuffle")));
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;

  int64_t step = 0;
  double epoch_loss = 0;
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    shuffle_rng.shuffle(perm);
    epoch_loss = 0;
    for (int64_t start = 0; start < n; start += bs) {
      const int64_t bsize = std::min(bs, n - start);
      Tensor<T> batch({bsize, 3, side, side});
      std::vector<int> batch_labels(static_cast<size_t>(bsize));
      for (int64_t e = 0; e < bsize; ++e) {
        const int64_t src = perm[static_cast<size_t>(start + e)];
        fill_planar(set.images[static_cast<size_t>(src)], batch.data.data() + e * img_len);
        batch_labels[static_cast<size_t>(e)] = y[static_cast<size_t>(src)];
      }
      const double lr = lr_at_step(tc, step, total_steps, warmup_steps);
      const double loss =
          convnet_loss_and_grad<T>(arch, params, n_classes, batch, batch_labels, grad, workers);
      if (!std::isfinite(loss))
        throw InternalError("non-finite training loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(start / bs) + ", lr " +
                            std::to_string(lr));
      adam_update(params, grad, m, v, step + 1, lr);
      epoch_loss += loss * static_cast<double>(bsize);
      ++step;
    }
  }

  Checkpoint ckpt;
  ckpt.kind = "convnet";
  ckpt.precision = precision;
  ckpt.arch = arch;
  ckpt.label_key = label_key;
  ckpt.n_classes = n_classes;
  ckpt.labels = labels;
  if constexpr (std::is_same_v<T, float>)
    ckpt.params_f = std::move(params);
  else
    ckpt.params_d = std::move(params);
  ckpt.meta = {tc.seed, tc.epochs, epoch_loss / static_cast<double>(n)};
  return ckpt;
}

void softmax_row(const double* logits, int n, double* out) {
  double max_logit = -1e300;
  for (int i = 0; i < n; ++i) max_logit = std::max(max_logit, logits[i]);
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

int argmax_lowest(const double* values, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <typename T>
void predict_convnet_batches(const Checkpoint& ckpt, const std::vector<T>& params,
                             const LoadedSet& set, PredictResult& result) {
  const int side = ckpt.arch.input_side;
  const int64_t img_len = static_cast<int64_t>(3) * side * side;
  const int64_t n = static_cast<int64_t>(set.images.size());
  const int64_t bs = 64;
  for (int64_t start = 0; start < n; start += bs) {
    const int64_t bsize = std::min(bs, n - start);
    Tensor<T> batch({bsize, 3, side, side});
    for (int64_t e = 0; e < bsize; ++e)
      fill_planar(set.images[static_cast<size_t>(start + e)], batch.data.data() + e * img_len);
    const Tensor<T> logits = convnet_forward<T>(ckpt.arch, params, ckpt.n_classes, batch);
    for (int64_t e = 0; e < bsize; ++e) {
      std::vector<double> row(static_cast<size_t>(ckpt.n_classes));
      for (int c = 0; c < ckpt.n_classes; ++c)
        row[static_cast<size_t>(c)] =
            static_cast<double>(logits.data[static_cast<size_t>(e * ckpt.n_classes + c)]);
      std::vector<double> post(static_cast<size_t>(ckpt.n_classes));
      softmax_row(row.data(), ckpt.n_classes, post.data());
      result.predicted[static_cast<size_t>(start + e)] = argmax_lowest(post.data(), ckpt.n_classes);
      std::copy(post.begin(), post.end(),
                result.posteriors.begin() + (start + e) * ckpt.n_classes);
    }
  }
}

void append_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t read_u32(const std::vector<uint8_t>& in, size_t& off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in.at(off++)) << (8 * i);
  return v;
}

uint64_t read_u64(const std::vector<uint8_t>& in, size_t& off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(in.at(off++)) << (8 * i);
  return v;
}

constexpr char kCheckpointMagic[8] = {'U', 'M', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

int64_t hist_param_count(int n_classes) { return static_cast<int64_t>(n_classes) * 96 + n_classes; }

}  // namespace

Tensor<float> forward_logits(const Checkpoint& ckpt, const Tensor<float>& batch) {
  if (ckpt.kind != "convnet") throw ConfigError("forward_logits requires a convnet checkpoint");
  if (ckpt.precision == Precision::single_prec)
    return convnet_forward<float>(ckpt.arch, ckpt.params_f, ckpt.n_classes, batch);
  Tensor<double> batch_d(batch.shape);
  for (size_t i = 0; i < batch.data.size(); ++i) batch_d.data[i] = batch.data[i];
  const Tensor<double> logits_d =
      convnet_forward<double>(ckpt.arch, ckpt.params_d, ckpt.n_classes, batch_d);
  Tensor<float> logits(logits_d.shape);
  for (size_t i = 0; i < logits_d.data.size(); ++i)
    logits.data[i] = static_cast<float>(logits_d.data[i]);
  return logits;
}

Checkpoint train_convnet(const std::string& root, const std::vector<ManifestRow>& rows,
                         const TransformSpec& transform, const TrainConfig& train_config,
                         const SmallConvNetConfig& arch, Precision precision, int workers,
                         ClassKey label_key) {
  if (precision == Precision::single_prec)
    return train_convnet_impl<float>(root, rows, transform, train_config, arch, precision,
                                     workers, label_key);
  return train_convnet_impl<double>(root, rows, transform, train_config, arch, precision, workers,
                                    label_key);
}

PredictResult predict(const Checkpoint& ckpt, const std::string& root,
                      const std::vector<ManifestRow>& rows, const TransformSpec& transform,
                      int workers) {
  if (ckpt.labels.empty()) throw ConfigError("predict: checkpoint has no labels");
  PredictResult result;
  result.predicted.resize(rows.size());
  result.posteriors.resize(rows.size() * static_cast<size_t>(ckpt.n_classes));
  result.true_labels.resize(rows.size());

  if (ckpt.kind == "convnet") {
    const LoadedSet set =
        load_images(root, rows, transform, ckpt.arch.input_side, ckpt.label_key, workers);
    for (size_t i = 0; i < rows.size(); ++i) result.true_labels[i] = set.row_classes[i];
    if (ckpt.precision == Precision::single_prec)
      predict_convnet_batches<float>(ckpt, ckpt.params_f, set, result);
    else
      predict_convnet_batches<double>(ckpt, ckpt.params_d, set, result);
    return result;
  }
  if (ckpt.kind != "hist") throw ConfigError("predict: unknown checkpoint kind " + ckpt.kind);

  namespace fs = std::filesystem;
  const int n_classes = ckpt.n_classes;
  parallel_chunks(static_cast<int64_t>(rows.size()), workers, [&](int64_t i) {
    const ManifestRow& row = rows[static_cast<size_t>(i)];
    FloatImage img = to_float(read_png_file((fs::path(root) / row.path).string()));
    img = apply_transform(transform, img, row.path);
    const std::vector<double> f = hist_features(img);
    std::vector<double> logits(static_cast<size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
      double acc = ckpt.params_d[static_cast<size_t>(n_classes) * 96 + c];
      for (int d = 0; d < 96; ++d)
        acc += ckpt.params_d[static_cast<size_t>(c) * 96 + d] * f[static_cast<size_t>(d)];
      logits[static_cast<size_t>(c)] = acc;
    }
    std::vector<double> post(static_cast<size_t>(n_classes));
    softmax_row(logits.data(), n_classes, post.data());
    result.predicted[static_cast<size_t>(i)] = argmax_lowest(post.data(), n_classes);
    std::copy(post.begin(), post.end(), result.posteriors.begin() + i * n_classes);
    result.true_labels[static_cast<size_t>(i)] = class_of(row, ckpt.label_key);
  });
  return result;
}

std::vector<double> hist_features(const FloatImage& img) {
  std::vector<double> features(96, 0.0);
  const int64_t pixels = static_cast<int64_t>(img.width) * img.height;
  if (pixels == 0) throw ConfigError("hist_features: empty image");
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int bin =
            std::clamp(static_cast<int>(img.at(x, y, c) * 32.0f), 0, 31);
        features[static_cast<size_t>(c) * 32 + bin] += 1.0;
      }
  for (double& f : features) f /= static_cast<double>(pixels);
  return features;
}

LogRegFit fit_multinomial_logreg(const std::vector<double>& features, int dims,
                                 const std::vector<int>& labels, int n_classes, int iters,
                                 double lr) {
  const int64_t n = static_cast<int64_t>(labels.size());
  if (n == 0) throw ConfigError("logreg: no examples");
  if (features.size() != static_cast<size_t>(n) * dims)
    throw ConfigError("logreg: feature matrix does not match label count");
  for (int label : labels)
    if (label < 0 || label >= n_classes) throw ConfigError("logreg: label out of range");

  using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  // Copy into Eigen-owned (maximally aligned) storage so kernel traversal and
  // summation order cannot vary with the heap address of the caller's buffer.
  const MatRM x = Eigen::Map<const MatRM>(features.data(), n, dims);
  MatRM w = MatRM::Zero(n_classes, dims);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n_classes);

  LogRegFit fit;
  fit.losses.reserve(static_cast<size_t>(iters));
  MatRM p(n, n_classes);
  for (int it = 0; it < iters; ++it) {
    p.noalias() = x * w.transpose();
    p.rowwise() += b.transpose();
    double loss = 0;
    for (int64_t i = 0; i < n; ++i) {
      double* row = p.data() + i * n_classes;
      softmax_row(row, n_classes, row);
      loss -= std::log(std::max(row[labels[static_cast<size_t>(i)]], 1e-300));
      row[labels[static_cast<size_t>(i)]] -= 1.0;
    }
    fit.losses.push_back(loss / static_cast<double>(n));
    p /= static_cast<double>(n);
    w.noalias() -= lr * (p.transpose() * x);
    b.noalias() -= lr * p.colwise().sum().transpose();
  }

  fit.params.resize(static_cast<size_t>(n_classes) * dims + n_classes);
  for (int c = 0; c < n_classes; ++c)
    for (int d = 0; d < dims; ++d)
      fit.params[static_cast<size_t>(c) * dims + d] = w(c, d);
  for (int c = 0; c < n_classes; ++c)
    fit.params[static_cast<size_t>(n_classes) * dims + c] = b(c);
  return fit;
}

Checkpoint train_hist_baseline(const std::string& root, const std::vector<ManifestRow>& rows,
                               const TransformSpec& transform, int workers, ClassKey label_key) {
  transform.validate();
  if (rows.empty()) throw ConfigError("train_hist_baseline: no rows");
  namespace fs = std::filesystem;

  std::vector<double> features(rows.size() * 96);
  std::vector<std::string> row_classes(rows.size());
  parallel_chunks(static_cast<int64_t>(rows.size()), workers, [&](int64_t i) {
    const ManifestRow& row = rows[static_cast<size_t>(i)];
    FloatImage img = to_float(read_png_file((fs::path(root) / row.path).string()));
    img = apply_transform(transform, img, row.path);
    const std::vector<double> f = hist_features(img);
    std::copy(f.begin(), f.end(), features.begin() + i * 96);
    row_classes[static_cast<size_t>(i)] = class_of(row, label_key);
  });

  const std::vector<std::string> labels = distinct_sorted(row_classes);
  if (labels.size() < 2) throw ConfigError("train_hist_baseline: need at least 2 classes");
  std::map<std::string, int> label_index;
  for (size_t i = 0; i < labels.size(); ++i) label_index[labels[i]] = static_cast<int>(i);
  std::vector<int> y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) y[i] = label_index.at(row_classes[i]);

  const LogRegFit fit =
      fit_multinomial_logreg(features, 96, y, static_cast<int>(labels.size()), 500, 0.1);

  Checkpoint ckpt;
  ckpt.kind = "hist";
  ckpt.precision = Precision::double_prec;
  ckpt.label_key = label_key;
  ckpt.n_classes = static_cast<int>(labels.size());
  ckpt.labels = labels;
  ckpt.params_d = fit.params;
  ckpt.meta = {0, 500, fit.losses.back()};
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json header{{"kind", ckpt.kind},
                        {"precision", precision_name(ckpt.precision)},
                        {"label_key", class_key_name(ckpt.label_key)},
                        {"n_classes", ckpt.n_classes},
                        {"labels", ckpt.labels},
                        {"meta",
                         {{"seed", ckpt.meta.seed},
                          {"epochs", ckpt.meta.epochs},
                          {"final_loss", ckpt.meta.final_loss}}}};
  if (ckpt.kind == "convnet") header["arch"] = ckpt.arch.to_json();
  const std::string header_str = canonical_dump(header);

  std::vector<uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  append_u32(out, kCheckpointVersion);
  append_u64(out, header_str.size());
  out.insert(out.end(), header_str.begin(), header_str.end());
  if (ckpt.precision == Precision::single_prec) {
    append_u64(out, ckpt.params_f.size());
    for (float v : ckpt.params_f) append_u32(out, std::bit_cast<uint32_t>(v));
  } else {
    append_u64(out, ckpt.params_d.size());
    for (double v : ckpt.params_d) append_u64(out, std::bit_cast<uint64_t>(v));
  }
  write_file_bytes(out, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  size_t off = 0;
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw DataError("checkpoint " + path + ": bad magic");
  off = 8;
  const uint32_t version = read_u32(bytes, off);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  const uint64_t header_len = read_u64(bytes, off);
  if (off + header_len > bytes.size()) throw DataError("checkpoint " + path + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<int64_t>(off),
                                   bytes.begin() + static_cast<int64_t>(off + header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": header parse error: " + e.what());
  }
  off += header_len;

  Checkpoint ckpt;
  try {
    ckpt.kind = header.at("kind").get<std::string>();
    ckpt.precision = precision_from_name(header.at("precision").get<std::string>());
    ckpt.label_key = class_key_from_name(header.at("label_key").get<std::string>());
    ckpt.n_classes = header.at("n_classes").get<int>();
    ckpt.labels = header.at("labels").get<std::vector<std::string>>();
    ckpt.meta.seed = header.at("meta").at("seed").get<uint64_t>();
    ckpt.meta.epochs = header.at("meta").at("epochs").get<int>();
    ckpt.meta.final_loss = header.at("meta").at("final_loss").get<double>();
    if (ckpt.kind == "convnet") ckpt.arch = SmallConvNetConfig::from_json(header.at("arch"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": malformed header: " + e.what());
  }

  const uint64_t count = read_u64(bytes, off);
  const size_t scalar = ckpt.precision == Precision::single_prec ? 4 : 8;
  if (off + count * scalar != bytes.size())
    throw DataError("checkpoint " + path + ": parameter payload size mismatch");

  int64_t expected = 0;
  if (ckpt.kind == "convnet")
    expected = convnet_param_count(ckpt.arch, ckpt.n_classes);
  else if (ckpt.kind == "hist")
    expected = hist_param_count(ckpt.n_classes);
  else
    throw DataError("checkpoint " + path + ": unknown kind " + ckpt.kind);
  if (static_cast<int64_t>(count) != expected)
    throw DataError("checkpoint " + path + ": expected " + std::to_string(expected) +
                    " parameters, found " + std::to_string(count));

  if (ckpt.precision == Precision::single_prec) {
    ckpt.params_f.resize(count);
    for (uint64_t i = 0; i < count; ++i)
      ckpt.params_f[i] = std::bit_cast<float>(read_u32(bytes, off));
  } else {
    ckpt.params_d.resize(count);
    for (uint64_t i = 0; i < count; ++i)
      ckpt.params_d[i] = std::bit_cast<double>(read_u64(bytes, off));
  }
  return ckpt;
}

}  // namespace umat
