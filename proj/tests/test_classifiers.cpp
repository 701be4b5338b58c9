#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "umat/classifiers.hpp"
#include "umat/error.hpp"
#include "umat/png_io.hpp"
#include "umat/rng.hpp"
#include "umat/synthgen.hpp"

using namespace umat;

namespace {

namespace fs = std::filesystem;

SmallConvNetConfig tiny_arch() {
  SmallConvNetConfig arch;
  arch.input_side = 32;
  arch.stage_channels = {8, 16};
  return arch;
}

Tensor<float> random_batch(int b, int side, uint64_t seed) {
  Tensor<float> batch({b, 3, side, side});
  Rng rng(seed);
  for (auto& v : batch.data) v = static_cast<float>(rng.next_double());
  return batch;
}

struct CorpusFixture {
  fs::path root;
  std::vector<ManifestRow> rows;

  CorpusFixture(const std::string& name, std::vector<GeneratorSignature> sigs, int per_cell,
                int size) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    CorpusSpec spec;
    spec.out_dir = root.string();
    spec.signatures = std::move(sigs);
    spec.per_cell = per_cell;
    spec.image_size = size;
    spec.seed = 404;
    rows = generate_corpus(spec, 1);
  }
  ~CorpusFixture() { fs::remove_all(root); }
};

double accuracy(const Checkpoint& ckpt, const PredictResult& result) {
  int correct = 0;
  for (size_t i = 0; i < result.predicted.size(); ++i)
    if (ckpt.labels[static_cast<size_t>(result.predicted[i])] == result.true_labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(result.predicted.size());
}

}  // namespace

TEST_CASE("parameter count follows the layer layout") {
  SmallConvNetConfig arch;
  arch.input_side = 64;
  arch.stage_channels = {16, 32, 64, 128};
  CHECK(convnet_param_count(arch, 5) == 448 + 4640 + 18496 + 73856 + 645);
  CHECK(convnet_param_count(tiny_arch(), 3) == (8 * 27 + 8) + (16 * 72 + 16) + (3 * 16 + 3));
}

TEST_CASE("config validation enforces divisibility") {
  SmallConvNetConfig arch = tiny_arch();
  arch.input_side = 30;
  CHECK_THROWS_AS(arch.validate(), ConfigError);
  arch.input_side = 0;
  CHECK_THROWS_AS(arch.validate(), ConfigError);
  TrainConfig tc;
  tc.batch_size = 16;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc.allow_any_batch_size = true;
  CHECK_NOTHROW(tc.validate());
}

TEST_CASE("zero parameters give zero logits and ln(n) loss") {
  const SmallConvNetConfig arch = tiny_arch();
  const int n_classes = 5;
  std::vector<float> params(static_cast<size_t>(convnet_param_count(arch, n_classes)), 0.0f);
  const Tensor<float> batch = random_batch(4, 32, 1);
  const Tensor<float> logits = convnet_forward<float>(arch, params, n_classes, batch);
  for (float v : logits.data) CHECK(v == 0.0f);

  const std::vector<int> labels = {0, 1, 2, 3};
  const double loss = convnet_loss<float>(arch, params, n_classes, batch, labels);
  CHECK(loss == doctest::Approx(std::log(5.0)).epsilon(1e-12));
}

TEST_CASE("a dominant head bias drives the loss to zero") {
  const SmallConvNetConfig arch = tiny_arch();
  const int n_classes = 3;
  std::vector<float> params(static_cast<size_t>(convnet_param_count(arch, n_classes)), 0.0f);
  params[params.size() - 3] = 50.0f;  // bias of class 0
  const Tensor<float> batch = random_batch(2, 32, 2);
  const double loss = convnet_loss<float>(arch, params, n_classes, batch, {0, 0});
  CHECK(loss < 1e-9);
}

TEST_CASE("forward is deterministic and batch equivariant") {
  const SmallConvNetConfig arch = tiny_arch();
  const int n_classes = 4;
  const std::vector<float> params = init_convnet_params<float>(arch, n_classes, 7);
  Tensor<float> batch = random_batch(3, 32, 3);
  const Tensor<float> a = convnet_forward<float>(arch, params, n_classes, batch);
  const Tensor<float> b = convnet_forward<float>(arch, params, n_classes, batch);
  CHECK(a.data == b.data);

  Tensor<float> swapped = batch;
  const int64_t len = 3 * 32 * 32;
  std::swap_ranges(swapped.data.begin(), swapped.data.begin() + len,
                   swapped.data.begin() + 2 * len);
  const Tensor<float> c = convnet_forward<float>(arch, params, n_classes, swapped);
  for (int k = 0; k < n_classes; ++k) {
    CHECK(c.data[static_cast<size_t>(k)] == a.data[static_cast<size_t>(2 * n_classes + k)]);
    CHECK(c.data[static_cast<size_t>(2 * n_classes + k)] == a.data[static_cast<size_t>(k)]);
  }
}

TEST_CASE("constant images reduce to an analytic channel recurrence") {
  const SmallConvNetConfig arch = tiny_arch();
  const int n_classes = 4;
  const std::vector<float> params = init_convnet_params<float>(arch, n_classes, 11);

  Tensor<float> batch({1, 3, 32, 32});
  for (auto& v : batch.data) v = 0.37f;
  const Tensor<float> logits = convnet_forward<float>(arch, params, n_classes, batch);

  // Replicate padding and mean pooling preserve constant channels, so the
  // whole net collapses to per-channel scalar recurrences.
  std::vector<double> value(3, 0.37);
  int64_t off = 0;
  int c_in = 3;
  for (int c_out : arch.stage_channels) {
    std::vector<double> next(static_cast<size_t>(c_out));
    const int64_t w_off = off, b_off = off + static_cast<int64_t>(c_out) * c_in * 9;
    for (int o = 0; o < c_out; ++o) {
      double acc = params[static_cast<size_t>(b_off + o)];
      for (int i = 0; i < c_in; ++i)
        for (int k = 0; k < 9; ++k)
          acc += static_cast<double>(
                     params[static_cast<size_t>(w_off + (static_cast<int64_t>(o) * c_in + i) * 9 + k)]) *
                 value[static_cast<size_t>(i)];
      next[static_cast<size_t>(o)] = std::max(0.0, acc);
    }
    value = std::move(next);
    off = b_off + c_out;
    c_in = c_out;
  }
  for (int k = 0; k < n_classes; ++k) {
    double acc = params[static_cast<size_t>(off + static_cast<int64_t>(n_classes) * c_in + k)];
    for (int i = 0; i < c_in; ++i)
      acc += static_cast<double>(params[static_cast<size_t>(off + static_cast<int64_t>(k) * c_in + i)]) *
             value[static_cast<size_t>(i)];
    CHECK(logits.data[static_cast<size_t>(k)] == doctest::Approx(acc).epsilon(1e-4));
  }
}

TEST_CASE("labels out of range are rejected") {
  const SmallConvNetConfig arch = tiny_arch();
  const std::vector<float> params = init_convnet_params<float>(arch, 3, 1);
  const Tensor<float> batch = random_batch(2, 32, 5);
  std::vector<float> grad;
  CHECK_THROWS_AS(convnet_loss<float>(arch, params, 3, batch, {0, 3}), ConfigError);
  CHECK_THROWS_AS(convnet_loss_and_grad<float>(arch, params, 3, batch, {-1, 0}, grad, 1),
                  ConfigError);
}

TEST_CASE("analytic gradients match finite differences") {
  // Small spatial size keeps the rectifier count low enough that kink-free
  // stencils are plentiful.
  SmallConvNetConfig arch;
  arch.input_side = 16;
  arch.stage_channels = {6, 12};
  const GradCheckResult single = gradient_check(arch, 3, 2, 17, Precision::single_prec, 50);
  CHECK(single.coords_checked == 50);
  CHECK(single.max_rel_error < 1e-3);

  const GradCheckResult dbl = gradient_check(arch, 3, 2, 18, Precision::double_prec, 50);
  CHECK(dbl.coords_checked == 50);
  CHECK(dbl.max_rel_error < 1e-6);
}

TEST_CASE("gradients are invariant to the worker count") {
  const SmallConvNetConfig arch = tiny_arch();
  const int n_classes = 3;
  const std::vector<float> params = init_convnet_params<float>(arch, n_classes, 23);
  const Tensor<float> batch = random_batch(20, 32, 6);
  std::vector<int> labels(20);
  for (int i = 0; i < 20; ++i) labels[i] = i % 3;
  std::vector<float> g1, g4;
  const double l1 = convnet_loss_and_grad<float>(arch, params, n_classes, batch, labels, g1, 1);
  const double l4 = convnet_loss_and_grad<float>(arch, params, n_classes, batch, labels, g4, 4);
  CHECK(l1 == l4);
  CHECK(g1 == g4);
}

TEST_CASE("learning rate trace: zero start, peak after warmup, floor at the end") {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.warmup_epochs = 2;
  const int64_t spe = 10, total = 100, warmup = 2 * spe;
  CHECK(lr_at_step(tc, 0, total, warmup) == 0.0);
  CHECK(lr_at_step(tc, warmup, total, warmup) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at_step(tc, total - 1, total, warmup) == doctest::Approx(1e-5).epsilon(1e-9));
  for (int64_t s = 1; s < warmup; ++s)
    CHECK(lr_at_step(tc, s, total, warmup) > lr_at_step(tc, s - 1, total, warmup));
  for (int64_t s = warmup + 1; s < total; ++s)
    CHECK(lr_at_step(tc, s, total, warmup) <= lr_at_step(tc, s - 1, total, warmup));
}

TEST_CASE("training separates palette-distinct classes and is reproducible") {
  CorpusFixture corpus("umat_cls_corpus", palette_only_signatures(2), 250, 32);
  SplitSpec split_spec;
  split_spec.train_per_class = 200;
  split_spec.test_per_class = 50;
  split_spec.seed = 1;
  const Split split = make_split(corpus.rows, split_spec);

  TrainConfig tc;
  tc.epochs = 10;
  tc.batch_size = 64;
  tc.seed = 5;
  SmallConvNetConfig arch = tiny_arch();

  const Checkpoint ckpt = train_convnet(corpus.root.string(), split.train, TransformSpec{}, tc,
                                        arch, Precision::single_prec, 1);
  CHECK(ckpt.labels == std::vector<std::string>{"p00", "p01"});
  CHECK(ckpt.meta.epochs == 10);
  CHECK(std::isfinite(ckpt.meta.final_loss));

  const PredictResult result =
      predict(ckpt, corpus.root.string(), split.test, TransformSpec{}, 1);
  CHECK(accuracy(ckpt, result) >= 0.95);
  for (size_t i = 0; i < split.test.size(); ++i) {
    double sum = 0;
    for (int c = 0; c < ckpt.n_classes; ++c)
      sum += result.posteriors[i * static_cast<size_t>(ckpt.n_classes) + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }

  const Checkpoint again = train_convnet(corpus.root.string(), split.train, TransformSpec{}, tc,
                                         arch, Precision::single_prec, 3);
  CHECK(again.params_f == ckpt.params_f);

  TrainConfig bumped = tc;
  bumped.seed = 6;
  const Checkpoint other = train_convnet(corpus.root.string(), split.train, TransformSpec{},
                                         bumped, arch, Precision::single_prec, 1);
  CHECK(other.params_f != ckpt.params_f);
}

TEST_CASE("single-class training is rejected") {
  CorpusFixture corpus("umat_cls_single", palette_only_signatures(1), 8, 32);
  TrainConfig tc;
  tc.epochs = 1;
  tc.allow_any_batch_size = true;
  tc.batch_size = 8;
  CHECK_THROWS_AS(train_convnet(corpus.root.string(), corpus.rows, TransformSpec{}, tc,
                                tiny_arch(), Precision::single_prec, 1),
                  ConfigError);
}

TEST_CASE("prediction ties break toward the lowest class index") {
  Checkpoint ckpt;
  ckpt.kind = "convnet";
  ckpt.arch = tiny_arch();
  ckpt.n_classes = 3;
  ckpt.labels = {"a", "b", "c"};
  ckpt.params_f.assign(static_cast<size_t>(convnet_param_count(ckpt.arch, 3)), 0.0f);

  CorpusFixture corpus("umat_cls_tie", palette_only_signatures(2), 3, 32);
  const PredictResult result =
      predict(ckpt, corpus.root.string(), corpus.rows, TransformSpec{}, 1);
  for (int p : result.predicted) CHECK(p == 0);
}

TEST_CASE("hist features are delta, normalized, and shuffle invariant") {
  FloatImage gray(8, 8);
  for (auto& v : gray.data) v = 0.5f;
  const std::vector<double> f = hist_features(gray);
  REQUIRE(f.size() == 96);
  for (int c = 0; c < 3; ++c)
    for (int b = 0; b < 32; ++b)
      CHECK(f[static_cast<size_t>(c) * 32 + b] == (b == 16 ? 1.0 : 0.0));

  FloatImage half(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) half.at(x, y, c) = x < 4 ? 0.1f : 0.9f;
  const std::vector<double> g = hist_features(half);
  for (int c = 0; c < 3; ++c) {
    CHECK(g[static_cast<size_t>(c) * 32 + 3] == 0.5);
    CHECK(g[static_cast<size_t>(c) * 32 + 28] == 0.5);
  }

  FloatImage noisy(10, 10);
  Rng rng(12);
  for (auto& v : noisy.data) v = static_cast<float>(rng.next_double());
  TransformSpec shuffle;
  shuffle.kind = TransformKind::pixel_shuffle;
  shuffle.seed = 3;
  const FloatImage shuffled = apply_transform(shuffle, noisy, "img");
  CHECK(hist_features(shuffled) == hist_features(noisy));
}

TEST_CASE("logistic regression loss never increases") {
  Rng rng(9);
  const int n = 120, dims = 8, classes = 3;
  std::vector<double> x(static_cast<size_t>(n) * dims);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = i % classes;
    for (int d = 0; d < dims; ++d)
      x[static_cast<size_t>(i) * dims + d] = rng.next_gaussian() + (d == y[i] ? 1.5 : 0.0);
  }
  const LogRegFit fit = fit_multinomial_logreg(x, dims, y, classes, 200, 0.1);
  REQUIRE(fit.losses.size() == 200);
  CHECK(fit.losses.front() == doctest::Approx(std::log(3.0)).epsilon(1e-12));
  for (size_t i = 1; i < fit.losses.size(); ++i)
    CHECK(fit.losses[i] <= fit.losses[i - 1] + 1e-9);
  CHECK(fit.losses.back() < fit.losses.front());
}

TEST_CASE("hist baseline separates palettes even under pixel shuffle") {
  CorpusFixture corpus("umat_cls_hist", palette_only_signatures(2), 60, 32);
  SplitSpec split_spec;
  split_spec.train_per_class = 40;
  split_spec.test_per_class = 20;
  split_spec.seed = 2;
  const Split split = make_split(corpus.rows, split_spec);

  TransformSpec shuffle;
  shuffle.kind = TransformKind::pixel_shuffle;
  shuffle.seed = 11;
  const Checkpoint ckpt =
      train_hist_baseline(corpus.root.string(), split.train, shuffle, 1);
  CHECK(ckpt.kind == "hist");
  const PredictResult result = predict(ckpt, corpus.root.string(), split.test, shuffle, 1);
  CHECK(accuracy(ckpt, result) >= 0.9);
}

TEST_CASE("checkpoints round trip byte-exactly and validate counts") {
  const SmallConvNetConfig arch = tiny_arch();
  Checkpoint ckpt;
  ckpt.kind = "convnet";
  ckpt.precision = Precision::single_prec;
  ckpt.arch = arch;
  ckpt.n_classes = 3;
  ckpt.labels = {"x", "y", "z"};
  ckpt.params_f = init_convnet_params<float>(arch, 3, 99);
  ckpt.meta = {99, 12, 0.125};

  const std::string path = (fs::temp_directory_path() / "umat_ckpt_test.bin").string();
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.kind == ckpt.kind);
  CHECK(back.precision == ckpt.precision);
  CHECK(back.arch.input_side == arch.input_side);
  CHECK(back.arch.stage_channels == arch.stage_channels);
  CHECK(back.labels == ckpt.labels);
  CHECK(back.params_f == ckpt.params_f);
  CHECK(back.meta.seed == 99);
  CHECK(back.meta.epochs == 12);
  CHECK(back.meta.final_loss == 0.125);

  save_checkpoint(ckpt, path);
  const Checkpoint twice = load_checkpoint(path);
  CHECK(twice.params_f == back.params_f);

  std::vector<uint8_t> bytes = read_file_bytes(path);
  bytes[0] = 'X';
  write_file_bytes(bytes, path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);

  bytes[0] = 'U';
  bytes.pop_back();
  write_file_bytes(bytes, path);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  fs::remove(path);
}

TEST_CASE("precision names round trip") {
  CHECK(precision_from_name("single") == Precision::single_prec);
  CHECK(precision_from_name("double") == Precision::double_prec);
  CHECK_THROWS_AS(precision_from_name("half"), ConfigError);
}
