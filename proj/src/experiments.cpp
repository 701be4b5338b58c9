#include "umat/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <unordered_map>
#include <utility>

#include "umat/error.hpp"
#include "umat/rng.hpp"
#include "umat/version.hpp"

namespace umat {

namespace {

int check_index(const ConfusionMatrix& cm, int idx, const char* what) {
  if (idx < 0 || idx >= cm.n()) throw InternalError(std::string("confusion: ") + what + " out of range");
  return idx;
}

}  // namespace

int64_t ConfusionMatrix::at(int true_idx, int pred_idx) const {
  return counts[static_cast<size_t>(check_index(*this, true_idx, "row")) * labels.size() +
                static_cast<size_t>(check_index(*this, pred_idx, "column"))];
}

int64_t& ConfusionMatrix::at(int true_idx, int pred_idx) {
  return counts[static_cast<size_t>(check_index(*this, true_idx, "row")) * labels.size() +
                static_cast<size_t>(check_index(*this, pred_idx, "column"))];
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts) t += c;
  return t;
}

double ConfusionMatrix::accuracy() const {
  const int64_t tot = total();
  if (tot == 0) throw DataError("confusion: accuracy of an empty matrix");
  int64_t trace = 0;
  for (int i = 0; i < n(); ++i) trace += at(i, i);
  return static_cast<double>(trace) / static_cast<double>(tot);
}

nlohmann::json ConfusionMatrix::to_json() const {
  return nlohmann::json{{"labels", labels}, {"counts", counts}};
}

ConfusionMatrix ConfusionMatrix::from_json(const nlohmann::json& j) {
  ConfusionMatrix cm;
  cm.labels = j.at("labels").get<std::vector<std::string>>();
  cm.counts = j.at("counts").get<std::vector<int64_t>>();
  if (cm.counts.size() != cm.labels.size() * cm.labels.size())
    throw DataError("confusion: counts length does not match labels");
  return cm;
}

ConfusionMatrix make_confusion(const std::vector<std::string>& labels,
                               const std::vector<int>& predicted,
                               const std::vector<std::string>& truths) {
  if (predicted.size() != truths.size())
    throw InternalError("make_confusion: predictions and truths differ in length");
  ConfusionMatrix cm;
  cm.labels = labels;
  cm.counts.assign(labels.size() * labels.size(), 0);
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < labels.size(); ++i) index[labels[i]] = static_cast<int>(i);
  for (size_t i = 0; i < truths.size(); ++i) {
    auto it = index.find(truths[i]);
    if (it == index.end())
      throw DataError("make_confusion: true label not among classifier labels: " + truths[i]);
    cm.at(it->second, predicted[i]) += 1;
  }
  return cm;
}

std::vector<double> recall_matrix(const ConfusionMatrix& cm) {
  const int n = cm.n();
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int r = 0; r < n; ++r) {
    int64_t row_total = 0;
    for (int c = 0; c < n; ++c) row_total += cm.at(r, c);
    if (row_total == 0)
      throw DataError("recall_matrix: no examples with true label " + cm.labels[r]);
    for (int c = 0; c < n; ++c)
      out[static_cast<size_t>(r) * n + c] =
          100.0 * static_cast<double>(cm.at(r, c)) / static_cast<double>(row_total);
  }
  return out;
}

std::vector<double> precision_matrix(const ConfusionMatrix& cm) {
  const int n = cm.n();
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int c = 0; c < n; ++c) {
    int64_t col_total = 0;
    for (int r = 0; r < n; ++r) col_total += cm.at(r, c);
    if (col_total == 0)
      throw DataError("precision_matrix: no predictions of label " + cm.labels[c]);
    for (int r = 0; r < n; ++r)
      out[static_cast<size_t>(r) * n + c] =
          100.0 * static_cast<double>(cm.at(r, c)) / static_cast<double>(col_total);
  }
  return out;
}

nlohmann::json CellResult::to_json() const {
  return nlohmann::json{{"accuracy", accuracy},
                        {"confusion", confusion.to_json()},
                        {"key", key},
                        {"test_fingerprint", test_fingerprint}};
}

CellResult CellResult::from_json(const nlohmann::json& j) {
  CellResult c;
  c.key = j.at("key").get<std::string>();
  c.accuracy = j.at("accuracy").get<double>();
  c.confusion = ConfusionMatrix::from_json(j.at("confusion"));
  c.test_fingerprint = j.at("test_fingerprint").get<uint64_t>();
  return c;
}

const CellResult& ExperimentResult::cell(const std::string& key) const {
  for (const CellResult& c : cells)
    if (c.key == key) return c;
  throw DataError("experiment result has no cell " + key);
}

nlohmann::json ExperimentResult::to_json() const {
  nlohmann::json cell_array = nlohmann::json::array();
  for (const CellResult& c : cells) cell_array.push_back(c.to_json());
  return nlohmann::json{{"cells", cell_array},
                        {"config", config},
                        {"config_hash", config_hash},
                        {"corpus_fingerprint", corpus_fingerprint},
                        {"kind", kind},
                        {"seed", seed},
                        {"toolkit_version", toolkit_version}};
}

ExperimentResult ExperimentResult::from_json(const nlohmann::json& j) {
  ExperimentResult r;
  r.kind = j.at("kind").get<std::string>();
  r.seed = j.at("seed").get<uint64_t>();
  r.toolkit_version = j.at("toolkit_version").get<std::string>();
  r.corpus_fingerprint = j.at("corpus_fingerprint").get<uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.config = j.at("config");
  for (const auto& cj : j.at("cells")) r.cells.push_back(CellResult::from_json(cj));
  return r;
}

std::vector<ManifestRow> shuffle_class_labels(std::vector<ManifestRow> rows, ClassKey key,
                                              uint64_t seed) {
  std::vector<std::string> values;
  values.reserve(rows.size());
  for (const ManifestRow& r : rows) values.push_back(class_of(r, key));
  Rng rng(seed);
  rng.shuffle(values);
  for (size_t i = 0; i < rows.size(); ++i) {
    switch (key) {
      case ClassKey::model: rows[i].model = values[i]; break;
      case ClassKey::domain: rows[i].domain = values[i]; break;
      case ClassKey::language: rows[i].language = values[i]; break;
    }
  }
  return rows;
}

namespace {

enum class ClfKind { convnet, hist };

uint64_t cell_seed(const ExperimentContext& ctx, const std::string& key) {
  return hash_combine(ctx.seed, hash_str(key));
}

Checkpoint train_for_cell(const ExperimentContext& ctx, const std::string& key,
                          std::vector<ManifestRow> train_rows, const TransformSpec& transform,
                          ClassKey label_key, ClfKind clf) {
  const uint64_t seed = cell_seed(ctx, key);
  if (ctx.shuffle_labels)
    train_rows = shuffle_class_labels(std::move(train_rows), label_key,
                                      hash_combine(seed, hash_str("label_shuffle")));
  if (clf == ClfKind::hist)
    return train_hist_baseline(ctx.corpus_root, train_rows, transform, ctx.workers, label_key);
  TrainConfig tc = ctx.train;
  tc.seed = seed;
  return train_convnet(ctx.corpus_root, train_rows, transform, tc, ctx.arch, ctx.precision,
                       ctx.workers, label_key);
}

CellResult eval_cell(const ExperimentContext& ctx, const std::string& key, const Checkpoint& ckpt,
                     const std::vector<ManifestRow>& test_rows, const TransformSpec& transform) {
  const PredictResult pred = predict(ckpt, ctx.corpus_root, test_rows, transform, ctx.workers);
  CellResult cell;
  cell.key = key;
  cell.confusion = make_confusion(ckpt.labels, pred.predicted, pred.true_labels);
  cell.accuracy = cell.confusion.accuracy();
  cell.test_fingerprint = corpus_fingerprint(ctx.corpus_root, test_rows);
  return cell;
}

CellResult run_cell(const ExperimentContext& ctx, const std::string& key,
                    std::vector<ManifestRow> train_rows, const std::vector<ManifestRow>& test_rows,
                    const TransformSpec& transform, ClassKey label_key, ClfKind clf) {
  const Checkpoint ckpt =
      train_for_cell(ctx, key, std::move(train_rows), transform, label_key, clf);
  return eval_cell(ctx, key, ckpt, test_rows, transform);
}

ExperimentResult begin_result(const ExperimentContext& ctx, const std::string& kind,
                              nlohmann::json config) {
  ExperimentResult r;
  r.kind = kind;
  r.seed = ctx.seed;
  r.toolkit_version = kToolkitVersion;
  r.corpus_fingerprint = corpus_fingerprint(ctx.corpus_root, ctx.rows);
  config["shuffle_labels"] = ctx.shuffle_labels;
  config["precision"] = precision_name(ctx.precision);
  config["epochs"] = ctx.train.epochs;
  r.config = std::move(config);
  return r;
}

void finish_result(ExperimentResult& r, std::chrono::steady_clock::time_point start) {
  std::sort(r.cells.begin(), r.cells.end(),
            [](const CellResult& a, const CellResult& b) { return a.key < b.key; });
  for (size_t i = 1; i < r.cells.size(); ++i)
    if (r.cells[i].key == r.cells[i - 1].key)
      throw InternalError("experiment produced duplicate cell key " + r.cells[i].key);
  r.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void require_shared_test_set(const std::vector<const CellResult*>& cells) {
  for (size_t i = 1; i < cells.size(); ++i)
    if (cells[i]->test_fingerprint != cells[0]->test_fingerprint)
      throw InternalError("cells " + cells[0]->key + " and " + cells[i]->key +
                          " were evaluated on different test sets");
}

void require_shared_test_set(const std::vector<CellResult>& cells) {
  std::vector<const CellResult*> ptrs;
  for (const CellResult& c : cells) ptrs.push_back(&c);
  require_shared_test_set(ptrs);
}

uint64_t split_seed(const ExperimentContext& ctx, const std::string& tag) {
  return hash_combine(ctx.seed, hash_str("split/" + tag));
}

}  // namespace

ExperimentResult run_scaling(const ExperimentContext& ctx, const std::vector<int>& sizes,
                             int test_per_class) {
  const auto start = std::chrono::steady_clock::now();
  if (sizes.empty()) throw ConfigError("scaling: sizes must be non-empty");
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] <= 0) throw ConfigError("scaling: sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1])
      throw ConfigError("scaling: sizes must be strictly increasing");
  }

  ExperimentResult r = begin_result(
      ctx, "scaling", nlohmann::json{{"sizes", sizes}, {"test_per_class", test_per_class}});

  SplitSpec ss;
  ss.train_per_class = sizes.back();
  ss.test_per_class = test_per_class;
  ss.class_key = ClassKey::model;
  ss.seed = split_seed(ctx, "scaling");
  const Split split = make_split(ctx.rows, ss);

  const TransformSpec identity;
  for (int size : sizes) {
    std::vector<ManifestRow> train_rows;
    for (const auto& [label, ranked] : split.train_ranked)
      train_rows.insert(train_rows.end(), ranked.begin(), ranked.begin() + size);
    std::sort(train_rows.begin(), train_rows.end(),
              [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });
    r.cells.push_back(run_cell(ctx, "size=" + std::to_string(size), std::move(train_rows),
                               split.test, identity, ClassKey::model, ClfKind::convnet));
  }
  require_shared_test_set(r.cells);
  finish_result(r, start);
  return r;
}

ExperimentResult run_corruption_ablation(const ExperimentContext& ctx,
                                         const std::vector<TransformSpec>& specs,
                                         int train_per_class, int test_per_class) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<TransformSpec> all = specs;
  const bool has_identity =
      std::any_of(all.begin(), all.end(),
                  [](const TransformSpec& s) { return s.kind == TransformKind::none; });
  if (!has_identity) all.insert(all.begin(), TransformSpec{});

  nlohmann::json spec_json = nlohmann::json::array();
  for (const TransformSpec& s : all) {
    s.validate();
    spec_json.push_back(s.to_json());
  }
  ExperimentResult r =
      begin_result(ctx, "corruption_ablation",
                   nlohmann::json{{"specs", spec_json},
                                  {"train_per_class", train_per_class},
                                  {"test_per_class", test_per_class}});

  SplitSpec ss;
  ss.train_per_class = train_per_class;
  ss.test_per_class = test_per_class;
  ss.class_key = ClassKey::model;
  ss.seed = split_seed(ctx, "corruption");
  const Split split = make_split(ctx.rows, ss);

  std::set<std::string> seen;
  for (const TransformSpec& spec : all) {
    const std::string key = spec.cell_label();
    if (!seen.insert(key).second)
      throw ConfigError("corruption: duplicate transform cell " + key);
    r.cells.push_back(
        run_cell(ctx, key, split.train, split.test, spec, ClassKey::model, ClfKind::convnet));
  }
  finish_result(r, start);
  return r;
}

ExperimentResult run_structural_ablation(const ExperimentContext& ctx, int train_per_class,
                                         int test_per_class,
                                         const std::vector<std::string>& external_dirs) {
  const auto start = std::chrono::steady_clock::now();

  std::vector<TransformSpec> transforms;
  transforms.push_back(TransformSpec{});
  TransformSpec shuffle;
  shuffle.kind = TransformKind::pixel_shuffle;
  shuffle.seed = hash_combine(ctx.seed, hash_str("structural_shuffle"));
  transforms.push_back(shuffle);
  for (const std::string& dir : external_dirs) {
    TransformSpec ext;
    ext.kind = TransformKind::external_dir;
    ext.external_root = dir;
    transforms.push_back(ext);
  }
  for (const TransformSpec& t : transforms) t.validate();

  ExperimentResult r =
      begin_result(ctx, "structural_ablation",
                   nlohmann::json{{"external_dirs", external_dirs},
                                  {"train_per_class", train_per_class},
                                  {"test_per_class", test_per_class}});

  SplitSpec ss;
  ss.train_per_class = train_per_class;
  ss.test_per_class = test_per_class;
  ss.class_key = ClassKey::model;
  ss.seed = split_seed(ctx, "structural");
  const Split split = make_split(ctx.rows, ss);

  for (const TransformSpec& spec : transforms) {
    for (ClfKind clf : {ClfKind::convnet, ClfKind::hist}) {
      const std::string key =
          spec.cell_label() + "/" + (clf == ClfKind::hist ? "hist" : "convnet");
      r.cells.push_back(run_cell(ctx, key, split.train, split.test, spec, ClassKey::model, clf));
    }
  }
  finish_result(r, start);
  return r;
}

ExperimentResult run_ood_matrix(const ExperimentContext& ctx, int per_domain_train,
                                int per_domain_test, bool mixed_baseline) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> domains = class_labels(ctx.rows, ClassKey::domain);
  if (domains.empty()) throw DataError("ood: corpus has no domain labels");
  const int n_domains = static_cast<int>(domains.size());
  if (mixed_baseline && per_domain_train % n_domains != 0)
    throw ConfigError(
        "ood: per_domain_train must be divisible by the domain count so the mixed baseline is "
        "count-matched");

  ExperimentResult r = begin_result(ctx, "ood_matrix",
                                    nlohmann::json{{"per_domain_train", per_domain_train},
                                                   {"per_domain_test", per_domain_test},
                                                   {"mixed_baseline", mixed_baseline}});

  std::vector<Split> splits;
  for (const std::string& d : domains) {
    SplitSpec ss;
    ss.train_per_class = per_domain_train;
    ss.test_per_class = per_domain_test;
    ss.class_key = ClassKey::model;
    ss.filter.domain = d;
    ss.seed = split_seed(ctx, "ood/" + d);
    splits.push_back(make_split(ctx.rows, ss));
  }

  const TransformSpec identity;
  for (int di = 0; di < n_domains; ++di) {
    const std::string train_key = "train=" + domains[di];
    const Checkpoint ckpt = train_for_cell(ctx, train_key, splits[di].train, identity,
                                           ClassKey::model, ClfKind::convnet);
    for (int ei = 0; ei < n_domains; ++ei)
      r.cells.push_back(eval_cell(ctx, train_key + ",test=" + domains[ei], ckpt,
                                  splits[ei].test, identity));
  }

  if (mixed_baseline) {
    const int per_domain_share = per_domain_train / n_domains;
    std::vector<ManifestRow> mixed_rows;
    for (const Split& split : splits)
      for (const auto& [label, ranked] : split.train_ranked)
        mixed_rows.insert(mixed_rows.end(), ranked.begin(), ranked.begin() + per_domain_share);
    std::sort(mixed_rows.begin(), mixed_rows.end(),
              [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });
    const Checkpoint ckpt = train_for_cell(ctx, "train=mixed", std::move(mixed_rows), identity,
                                           ClassKey::model, ClfKind::convnet);
    for (int ei = 0; ei < n_domains; ++ei)
      r.cells.push_back(
          eval_cell(ctx, "train=mixed,test=" + domains[ei], ckpt, splits[ei].test, identity));
  }

  // Every column of the matrix shares one test set across training rows.
  for (const std::string& d : domains) {
    std::vector<const CellResult*> column;
    const std::string suffix = ",test=" + d;
    for (const CellResult& c : r.cells)
      if (c.key.size() >= suffix.size() &&
          c.key.compare(c.key.size() - suffix.size(), suffix.size(), suffix) == 0)
        column.push_back(&c);
    require_shared_test_set(column);
  }
  finish_result(r, start);
  return r;
}

ExperimentResult run_language_attribution(const ExperimentContext& ctx, int per_lang_train,
                                          int per_lang_test) {
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> models = class_labels(ctx.rows, ClassKey::model);
  if (models.empty()) throw DataError("language: corpus has no rows");

  ExperimentResult r = begin_result(ctx, "language_attribution",
                                    nlohmann::json{{"per_lang_train", per_lang_train},
                                                   {"per_lang_test", per_lang_test}});

  const TransformSpec identity;
  for (const std::string& m : models) {
    SplitSpec ss;
    ss.train_per_class = per_lang_train;
    ss.test_per_class = per_lang_test;
    ss.class_key = ClassKey::language;
    ss.filter.model = m;
    ss.seed = split_seed(ctx, "language/" + m);
    const Split split = make_split(ctx.rows, ss);
    r.cells.push_back(run_cell(ctx, "model=" + m, split.train, split.test, identity,
                               ClassKey::language, ClfKind::convnet));
  }
  finish_result(r, start);
  return r;
}

}  // namespace umat
