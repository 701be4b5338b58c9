#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "umat/classifiers.hpp"
#include "umat/dataset.hpp"
#include "umat/transforms.hpp"

namespace umat {

// Square count matrix; rows are true classes, columns are predictions.
struct ConfusionMatrix {
  std::vector<std::string> labels;
  std::vector<int64_t> counts;  // n x n, row-major

  int n() const { return static_cast<int>(labels.size()); }
  int64_t at(int true_idx, int pred_idx) const;
  int64_t& at(int true_idx, int pred_idx);
  int64_t total() const;
  // Fraction correct, trace over total. Throws on an empty matrix.
  double accuracy() const;

  nlohmann::json to_json() const;
  static ConfusionMatrix from_json(const nlohmann::json& j);
};

// Counts predictions against truths. Every truth must appear in labels;
// predicted entries are indices into labels.
ConfusionMatrix make_confusion(const std::vector<std::string>& labels,
                               const std::vector<int>& predicted,
                               const std::vector<std::string>& truths);

// Row-normalized percentages; every row sums to 100. Throws naming the first
// class whose row is empty.
std::vector<double> recall_matrix(const ConfusionMatrix& cm);

// Column-normalized percentages; every column sums to 100. Throws naming the
// first class whose column is empty.
std::vector<double> precision_matrix(const ConfusionMatrix& cm);

// One trained-and-evaluated classifier within an experiment.
struct CellResult {
  std::string key;
  double accuracy = 0.0;
  ConfusionMatrix confusion;
  // Content hash of this cell's test set; cells that must share a test set
  // are asserted equal on this value.
  uint64_t test_fingerprint = 0;

  nlohmann::json to_json() const;
  static CellResult from_json(const nlohmann::json& j);
};

struct ExperimentResult {
  std::string kind;
  uint64_t seed = 0;
  std::string toolkit_version;
  uint64_t corpus_fingerprint = 0;
  // Hash of the resolved CLI config; empty for direct library runs.
  std::string config_hash;
  nlohmann::json config = nlohmann::json::object();  // parameter echo
  std::vector<CellResult> cells;                     // sorted by key
  // Timing is reported beside the result, never inside it, so the payload
  // stays byte-identical across machines and worker counts.
  double wall_clock_seconds = 0.0;

  const CellResult& cell(const std::string& key) const;
  nlohmann::json to_json() const;  // excludes wall_clock_seconds and workers
  static ExperimentResult from_json(const nlohmann::json& j);
};

// Shared inputs for every experiment runner.
struct ExperimentContext {
  std::string corpus_root;
  std::vector<ManifestRow> rows;
  TrainConfig train;
  SmallConvNetConfig arch;
  Precision precision = Precision::single_prec;
  uint64_t seed = 0;
  int workers = 1;
  // Chance-calibration control: permute the training labels once per cell
  // before fitting, leaving the test labels intact.
  bool shuffle_labels = false;
};

// Accuracy versus training-set size. Subsets are nested: every smaller
// training set is a prefix of the next larger one, and all sizes share one
// test set of test_per_class images per model.
ExperimentResult run_scaling(const ExperimentContext& ctx, const std::vector<int>& sizes,
                             int test_per_class);

// Accuracy under image corruptions, applied to both the training and the
// test images of each cell. An identity transform cell is prepended when the
// list does not already contain one.
ExperimentResult run_corruption_ablation(const ExperimentContext& ctx,
                                         const std::vector<TransformSpec>& specs,
                                         int train_per_class, int test_per_class);

// Structure-removal study: identity and pixel-shuffle transforms, plus one
// cell per external image directory, each trained with both the convnet and
// the histogram baseline. Cell keys are "<transform>/<classifier>".
ExperimentResult run_structural_ablation(const ExperimentContext& ctx, int train_per_class,
                                         int test_per_class,
                                         const std::vector<std::string>& external_dirs);

// Domain-transfer matrix: one model classifier per training domain evaluated
// on every domain's shared test set (keys "train=<d>,test=<e>"), plus an
// optional mixed-domain baseline trained on per_domain_train/D images per
// domain per model (keys "train=mixed,test=<e>").
ExperimentResult run_ood_matrix(const ExperimentContext& ctx, int per_domain_train,
                                int per_domain_test, bool mixed_baseline = true);

// Per-model language classifiers: for each model, an L-way classifier over
// language labels (keys "model=<m>").
ExperimentResult run_language_attribution(const ExperimentContext& ctx, int per_lang_train,
                                          int per_lang_test);

// Permutes the class labels under key across rows once; the multiset of
// labels is preserved. Used by the chance-calibration control.
std::vector<ManifestRow> shuffle_class_labels(std::vector<ManifestRow> rows, ClassKey key,
                                              uint64_t seed);

}  // namespace umat
