#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace umat {

// One labeled image. domain/language are empty when absent. extra carries
// any manifest fields this toolkit does not interpret; they survive a
// load/save round-trip.
struct ManifestRow {
  std::string id;
  std::string path;
  std::string model;
  std::string domain;
  std::string language;
  int64_t prompt_id = 0;
  nlohmann::json extra = nlohmann::json::object();
};

enum class ClassKey { model, domain, language };

const char* class_key_name(ClassKey k);
ClassKey class_key_from_name(const std::string& name);
const std::string& class_of(const ManifestRow& row, ClassKey key);

// Optional per-field equality filter applied before splitting.
struct RowFilter {
  std::optional<std::string> model;
  std::optional<std::string> domain;
  std::optional<std::string> language;

  bool matches(const ManifestRow& row) const {
    return (!model || row.model == *model) && (!domain || row.domain == *domain) &&
           (!language || row.language == *language);
  }
};

struct SplitSpec {
  int train_per_class = 0;
  int test_per_class = 0;
  ClassKey class_key = ClassKey::model;
  RowFilter filter;
  uint64_t seed = 0;
};

struct Split {
  std::vector<ManifestRow> train;  // sorted by id
  std::vector<ManifestRow> test;   // sorted by id
  // Training rows per class in selection order; prefixes of these lists are
  // valid smaller training sets with the same prompt partition, which is how
  // scaling runs nest their subsets.
  std::map<std::string, std::vector<ManifestRow>> train_ranked;
};

std::vector<ManifestRow> load_manifest(const std::string& path);
void save_manifest(const std::vector<ManifestRow>& rows, const std::string& path);

// Deterministic prompt-disjoint split. Every prompt_id is assigned to one
// side globally, so no prompt appears on both sides for any class. Row order
// of the input does not matter. Throws naming the first class that cannot
// meet its quota.
Split make_split(const std::vector<ManifestRow>& rows, const SplitSpec& spec);

// Sorted distinct labels under key; the index in this list is the class
// integer everywhere downstream.
std::vector<std::string> class_labels(const std::vector<ManifestRow>& rows, ClassKey key);

// Order-insensitive hash of row ids plus image file contents, recorded in
// experiment results for provenance.
uint64_t corpus_fingerprint(const std::string& root, const std::vector<ManifestRow>& rows);

}  // namespace umat
