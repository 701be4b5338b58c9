#include "umat/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "umat/canonical_json.hpp"
#include "umat/error.hpp"
#include "umat/png_io.hpp"
#include "umat/rng.hpp"

namespace umat {

const char* class_key_name(ClassKey k) {
  switch (k) {
    case ClassKey::model: return "model";
    case ClassKey::domain: return "domain";
    case ClassKey::language: return "language";
  }
  throw InternalError("unknown ClassKey");
}

ClassKey class_key_from_name(const std::string& name) {
  if (name == "model") return ClassKey::model;
  if (name == "domain") return ClassKey::domain;
  if (name == "language") return ClassKey::language;
  throw ConfigError("unknown class key: " + name);
}

const std::string& class_of(const ManifestRow& row, ClassKey key) {
  switch (key) {
    case ClassKey::model: return row.model;
    case ClassKey::domain: return row.domain;
    case ClassKey::language: return row.language;
  }
  throw InternalError("unknown ClassKey");
}

std::vector<ManifestRow> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);

  std::vector<ManifestRow> rows;
  std::unordered_map<std::string, int> seen;  // id -> line
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object())
      throw DataError(path + " line " + std::to_string(line_no) + ": not a JSON object");

    ManifestRow row;
    try {
      row.id = j.at("id").get<std::string>();
      row.path = j.at("path").get<std::string>();
      row.model = j.at("model").get<std::string>();
      row.domain = j.value("domain", std::string{});
      row.language = j.value("language", std::string{});
      row.prompt_id = j.value("prompt_id", int64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (row.path.find("..") != std::string::npos)
      throw DataError(path + " line " + std::to_string(line_no) + ": path escapes manifest root");

    auto [it, inserted] = seen.emplace(row.id, line_no);
    if (!inserted)
      throw DataError(path + " line " + std::to_string(line_no) + ": duplicate id '" + row.id +
                      "' (first seen on line " + std::to_string(it->second) + ")");

    for (auto& [key, value] : j.items()) {
      if (key != "id" && key != "path" && key != "model" && key != "domain" &&
          key != "language" && key != "prompt_id")
        row.extra[key] = value;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void save_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  for (const ManifestRow& row : rows) {
    nlohmann::json j = row.extra;
    j["id"] = row.id;
    j["path"] = row.path;
    j["model"] = row.model;
    if (!row.domain.empty()) j["domain"] = row.domain;
    if (!row.language.empty()) j["language"] = row.language;
    j["prompt_id"] = row.prompt_id;
    f << canonical_dump(j) << '\n';
  }
  if (!f) throw DataError("write failed: " + path);
}

std::vector<std::string> class_labels(const std::vector<ManifestRow>& rows, ClassKey key) {
  std::set<std::string> labels;
  for (const ManifestRow& row : rows) {
    const std::string& label = class_of(row, key);
    if (!label.empty()) labels.insert(label);
  }
  return {labels.begin(), labels.end()};
}

Split make_split(const std::vector<ManifestRow>& rows, const SplitSpec& spec) {
  if (spec.train_per_class < 0 || spec.test_per_class < 0 ||
      spec.train_per_class + spec.test_per_class == 0)
    throw ConfigError("make_split: train/test counts must be non-negative and not both zero");

  std::vector<ManifestRow> pool;
  for (const ManifestRow& row : rows)
    if (spec.filter.matches(row) && !class_of(row, spec.class_key).empty()) pool.push_back(row);
  std::sort(pool.begin(), pool.end(),
            [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; });

  const std::vector<std::string> labels = class_labels(pool, spec.class_key);
  if (labels.empty()) throw DataError("make_split: no rows after filtering");

  // Rows per (class, prompt), in id order.
  std::map<std::string, std::map<int64_t, std::vector<const ManifestRow*>>> by_class;
  std::set<int64_t> prompt_set;
  for (const ManifestRow& row : pool) {
    by_class[class_of(row, spec.class_key)][row.prompt_id].push_back(&row);
    prompt_set.insert(row.prompt_id);
  }

  std::vector<int64_t> prompts(prompt_set.begin(), prompt_set.end());
  Rng rng(hash_combine(spec.seed, hash_str("split")));
  rng.shuffle(prompts);

  std::map<std::string, std::vector<const ManifestRow*>> test_pool, train_pool;
  auto quota_met = [&](const std::map<std::string, std::vector<const ManifestRow*>>& pools,
                       size_t quota) {
    for (const std::string& label : labels) {
      auto it = pools.find(label);
      if (it == pools.end() || it->second.size() < quota) return false;
    }
    return true;
  };

  // Walk prompts in shuffled order, first filling test quotas, then train.
  // A prompt goes entirely to one side, so no prompt leaks across the split.
  size_t cursor = 0;
  for (; cursor < prompts.size(); ++cursor) {
    if (quota_met(test_pool, static_cast<size_t>(spec.test_per_class))) break;
    for (const std::string& label : labels) {
      auto& class_prompts = by_class[label];
      auto it = class_prompts.find(prompts[cursor]);
      if (it == class_prompts.end()) continue;
      auto& dst = test_pool[label];
      dst.insert(dst.end(), it->second.begin(), it->second.end());
    }
  }
  for (; cursor < prompts.size(); ++cursor) {
    if (quota_met(train_pool, static_cast<size_t>(spec.train_per_class))) break;
    for (const std::string& label : labels) {
      auto& class_prompts = by_class[label];
      auto it = class_prompts.find(prompts[cursor]);
      if (it == class_prompts.end()) continue;
      auto& dst = train_pool[label];
      dst.insert(dst.end(), it->second.begin(), it->second.end());
    }
  }

  for (const std::string& label : labels) {
    if (test_pool[label].size() < static_cast<size_t>(spec.test_per_class) ||
        train_pool[label].size() < static_cast<size_t>(spec.train_per_class))
      throw DataError("make_split: class '" + label + "' has too few prompt-distinct rows (need " +
                      std::to_string(spec.train_per_class) + " train + " +
                      std::to_string(spec.test_per_class) + " test)");
  }

  Split split;
  for (const std::string& label : labels) {
    auto& ranked = split.train_ranked[label];
    for (int i = 0; i < spec.train_per_class; ++i) ranked.push_back(*train_pool[label][i]);
    split.train.insert(split.train.end(), ranked.begin(), ranked.end());
    for (int i = 0; i < spec.test_per_class; ++i) split.test.push_back(*test_pool[label][i]);
  }
  auto by_id = [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; };
  std::sort(split.train.begin(), split.train.end(), by_id);
  std::sort(split.test.begin(), split.test.end(), by_id);
  return split;
}

uint64_t corpus_fingerprint(const std::string& root, const std::vector<ManifestRow>& rows) {
  uint64_t acc = 0;
  for (const ManifestRow& row : rows) {
    const auto bytes = read_file_bytes((std::filesystem::path(root) / row.path).string());
    uint64_t h = 0xcbf29ce484222325ull;
    for (uint8_t b : bytes) {
      h ^= b;
      h *= 0x100000001b3ull;
    }
    acc += hash_combine(hash_str(row.id), h);  // commutative: order-insensitive
  }
  return mix64(acc);
}

}  // namespace umat
