#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "umat/dataset.hpp"
#include "umat/error.hpp"

using namespace umat;

namespace {

namespace fs = std::filesystem;

std::vector<ManifestRow> toy_rows(int models, int prompts) {
  std::vector<ManifestRow> rows;
  for (int m = 0; m < models; ++m)
    for (int p = 0; p < prompts; ++p) {
      ManifestRow row;
      row.model = "m" + std::to_string(m);
      row.domain = "animals";
      row.language = "en";
      row.prompt_id = p;
      row.id = row.model + "/animals/en/" + std::to_string(1000 + p);
      row.path = row.id + ".png";
      rows.push_back(row);
    }
  return rows;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / name; }

}  // namespace

TEST_CASE("manifest round trips through jsonl") {
  std::vector<ManifestRow> rows = toy_rows(2, 3);
  rows[0].extra["note"] = "hello";
  const std::string path = temp_file("umat_manifest_rt.jsonl").string();
  save_manifest(rows, path);
  const std::vector<ManifestRow> back = load_manifest(path);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].path == rows[i].path);
    CHECK(back[i].model == rows[i].model);
    CHECK(back[i].domain == rows[i].domain);
    CHECK(back[i].language == rows[i].language);
    CHECK(back[i].prompt_id == rows[i].prompt_id);
  }
  CHECK(back[0].extra.at("note") == "hello");
  fs::remove(path);
}

TEST_CASE("manifest parse errors carry line numbers") {
  const std::string path = temp_file("umat_manifest_bad.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id":"a","path":"a.png","model":"m0","prompt_id":0})" << "\n";
    out << "this is not json\n";
  }
  try {
    load_manifest(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("duplicate ids name both offending lines") {
  const std::string path = temp_file("umat_manifest_dup.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id":"a","path":"a.png","model":"m0","prompt_id":0})" << "\n";
    out << R"({"id":"b","path":"b.png","model":"m0","prompt_id":1})" << "\n";
    out << R"({"id":"a","path":"c.png","model":"m0","prompt_id":2})" << "\n";
  }
  try {
    load_manifest(path);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 1") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("a") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("path traversal is rejected") {
  const std::string path = temp_file("umat_manifest_trav.jsonl").string();
  {
    std::ofstream out(path);
    out << R"({"id":"a","path":"../../etc/passwd","model":"m0","prompt_id":0})" << "\n";
  }
  CHECK_THROWS_AS(load_manifest(path), DataError);
  fs::remove(path);
}

TEST_CASE("class labels are sorted and distinct") {
  std::vector<ManifestRow> rows = toy_rows(3, 2);
  std::swap(rows[0], rows[4]);
  const std::vector<std::string> labels = class_labels(rows, ClassKey::model);
  CHECK(labels == std::vector<std::string>{"m0", "m1", "m2"});
  CHECK(class_labels(rows, ClassKey::domain) == std::vector<std::string>{"animals"});
}

TEST_CASE("class key names round trip") {
  for (ClassKey k : {ClassKey::model, ClassKey::domain, ClassKey::language})
    CHECK(class_key_from_name(class_key_name(k)) == k);
  CHECK_THROWS_AS(class_key_from_name("bogus"), ConfigError);
}

TEST_CASE("split fills quotas with disjoint prompts and sorted output") {
  const std::vector<ManifestRow> rows = toy_rows(3, 40);
  SplitSpec spec;
  spec.train_per_class = 20;
  spec.test_per_class = 10;
  spec.seed = 5;
  const Split split = make_split(rows, spec);

  REQUIRE(split.train.size() == 60);
  REQUIRE(split.test.size() == 30);
  CHECK(std::is_sorted(split.train.begin(), split.train.end(),
                       [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; }));
  CHECK(std::is_sorted(split.test.begin(), split.test.end(),
                       [](const ManifestRow& a, const ManifestRow& b) { return a.id < b.id; }));

  std::set<int64_t> train_prompts, test_prompts;
  for (const auto& r : split.train) train_prompts.insert(r.prompt_id);
  for (const auto& r : split.test) test_prompts.insert(r.prompt_id);
  for (int64_t p : test_prompts) CHECK(train_prompts.count(p) == 0);

  std::set<std::string> train_ids;
  for (const auto& r : split.train) train_ids.insert(r.id);
  for (const auto& r : split.test) CHECK(train_ids.count(r.id) == 0);
}

TEST_CASE("split is seed deterministic and seed sensitive") {
  const std::vector<ManifestRow> rows = toy_rows(2, 60);
  SplitSpec spec;
  spec.train_per_class = 25;
  spec.test_per_class = 15;
  spec.seed = 9;
  const Split a = make_split(rows, spec);
  const Split b = make_split(rows, spec);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].id == b.train[i].id);

  spec.seed = 10;
  const Split c = make_split(rows, spec);
  std::vector<std::string> ids_a, ids_c;
  for (const auto& r : a.test) ids_a.push_back(r.id);
  for (const auto& r : c.test) ids_c.push_back(r.id);
  CHECK(ids_a != ids_c);
}

TEST_CASE("ranked train lists are nested across sizes") {
  const std::vector<ManifestRow> rows = toy_rows(2, 80);
  SplitSpec big;
  big.train_per_class = 40;
  big.test_per_class = 20;
  big.seed = 3;
  const Split full = make_split(rows, big);
  for (const auto& [label, ranked] : full.train_ranked) {
    REQUIRE(ranked.size() == 40);
    std::set<std::string> in_train;
    for (const auto& r : full.train)
      if (r.model == label) in_train.insert(r.id);
    for (const auto& r : ranked) CHECK(in_train.count(r.id) == 1);
  }
}

TEST_CASE("filters compose with splitting") {
  std::vector<ManifestRow> rows = toy_rows(2, 30);
  for (size_t i = 0; i < rows.size(); ++i)
    if (i % 2 == 0) rows[i].domain = "vehicles";
  SplitSpec spec;
  spec.train_per_class = 5;
  spec.test_per_class = 3;
  spec.filter.domain = "vehicles";
  spec.seed = 1;
  const Split split = make_split(rows, spec);
  for (const auto& r : split.train) CHECK(r.domain == "vehicles");
  for (const auto& r : split.test) CHECK(r.domain == "vehicles");
}

TEST_CASE("deficient classes are reported by name") {
  const std::vector<ManifestRow> rows = toy_rows(2, 10);
  SplitSpec spec;
  spec.train_per_class = 9;
  spec.test_per_class = 5;
  spec.seed = 2;
  try {
    make_split(rows, spec);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("m0") != std::string::npos);
  }
}

TEST_CASE("fingerprint tracks content, not row order") {
  const fs::path root = temp_file("umat_fp_root");
  fs::create_directories(root);
  std::vector<ManifestRow> rows;
  for (int i = 0; i < 3; ++i) {
    ManifestRow row;
    row.id = "r" + std::to_string(i);
    row.path = row.id + ".bin";
    row.model = "m0";
    rows.push_back(row);
    std::ofstream out(root / row.path, std::ios::binary);
    out << "payload-" << i;
  }
  const uint64_t fp1 = corpus_fingerprint(root.string(), rows);
  std::reverse(rows.begin(), rows.end());
  const uint64_t fp2 = corpus_fingerprint(root.string(), rows);
  CHECK(fp1 == fp2);

  {
    std::ofstream out(root / "r1.bin", std::ios::binary);
    out << "payload-X";
  }
  std::reverse(rows.begin(), rows.end());
  const uint64_t fp3 = corpus_fingerprint(root.string(), rows);
  CHECK(fp3 != fp1);
  fs::remove_all(root);
}
