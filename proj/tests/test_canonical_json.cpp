#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "umat/canonical_json.hpp"
#include "umat/error.hpp"

using namespace umat;

TEST_CASE("keys are emitted sorted and nesting is compact") {
  nlohmann::json j;
  j["zeta"] = 1;
  j["alpha"] = {{"b", 2}, {"a", 1}};
  j["mid"] = nlohmann::json::array({1, 2, 3});
  CHECK(canonical_dump(j) == R"({"alpha":{"a":1,"b":2},"mid":[1,2,3],"zeta":1})");
}

TEST_CASE("doubles are printed with %.17g precision") {
  nlohmann::json j;
  j["x"] = 0.1;
  CHECK(canonical_dump(j) == "{\"x\":0.10000000000000001}");
  j["x"] = 1.0;
  CHECK(canonical_dump(j) == "{\"x\":1}");
  j["x"] = 2.5;
  CHECK(canonical_dump(j) == "{\"x\":2.5}");
}

TEST_CASE("integers, bools, null and strings round trip") {
  nlohmann::json j{{"i", -42}, {"u", 42u}, {"b", true}, {"n", nullptr}, {"s", "hi\n"}};
  CHECK(canonical_dump(j) == R"({"b":true,"i":-42,"n":null,"s":"hi\n","u":42})");
}

TEST_CASE("non-finite doubles are rejected") {
  nlohmann::json j;
  j["x"] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(canonical_dump(j), InternalError);
}

TEST_CASE("same value always serializes to identical bytes") {
  nlohmann::json j{{"a", 0.30000000000000004}, {"b", nlohmann::json::array({1.5, "x"})}};
  CHECK(canonical_dump(j) == canonical_dump(j));
}

TEST_CASE("write_canonical_json produces the dump plus trailing newline") {
  const std::string path = (std::filesystem::temp_directory_path() / "umat_cj_test.json").string();
  nlohmann::json j{{"k", 3}};
  write_canonical_json(j, path);
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(content == "{\"k\":3}\n");
  std::remove(path.c_str());
}
