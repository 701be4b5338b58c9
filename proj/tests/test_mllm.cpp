#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "umat/error.hpp"
#include "umat/mllm.hpp"
#include "umat/synthgen.hpp"

using namespace umat;

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct CorpusFixture {
  fs::path root;
  std::vector<ManifestRow> rows;

  CorpusFixture(const std::string& name, std::vector<GeneratorSignature> sigs, int per_cell,
                std::vector<std::string> domains = {}) {
    root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    CorpusSpec spec;
    spec.out_dir = root.string();
    spec.signatures = std::move(sigs);
    if (!domains.empty()) spec.domains = std::move(domains);
    spec.per_cell = per_cell;
    spec.image_size = 32;
    spec.seed = 606;
    rows = generate_corpus(spec, 1);
  }
  ~CorpusFixture() { fs::remove_all(root); }
};

std::vector<std::string> models_of(const std::vector<ManifestRow>& rows) {
  return class_labels(rows, ClassKey::model);
}

// Index of a permutation in lexicographic order (Lehmer code).
int permutation_index(const std::vector<int>& perm) {
  const int n = static_cast<int>(perm.size());
  int index = 0;
  for (int i = 0; i < n; ++i) {
    int rank = 0;
    for (int j = i + 1; j < n; ++j)
      if (perm[j] < perm[i]) ++rank;
    int factorial = 1;
    for (int f = 2; f <= n - 1 - i; ++f) factorial *= f;
    index += rank * factorial;
  }
  return index;
}

}  // namespace

TEST_CASE("zero shot prompt matches the golden file byte for byte") {
  const std::string golden = read_file(fs::path(UMAT_TEST_DIR) / "golden/zero_shot_prompt.txt");
  CHECK(build_zero_shot_prompt(default_candidates()) == golden);
}

TEST_CASE("zero shot prompt renders any candidate list") {
  const std::string prompt = build_zero_shot_prompt({"OnlyModel"});
  CHECK(prompt.find("- OnlyModel\n") != std::string::npos);
  CHECK(prompt.find("Think step by step about the visual characteristics") != std::string::npos);
  CHECK(prompt.find("write only the exact model name") != std::string::npos);
  CHECK(prompt.find("- BAGEL") == std::string::npos);
  CHECK_THROWS_AS(build_zero_shot_prompt({}), ConfigError);
}

TEST_CASE("domain question is exact and yes no parsing is prefix based") {
  CHECK(build_domain_question("animals") ==
        "In the image, do you see animals? Answer the question with just yes or no.");
  CHECK_THROWS_AS(build_domain_question(""), ConfigError);

  CHECK(parse_yes_no("Yes") == true);
  CHECK(parse_yes_no("  yes, clearly") == true);
  CHECK(parse_yes_no("no.") == false);
  CHECK(parse_yes_no("NO") == false);
  CHECK(!parse_yes_no("maybe").has_value());
  CHECK(!parse_yes_no("").has_value());
}

TEST_CASE("attribution parsing takes the trimmed last non empty line") {
  const auto& cands = default_candidates();
  CHECK(parse_attribution_response("...reasoning...\nJanus-Pro-7B", cands) == "Janus-Pro-7B");
  CHECK(parse_attribution_response("thoughts\n janus-pro-7b ", cands) == "Janus-Pro-7B");
  CHECK(parse_attribution_response("mmada\n\n  \n", cands) == "MMaDA");
  CHECK(!parse_attribution_response("I cannot tell.", cands).has_value());
  CHECK(!parse_attribution_response("", cands).has_value());
  CHECK(!parse_attribution_response("BAGEL is my guess", cands).has_value());
}

TEST_CASE("exemplar orders are deterministic independent and uniform") {
  CHECK(exemplar_order(3, 0, 5) == exemplar_order(3, 0, 5));

  bool set_index_matters = false, seed_matters = false;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    if (exemplar_order(seed, 0, 5) != exemplar_order(seed, 1, 5)) set_index_matters = true;
    if (exemplar_order(seed, 0, 5) != exemplar_order(seed + 1, 0, 5)) seed_matters = true;
  }
  CHECK(set_index_matters);
  CHECK(seed_matters);

  // Chi-square goodness of fit over all 120 orders of 5 candidates.
  std::vector<int> bins(120, 0);
  const int draws = 1000;
  for (int seed = 0; seed < draws; ++seed)
    ++bins[static_cast<size_t>(permutation_index(exemplar_order(seed, 0, 5)))];
  const double expected = draws / 120.0;
  double chi2 = 0.0;
  int observed_orders = 0;
  for (int b : bins) {
    if (b > 0) ++observed_orders;
    chi2 += (b - expected) * (b - expected) / expected;
  }
  CHECK(chi2 < 172.41768160217916);  // df=119 critical value at p=0.001
  CHECK(observed_orders > 110);      // essentially every order appears
}

TEST_CASE("few shot assembly shapes the request and excludes the target") {
  CorpusFixture corpus("mllm_assemble_corpus", palette_only_signatures(5), 8);
  const std::vector<std::string> candidates = models_of(corpus.rows);
  REQUIRE(candidates.size() == 5);

  AttributionQuery query;
  query.target_id = corpus.rows.front().id;
  query.candidates = candidates;
  query.seed = 42;

  SUBCASE("zero shot is image then prompt") {
    const ChatRequest req = assemble_few_shot(query, corpus.root.string(), corpus.rows);
    REQUIRE(req.parts.size() == 2);
    CHECK(req.parts[0].kind == ChatPart::Kind::image);
    CHECK(req.parts[0].image_id == query.target_id);
    CHECK(!req.parts[0].image.empty());
    CHECK(req.parts[1].kind == ChatPart::Kind::text);
    CHECK(req.parts[1].text == build_zero_shot_prompt(candidates));
  }

  SUBCASE("five shot carries twenty five exemplar caption pairs") {
    query.shots = 5;
    const ChatRequest req = assemble_few_shot(query, corpus.root.string(), corpus.rows);
    REQUIRE(req.parts.size() == 1 + 2 * 25 + 2);
    CHECK(req.parts[0].text ==
          "Below are 5 reference example(s) per model so you can see each model's visual style");

    std::map<std::string, int> per_model;
    std::map<std::string, std::string> model_by_id;
    for (const ManifestRow& r : corpus.rows) model_by_id[r.id] = r.model;
    for (int i = 0; i < 25; ++i) {
      const ChatPart& img = req.parts[static_cast<size_t>(1 + 2 * i)];
      const ChatPart& caption = req.parts[static_cast<size_t>(2 + 2 * i)];
      CHECK(img.kind == ChatPart::Kind::image);
      CHECK(caption.kind == ChatPart::Kind::text);
      CHECK(img.image_id != query.target_id);
      CHECK(model_by_id.at(img.image_id) == caption.text);
      per_model[caption.text] += 1;
    }
    for (const std::string& c : candidates) CHECK(per_model[c] == 5);

    CHECK(req.parts[req.parts.size() - 2].image_id == query.target_id);
    CHECK(req.parts.back().text == build_zero_shot_prompt(candidates));

    // Set order follows the published per-set permutation stream.
    const std::vector<int> order = exemplar_order(query.seed, 0, 5);
    for (int i = 0; i < 5; ++i)
      CHECK(req.parts[static_cast<size_t>(2 + 2 * i)].text ==
            candidates[static_cast<size_t>(order[static_cast<size_t>(i)])]);
  }

  SUBCASE("assembly is deterministic in the query seed") {
    query.shots = 2;
    const ChatRequest a = assemble_few_shot(query, corpus.root.string(), corpus.rows);
    const ChatRequest b = assemble_few_shot(query, corpus.root.string(), corpus.rows);
    REQUIRE(a.parts.size() == b.parts.size());
    for (size_t i = 0; i < a.parts.size(); ++i) {
      CHECK(a.parts[i].image_id == b.parts[i].image_id);
      CHECK(a.parts[i].text == b.parts[i].text);
    }
    query.seed = 43;
    const ChatRequest c = assemble_few_shot(query, corpus.root.string(), corpus.rows);
    bool differs = false;
    for (size_t i = 0; i < a.parts.size(); ++i)
      if (a.parts[i].image_id != c.parts[i].image_id) differs = true;
    CHECK(differs);
  }

  SUBCASE("exemplar shortage and missing target are data errors") {
    query.shots = 8;  // target's own model has only 7 other images
    CHECK_THROWS_AS(assemble_few_shot(query, corpus.root.string(), corpus.rows), DataError);
    query.shots = 0;
    query.target_id = "nonexistent";
    CHECK_THROWS_AS(assemble_few_shot(query, corpus.root.string(), corpus.rows), DataError);
  }
}

TEST_CASE("truth stub scores one hundred percent with fixed denominators") {
  CorpusFixture corpus("mllm_truth_corpus", palette_only_signatures(2), 12);
  TruthClient client(corpus.rows);

  MllmRunConfig config;
  config.shots = {0, 1};
  config.per_model_queries = 10;
  config.seed = 7;
  config.initial_backoff_seconds = 0;
  const fs::path audit = fs::temp_directory_path() / "mllm_truth_audit.jsonl";
  fs::remove(audit);
  config.audit_log_path = audit.string();

  const MllmRunResult result =
      run_mllm_attribution(corpus.root.string(), corpus.rows, client, config);
  REQUIRE(result.per_shot.size() == 2);
  for (const ShotResult& s : result.per_shot) {
    CHECK(s.total() == 20);
    CHECK(s.accuracy() == 1.0);
    CHECK(s.parse_failures == 0);
  }

  std::ifstream log(audit);
  int lines = 0;
  std::string line;
  while (std::getline(log, line)) {
    const nlohmann::json rec = nlohmann::json::parse(line);
    CHECK(rec.at("correct") == true);
    CHECK(rec.at("attempts") == 1);
    CHECK(rec.at("parsed") == rec.at("true_model"));
    CHECK(rec.at("request_parts").size() >= 2);
    ++lines;
  }
  CHECK(lines == 40);
  fs::remove(audit);

  config.per_model_queries = 13;  // corpus has only 12 per model
  CHECK_THROWS_AS(run_mllm_attribution(corpus.root.string(), corpus.rows, client, config),
                  DataError);
}

TEST_CASE("uniform stub lands near one in five") {
  CorpusFixture corpus("mllm_uniform_corpus", palette_only_signatures(5), 30);
  const std::vector<std::string> candidates = models_of(corpus.rows);
  UniformClient client(candidates, 99);

  MllmRunConfig config;
  config.shots = {0};
  config.per_model_queries = 30;
  config.seed = 8;
  config.initial_backoff_seconds = 0;

  const MllmRunResult result =
      run_mllm_attribution(corpus.root.string(), corpus.rows, client, config);
  REQUIRE(result.per_shot.size() == 1);
  CHECK(result.per_shot[0].total() == 150);
  const double acc = result.per_shot[0].accuracy();
  CHECK(acc > 0.07);
  CHECK(acc < 0.33);

  // Dispatch interleaving must not change the tally.
  config.workers = 3;
  const MllmRunResult again =
      run_mllm_attribution(corpus.root.string(), corpus.rows, client, config);
  CHECK(again.to_json() == result.to_json());
}

TEST_CASE("endpoint failures retry then score as parse failures") {
  CorpusFixture corpus("mllm_fail_corpus", palette_only_signatures(2), 6);
  FailingClient client;

  MllmRunConfig config;
  config.shots = {0};
  config.per_model_queries = 4;
  config.seed = 9;
  config.max_retries = 5;
  config.initial_backoff_seconds = 0;

  const MllmRunResult result =
      run_mllm_attribution(corpus.root.string(), corpus.rows, client, config);
  CHECK(result.per_shot[0].total() == 8);
  CHECK(result.per_shot[0].parse_failures == 8);
  CHECK(result.per_shot[0].accuracy() == 0.0);
  CHECK(client.calls() == 8 * 6);  // one initial attempt plus five retries each
}

TEST_CASE("mllm run config rejects bad shot lists") {
  CorpusFixture corpus("mllm_cfg_corpus", palette_only_signatures(2), 4);
  TruthClient client(corpus.rows);
  MllmRunConfig config;
  config.per_model_queries = 2;
  config.initial_backoff_seconds = 0;

  config.shots = {};
  CHECK_THROWS_AS(run_mllm_attribution(corpus.root.string(), corpus.rows, client, config),
                  ConfigError);
  config.shots = {0, 0};
  CHECK_THROWS_AS(run_mllm_attribution(corpus.root.string(), corpus.rows, client, config),
                  ConfigError);
  config.shots = {-1};
  CHECK_THROWS_AS(run_mllm_attribution(corpus.root.string(), corpus.rows, client, config),
                  ConfigError);
}

TEST_CASE("domain cooccurrence from a truthful stub is the identity layout") {
  const auto& domains = domain_names();
  CorpusFixture corpus("mllm_cooc_corpus", palette_only_signatures(2), 6,
                       {domains[0], domains[1], domains[2]});
  DomainOracleClient client(corpus.rows);

  const DomainCooccurrence result =
      run_domain_cooccurrence(corpus.root.string(), corpus.rows, client, 5, 11);
  REQUIRE(result.domains == std::vector<std::string>{domains[0], domains[1], domains[2]});
  for (int d = 0; d < 3; ++d)
    for (int q = 0; q < 3; ++q)
      CHECK(result.yes_percent[static_cast<size_t>(d) * 3 + q] == (d == q ? 100.0 : 0.0));
}

TEST_CASE("base64 encodes the classic vectors") {
  CHECK(base64_encode({}) == "");
  CHECK(base64_encode({'M'}) == "TQ==");
  CHECK(base64_encode({'M', 'a'}) == "TWE=");
  CHECK(base64_encode({'M', 'a', 'n'}) == "TWFu");
  CHECK(base64_encode({0, 1, 2}) == "AAEC");
}

TEST_CASE("http client builds the wire payload and round trips") {
  HttpEndpointConfig endpoint;
  endpoint.base_url = "http://127.0.0.1:1/chat";  // unused for payload shape
  endpoint.model = "evaluator-x";
  HttpChatClient shaper(endpoint);

  ChatRequest request;
  request.parts.push_back(ChatPart::make_text("hello"));
  request.parts.push_back(ChatPart::make_image({0, 1, 2}, "img-1"));

  nlohmann::json payload = shaper.wire_payload(request);
  CHECK(payload.at("model") == "evaluator-x");
  REQUIRE(payload.at("parts").size() == 2);
  CHECK(payload["parts"][0] == nlohmann::json{{"text", "hello"}, {"type", "text"}});
  CHECK(payload["parts"][1] == nlohmann::json{{"b64", "AAEC"}, {"type", "image"}});
  CHECK(!payload.contains("temperature"));
  CHECK(!payload.contains("max_tokens"));

  endpoint.temperature = 0.5;
  endpoint.max_tokens = 64;
  HttpChatClient shaper2(endpoint);
  payload = shaper2.wire_payload(request);
  CHECK(payload.at("temperature") == 0.5);
  CHECK(payload.at("max_tokens") == 64);

  endpoint.base_url = "ftp://bad";
  CHECK_THROWS_AS(HttpChatClient{endpoint}, ConfigError);

  // Live round trip against a local server.
  httplib::Server server;
  std::atomic<int> hits{0};
  nlohmann::json seen;
  std::string seen_auth;
  server.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    seen = nlohmann::json::parse(req.body);
    seen_auth = req.get_header_value("Authorization");
    res.set_content(R"({"text":"analysis\nMMaDA","status":"ok"})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  setenv("UMAT_MLLM_TOKEN", "secret-token", 1);
  HttpEndpointConfig live;
  live.base_url = "http://127.0.0.1:" + std::to_string(port) + "/chat";
  live.model = "evaluator-x";
  HttpChatClient client(live);
  const ChatResponse resp = client.complete(request);
  CHECK(resp.ok());
  CHECK(resp.text == "analysis\nMMaDA");
  CHECK(parse_attribution_response(resp.text, default_candidates()) == "MMaDA");
  CHECK(hits == 1);
  CHECK(seen.at("model") == "evaluator-x");
  CHECK(seen.at("parts").size() == 2);
  CHECK(seen_auth == "Bearer secret-token");
  unsetenv("UMAT_MLLM_TOKEN");

  server.stop();
  server_thread.join();

  HttpEndpointConfig dead;
  dead.base_url = "http://127.0.0.1:" + std::to_string(port) + "/chat";
  dead.timeout_seconds = 1;
  HttpChatClient dead_client(dead);
  CHECK(dead_client.complete(request).status == "transport_error");
}
