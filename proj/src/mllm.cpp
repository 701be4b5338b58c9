#include "umat/mllm.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <httplib.h>

#include "umat/canonical_json.hpp"
#include "umat/error.hpp"
#include "umat/parallel.hpp"
#include "umat/rng.hpp"

namespace umat {

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read image file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(f),
                              std::istreambuf_iterator<char>());
}

const ChatPart* last_image_part(const ChatRequest& request) {
  for (auto it = request.parts.rbegin(); it != request.parts.rend(); ++it)
    if (it->kind == ChatPart::Kind::image) return &*it;
  return nullptr;
}

const ChatPart* last_text_part(const ChatRequest& request) {
  for (auto it = request.parts.rbegin(); it != request.parts.rend(); ++it)
    if (it->kind == ChatPart::Kind::text) return &*it;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& default_candidates() {
  static const std::vector<std::string> names{"BAGEL", "Emu3.5", "Janus-Pro-7B", "MMaDA",
                                              "Show-o2"};
  return names;
}

ChatPart ChatPart::make_text(std::string t) {
  ChatPart p;
  p.kind = Kind::text;
  p.text = std::move(t);
  return p;
}

ChatPart ChatPart::make_image(std::vector<uint8_t> bytes, std::string id) {
  ChatPart p;
  p.kind = Kind::image;
  p.image = std::move(bytes);
  p.image_id = std::move(id);
  return p;
}

std::string build_zero_shot_prompt(const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw ConfigError("zero-shot prompt needs at least one candidate");
  std::string out = "This image was generated by one of the following AI image generation models:\n";
  for (const std::string& c : candidates) out += "- " + c + "\n";
  out +=
      "\nBased on visual characteristics alone, which model do you think generated this "
      "image?\n\nThink step by step about the visual characteristics that distinguish these "
      "models (e.g. style, artifacts, color palette, sharpness, composition). Then on the very "
      "last line of your response, write only the exact model name from the list above, nothing "
      "else.";
  return out;
}

std::string build_domain_question(const std::string& question_domain) {
  if (question_domain.empty()) throw ConfigError("domain question needs a domain");
  return "In the image, do you see " + question_domain +
         "? Answer the question with just yes or no.";
}

std::optional<bool> parse_yes_no(const std::string& text) {
  const std::string t = lower(trim(text));
  if (t.rfind("yes", 0) == 0) return true;
  if (t.rfind("no", 0) == 0) return false;
  return std::nullopt;
}

std::optional<std::string> parse_attribution_response(
    const std::string& text, const std::vector<std::string>& candidates) {
  size_t end = text.size();
  while (end > 0) {
    size_t start = text.rfind('\n', end - 1);
    const size_t line_begin = start == std::string::npos ? 0 : start + 1;
    const std::string line = trim(text.substr(line_begin, end - line_begin));
    if (!line.empty()) {
      const std::string needle = lower(line);
      for (const std::string& c : candidates)
        if (lower(c) == needle) return c;
      return std::nullopt;
    }
    if (start == std::string::npos) break;
    end = start;
  }
  return std::nullopt;
}

std::vector<int> exemplar_order(uint64_t seed, int set_index, int n_candidates) {
  std::vector<int> order(static_cast<size_t>(n_candidates));
  for (int i = 0; i < n_candidates; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(hash_combine(hash_combine(seed, hash_str("fewshot_set")),
                       static_cast<uint64_t>(set_index)));
  rng.shuffle(order);
  return order;
}

ChatRequest assemble_few_shot(const AttributionQuery& query, const std::string& corpus_root,
                              const std::vector<ManifestRow>& rows) {
  if (query.candidates.empty()) throw ConfigError("attribution query needs candidates");
  if (query.shots < 0) throw ConfigError("attribution query needs shots >= 0");

  const ManifestRow* target = nullptr;
  std::map<std::string, std::vector<const ManifestRow*>> pools;
  for (const ManifestRow& r : rows) {
    if (r.id == query.target_id) target = &r;
    else pools[r.model].push_back(&r);
  }
  if (!target) throw DataError("attribution target not in manifest: " + query.target_id);
  for (auto& [model, pool] : pools)
    std::sort(pool.begin(), pool.end(),
              [](const ManifestRow* a, const ManifestRow* b) { return a->id < b->id; });

  const auto read_image = [&](const ManifestRow& row) {
    return ChatPart::make_image(
        read_file_bytes((std::filesystem::path(corpus_root) / row.path).string()), row.id);
  };

  ChatRequest request;
  if (query.shots > 0) {
    for (const std::string& c : query.candidates) {
      const auto it = pools.find(c);
      const size_t available = it == pools.end() ? 0 : it->second.size();
      if (available < static_cast<size_t>(query.shots))
        throw DataError("exemplar shortage for model " + c);
    }
    request.parts.push_back(ChatPart::make_text(
        "Below are " + std::to_string(query.shots) +
        " reference example(s) per model so you can see each model's visual style"));
    const int n = static_cast<int>(query.candidates.size());
    for (int s = 0; s < query.shots; ++s) {
      const std::vector<int> order = exemplar_order(query.seed, s, n);
      Rng draw(hash_combine(hash_combine(query.seed, hash_str("fewshot_draw")),
                            static_cast<uint64_t>(s)));
      for (int idx : order) {
        const std::string& name = query.candidates[static_cast<size_t>(idx)];
        const auto& pool = pools.at(name);
        const ManifestRow& pick = *pool[draw.next_below(pool.size())];
        request.parts.push_back(read_image(pick));
        request.parts.push_back(ChatPart::make_text(pick.model));
      }
    }
  }
  request.parts.push_back(read_image(*target));
  request.parts.push_back(ChatPart::make_text(build_zero_shot_prompt(query.candidates)));
  return request;
}

double ShotResult::accuracy() const {
  const int64_t t = total();
  if (t == 0) throw DataError("shot result with no queries");
  return static_cast<double>(correct) / static_cast<double>(t);
}

nlohmann::json ShotResult::to_json() const {
  return nlohmann::json{{"accuracy", accuracy()},
                        {"correct", correct},
                        {"parse_failures", parse_failures},
                        {"shots", shots},
                        {"total", total()},
                        {"wrong", wrong}};
}

nlohmann::json MllmRunResult::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const ShotResult& s : per_shot) arr.push_back(s.to_json());
  return nlohmann::json{{"per_shot", arr}};
}

namespace {

struct QueryOutcome {
  nlohmann::json audit;
  bool correct = false;
  bool parse_failure = false;
};

ChatResponse complete_with_retries(ChatClient& client, const ChatRequest& request,
                                   const MllmRunConfig& config, int& attempts) {
  attempts = 0;
  double backoff = config.initial_backoff_seconds;
  for (;;) {
    ++attempts;
    ChatResponse resp = client.complete(request);
    if (resp.ok() || attempts > config.max_retries) return resp;
    if (backoff > 0)
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    backoff *= 2;
  }
}

nlohmann::json parts_summary(const ChatRequest& request) {
  nlohmann::json parts = nlohmann::json::array();
  for (const ChatPart& p : request.parts) {
    if (p.kind == ChatPart::Kind::text)
      parts.push_back(nlohmann::json{{"chars", p.text.size()}, {"type", "text"}});
    else
      parts.push_back(nlohmann::json{{"id", p.image_id}, {"type", "image"}});
  }
  return parts;
}

}  // namespace

MllmRunResult run_mllm_attribution(const std::string& corpus_root,
                                   const std::vector<ManifestRow>& rows, ChatClient& client,
                                   const MllmRunConfig& config) {
  if (config.per_model_queries <= 0)
    throw ConfigError("mllm: per_model_queries must be positive");
  if (config.shots.empty()) throw ConfigError("mllm: shots list must be non-empty");
  for (int k : config.shots)
    if (k < 0) throw ConfigError("mllm: shot counts must be >= 0");
  if (std::set<int>(config.shots.begin(), config.shots.end()).size() != config.shots.size())
    throw ConfigError("mllm: duplicate shot counts");
  const std::vector<std::string> candidates = class_labels(rows, ClassKey::model);
  if (candidates.empty()) throw DataError("mllm: corpus has no rows");

  std::map<std::string, std::vector<const ManifestRow*>> by_model;
  for (const ManifestRow& r : rows) by_model[r.model].push_back(&r);

  std::vector<const ManifestRow*> targets;  // per model, per_model_queries each
  for (const std::string& model : candidates) {
    auto& pool = by_model[model];
    std::sort(pool.begin(), pool.end(),
              [](const ManifestRow* a, const ManifestRow* b) { return a->id < b->id; });
    if (pool.size() < static_cast<size_t>(config.per_model_queries))
      throw DataError("mllm: model " + model + " has fewer than " +
                      std::to_string(config.per_model_queries) + " images");
    Rng rng(hash_combine(config.seed, hash_str("targets/" + model)));
    rng.shuffle(pool);
    targets.insert(targets.end(), pool.begin(), pool.begin() + config.per_model_queries);
  }

  struct PendingQuery {
    int shots;
    const ManifestRow* target;
  };
  std::vector<PendingQuery> queries;
  for (int k : config.shots)
    for (const ManifestRow* t : targets) queries.push_back({k, t});

  std::vector<QueryOutcome> outcomes(queries.size());
  parallel_chunks(static_cast<int64_t>(queries.size()), config.workers, [&](int64_t qi) {
    const PendingQuery& q = queries[static_cast<size_t>(qi)];
    AttributionQuery aq;
    aq.target_id = q.target->id;
    aq.candidates = candidates;
    aq.shots = q.shots;
    aq.seed = hash_combine(config.seed,
                           hash_str("query/" + std::to_string(q.shots) + "/" + q.target->id));
    const ChatRequest request = assemble_few_shot(aq, corpus_root, rows);

    int attempts = 0;
    const ChatResponse resp = complete_with_retries(client, request, config, attempts);
    const std::optional<std::string> parsed =
        resp.ok() ? parse_attribution_response(resp.text, candidates) : std::nullopt;

    QueryOutcome& out = outcomes[static_cast<size_t>(qi)];
    out.parse_failure = !parsed.has_value();
    out.correct = parsed.has_value() && *parsed == q.target->model;
    out.audit = nlohmann::json{{"attempts", attempts},
                               {"correct", out.correct},
                               {"parsed", parsed ? nlohmann::json(*parsed) : nlohmann::json()},
                               {"request_parts", parts_summary(request)},
                               {"response_status", resp.status},
                               {"response_text", resp.text},
                               {"shots", q.shots},
                               {"target_id", q.target->id},
                               {"true_model", q.target->model}};
  });

  if (!config.audit_log_path.empty()) {
    std::ofstream log(config.audit_log_path, std::ios::binary | std::ios::app);
    if (!log) throw DataError("cannot open audit log: " + config.audit_log_path);
    for (const QueryOutcome& out : outcomes) log << canonical_dump(out.audit) << '\n';
  }

  MllmRunResult result;
  for (int k : config.shots) {
    ShotResult sr;
    sr.shots = k;
    result.per_shot.push_back(sr);
  }
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    ShotResult* sr = nullptr;
    for (ShotResult& s : result.per_shot)
      if (s.shots == queries[qi].shots) sr = &s;
    if (outcomes[qi].correct) ++sr->correct;
    else if (outcomes[qi].parse_failure) ++sr->parse_failures;
    else ++sr->wrong;
  }
  return result;
}

nlohmann::json DomainCooccurrence::to_json() const {
  return nlohmann::json{{"domains", domains}, {"yes_percent", yes_percent}};
}

DomainCooccurrence run_domain_cooccurrence(const std::string& corpus_root,
                                           const std::vector<ManifestRow>& rows,
                                           ChatClient& client, int per_domain_queries,
                                           uint64_t seed) {
  if (per_domain_queries <= 0) throw ConfigError("cooccurrence: per_domain_queries must be positive");
  const std::vector<std::string> domains = class_labels(rows, ClassKey::domain);
  if (domains.empty()) throw DataError("cooccurrence: corpus has no rows");
  const int n = static_cast<int>(domains.size());

  std::map<std::string, std::vector<const ManifestRow*>> by_domain;
  for (const ManifestRow& r : rows) by_domain[r.domain].push_back(&r);

  DomainCooccurrence result;
  result.domains = domains;
  result.yes_percent.assign(static_cast<size_t>(n) * n, 0.0);

  MllmRunConfig retry_config;  // reuse the attribution retry policy
  for (int d = 0; d < n; ++d) {
    auto& pool = by_domain[domains[static_cast<size_t>(d)]];
    std::sort(pool.begin(), pool.end(),
              [](const ManifestRow* a, const ManifestRow* b) { return a->id < b->id; });
    if (pool.size() < static_cast<size_t>(per_domain_queries))
      throw DataError("cooccurrence: domain " + domains[static_cast<size_t>(d)] +
                      " has fewer than " + std::to_string(per_domain_queries) + " images");
    Rng rng(hash_combine(seed, hash_str("cooc/" + domains[static_cast<size_t>(d)])));
    rng.shuffle(pool);

    for (int i = 0; i < per_domain_queries; ++i) {
      const ManifestRow& row = *pool[static_cast<size_t>(i)];
      ChatRequest request;
      request.parts.push_back(ChatPart::make_image(
          read_file_bytes((std::filesystem::path(corpus_root) / row.path).string()), row.id));
      for (int q = 0; q < n; ++q) {
        request.parts.resize(1);
        request.parts.push_back(
            ChatPart::make_text(build_domain_question(domains[static_cast<size_t>(q)])));
        int attempts = 0;
        const ChatResponse resp = complete_with_retries(client, request, retry_config, attempts);
        const std::optional<bool> yes = resp.ok() ? parse_yes_no(resp.text) : std::nullopt;
        if (yes.value_or(false))
          result.yes_percent[static_cast<size_t>(d) * n + q] += 1.0;
      }
    }
  }
  for (double& v : result.yes_percent) v *= 100.0 / per_domain_queries;
  return result;
}

TruthClient::TruthClient(const std::vector<ManifestRow>& rows) {
  for (const ManifestRow& r : rows) model_by_id_[r.id] = r.model;
}

ChatResponse TruthClient::complete(const ChatRequest& request) {
  const ChatPart* target = last_image_part(request);
  if (!target) return {"", "no_image"};
  const auto it = model_by_id_.find(target->image_id);
  if (it == model_by_id_.end()) return {"unknown image", "ok"};
  return {"The style points one way.\n" + it->second, "ok"};
}

UniformClient::UniformClient(std::vector<std::string> candidates, uint64_t seed)
    : candidates_(std::move(candidates)), seed_(seed) {
  if (candidates_.empty()) throw ConfigError("uniform stub needs candidates");
}

ChatResponse UniformClient::complete(const ChatRequest& request) {
  const ChatPart* target = last_image_part(request);
  // Keyed by target id and request shape, not call order, so answers are
  // independent of dispatch interleaving.
  uint64_t h = hash_combine(seed_, target ? hash_str(target->image_id) : 0);
  h = hash_combine(h, request.parts.size());
  Rng rng(h);
  return {candidates_[rng.next_below(candidates_.size())], "ok"};
}

ChatResponse FailingClient::complete(const ChatRequest&) {
  ++calls_;
  return {"", "transport_error"};
}

DomainOracleClient::DomainOracleClient(const std::vector<ManifestRow>& rows) {
  for (const ManifestRow& r : rows) domain_by_id_[r.id] = r.domain;
}

ChatResponse DomainOracleClient::complete(const ChatRequest& request) {
  const ChatPart* image = last_image_part(request);
  const ChatPart* question = last_text_part(request);
  if (!image || !question) return {"", "no_image"};
  const std::string& text = question->text;
  const std::string prefix = "In the image, do you see ";
  const size_t qmark = text.find('?');
  if (text.rfind(prefix, 0) != 0 || qmark == std::string::npos) return {"", "bad_question"};
  const std::string asked = text.substr(prefix.size(), qmark - prefix.size());
  const auto it = domain_by_id_.find(image->image_id);
  if (it == domain_by_id_.end()) return {"no", "ok"};
  return {it->second == asked ? "yes" : "no", "ok"};
}

std::string base64_encode(const std::vector<uint8_t>& bytes) {
  static const char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const uint32_t v = (uint32_t(bytes[i]) << 16) | (uint32_t(bytes[i + 1]) << 8) | bytes[i + 2];
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += table[(v >> 6) & 63];
    out += table[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const uint32_t v = uint32_t(bytes[i]) << 16;
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const uint32_t v = (uint32_t(bytes[i]) << 16) | (uint32_t(bytes[i + 1]) << 8);
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += table[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

HttpChatClient::HttpChatClient(HttpEndpointConfig config) : config_(std::move(config)) {
  if (config_.base_url.rfind("http://", 0) != 0)
    throw ConfigError("endpoint base_url must start with http://");
}

nlohmann::json HttpChatClient::wire_payload(const ChatRequest& request) const {
  nlohmann::json parts = nlohmann::json::array();
  for (const ChatPart& p : request.parts) {
    if (p.kind == ChatPart::Kind::text)
      parts.push_back(nlohmann::json{{"text", p.text}, {"type", "text"}});
    else
      parts.push_back(nlohmann::json{{"b64", base64_encode(p.image)}, {"type", "image"}});
  }
  nlohmann::json payload{{"model", config_.model}, {"parts", parts}};
  if (config_.temperature) payload["temperature"] = *config_.temperature;
  if (config_.max_tokens) payload["max_tokens"] = *config_.max_tokens;
  return payload;
}

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
  const size_t scheme_end = config_.base_url.find("://");
  const size_t path_start = config_.base_url.find('/', scheme_end + 3);
  const std::string host =
      path_start == std::string::npos ? config_.base_url : config_.base_url.substr(0, path_start);
  const std::string path =
      path_start == std::string::npos ? "/" : config_.base_url.substr(path_start);

  httplib::Client http(host);
  http.set_connection_timeout(config_.timeout_seconds);
  http.set_read_timeout(config_.timeout_seconds);
  httplib::Headers headers;
  if (const char* token = std::getenv(config_.auth_token_env.c_str()); token && *token)
    headers.emplace("Authorization", std::string("Bearer ") + token);

  const auto res =
      http.Post(path, headers, wire_payload(request).dump(), "application/json");
  if (!res) return {"", "transport_error"};
  if (res->status != 200) return {"", "http_" + std::to_string(res->status)};
  nlohmann::json body = nlohmann::json::parse(res->body, nullptr, false);
  if (body.is_discarded() || !body.contains("text") || !body.contains("status") ||
      !body["text"].is_string() || !body["status"].is_string())
    return {"", "bad_payload"};
  return {body["text"].get<std::string>(), body["status"].get<std::string>()};
}

}  // namespace umat
