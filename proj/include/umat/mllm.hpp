#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "umat/dataset.hpp"

namespace umat {

// Candidate list in its fixed published order (which is also sorted order).
const std::vector<std::string>& default_candidates();

struct ChatPart {
  enum class Kind { text, image };
  Kind kind = Kind::text;
  std::string text;             // kind == text
  std::vector<uint8_t> image;   // kind == image, encoded file bytes
  std::string image_id;         // provenance; carried into the audit log

  static ChatPart make_text(std::string t);
  static ChatPart make_image(std::vector<uint8_t> bytes, std::string id);
};

// Part order carries the prompt semantics and is preserved end to end.
struct ChatRequest {
  std::vector<ChatPart> parts;
};

struct ChatResponse {
  std::string text;
  std::string status;  // "ok" or an error tag; non-ok responses are retried

  bool ok() const { return status == "ok"; }
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Must be safe to call from several threads at once.
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

std::string build_zero_shot_prompt(const std::vector<std::string>& candidates);

// "In the image, do you see {question_domain}? Answer the question with just
// yes or no."
std::string build_domain_question(const std::string& question_domain);

// Case-insensitive prefix match of the trimmed reply against yes/no.
std::optional<bool> parse_yes_no(const std::string& text);

// Last non-empty line, trimmed, matched case-insensitively against the
// candidates. No match is a parse failure, which callers score as incorrect.
std::optional<std::string> parse_attribution_response(const std::string& text,
                                                      const std::vector<std::string>& candidates);

struct AttributionQuery {
  std::string target_id;
  std::vector<std::string> candidates;
  int shots = 0;
  uint64_t seed = 0;
};

// Candidate order for example set set_index: a permutation drawn from
// (seed, set_index) only, so sets are randomized independently.
std::vector<int> exemplar_order(uint64_t seed, int set_index, int n_candidates);

// Builds the full request: a reference-examples header, then shots sets of
// one (image, caption) pair per candidate in independently randomized order,
// then the target image, then the zero-shot question. shots == 0 yields
// exactly [target image, prompt]. The target never appears as an exemplar.
ChatRequest assemble_few_shot(const AttributionQuery& query, const std::string& corpus_root,
                              const std::vector<ManifestRow>& rows);

struct MllmRunConfig {
  std::vector<int> shots = {0, 1, 5};
  int per_model_queries = 1000;
  uint64_t seed = 0;
  int max_retries = 5;                    // further attempts after the first
  double initial_backoff_seconds = 0.25;  // doubles per retry
  std::string audit_log_path;             // empty disables the audit log
  int workers = 1;                        // concurrent in-flight requests
};

struct ShotResult {
  int shots = 0;
  int64_t correct = 0;
  int64_t wrong = 0;
  int64_t parse_failures = 0;  // scored as incorrect

  int64_t total() const { return correct + wrong + parse_failures; }
  double accuracy() const;

  nlohmann::json to_json() const;
};

struct MllmRunResult {
  std::vector<ShotResult> per_shot;

  nlohmann::json to_json() const;
};

// Queries the client with per_model_queries targets per model for each shot
// count. Candidates are the corpus model labels. Every query is answered:
// endpoint failures are retried with exponential backoff and then scored as
// parse failures, so denominators stay fixed.
MllmRunResult run_mllm_attribution(const std::string& corpus_root,
                                   const std::vector<ManifestRow>& rows, ChatClient& client,
                                   const MllmRunConfig& config);

// Yes-rate matrix for the domain question: rows are the prompt domain of the
// image, columns the questioned domain, values percentages in [0, 100].
struct DomainCooccurrence {
  std::vector<std::string> domains;
  std::vector<double> yes_percent;  // row-major, origin x questioned

  nlohmann::json to_json() const;
};

DomainCooccurrence run_domain_cooccurrence(const std::string& corpus_root,
                                           const std::vector<ManifestRow>& rows,
                                           ChatClient& client, int per_domain_queries,
                                           uint64_t seed);

// Stub evaluators for oracle tests and offline runs.

// Answers the true model of the target (last) image.
class TruthClient : public ChatClient {
 public:
  explicit TruthClient(const std::vector<ManifestRow>& rows);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::map<std::string, std::string> model_by_id_;
};

// Answers a candidate drawn uniformly per query, derived from the target id
// so the draw is independent of request order.
class UniformClient : public ChatClient {
 public:
  UniformClient(std::vector<std::string> candidates, uint64_t seed);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::vector<std::string> candidates_;
  uint64_t seed_;
};

// Always fails with a transport error; exercises the retry path.
class FailingClient : public ChatClient {
 public:
  ChatResponse complete(const ChatRequest& request) override;
  int64_t calls() const { return calls_; }

 private:
  std::atomic<int64_t> calls_{0};
};

// Answers the domain question truthfully from the manifest: yes when the
// questioned domain equals the image's prompt domain.
class DomainOracleClient : public ChatClient {
 public:
  explicit DomainOracleClient(const std::vector<ManifestRow>& rows);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::map<std::string, std::string> domain_by_id_;
};

// Minimal generic vision-chat endpoint: POST {model, parts, optional
// temperature and max_tokens} as JSON, parts rendered as
// [{type:"text",text:...} | {type:"image",b64:...}]; expects {text, status}.
struct HttpEndpointConfig {
  std::string base_url;  // e.g. http://host:8080/v1/chat
  std::string model;     // evaluator model name, passed through
  std::string auth_token_env = "UMAT_MLLM_TOKEN";
  std::optional<double> temperature;  // opaque pass-through
  std::optional<int> max_tokens;      // opaque pass-through
  int timeout_seconds = 120;
};

class HttpChatClient : public ChatClient {
 public:
  explicit HttpChatClient(HttpEndpointConfig config);
  ChatResponse complete(const ChatRequest& request) override;

  // Wire payload for one request; exposed so tests can pin the format.
  nlohmann::json wire_payload(const ChatRequest& request) const;

 private:
  HttpEndpointConfig config_;
};

std::string base64_encode(const std::vector<uint8_t>& bytes);

}  // namespace umat
