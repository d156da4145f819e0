#pragma once

#include "hidac/evaluation.hpp"
#include "hidac/rels.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace hidac {

// ---------------------------------------------------------------------------
// Stratified subsetting

struct StratifiedFolds {
  std::vector<std::vector<int>> folds;  // indices into the input, partitioned
  std::uint64_t seed = 42;
};

/// Label-stratified partition into k near-equal folds: every fold's count for
/// each label is within one of the proportional share.
StratifiedFolds stratified_subsets(const std::vector<RelationInstance>& dev,
                                   int k = 27, std::uint64_t seed = 42);

/// Companion draw of which folds to evaluate, deterministic in the seed.
std::vector<int> select_fold_indices(int n_folds, int n_select,
                                     std::uint64_t seed = 42);

// ---------------------------------------------------------------------------
// Few-shot example pool

struct ComboKey {
  Framework framework = Framework::kPdtb;
  std::string language;
  UnifiedLabel label = UnifiedLabel::kElaboration;

  auto operator<=>(const ComboKey&) const = default;
};

struct ExamplePool {
  std::map<ComboKey, std::vector<RelationInstance>> entries;
  std::vector<ComboKey> shortfalls;  // combos with fewer than per_combo
  int per_combo = 3;

  std::size_t size() const;
};

/// Up to per_combo seeded samples per observed (framework, language, label)
/// combination; combinations with fewer candidates contribute all of them.
ExamplePool build_pool(const std::vector<RelationInstance>& train,
                       int per_combo = 3, std::uint64_t seed = 42);

// ---------------------------------------------------------------------------
// Prompt construction

enum class PromptMode : int { kZeroShot = 0, kFewShot };
enum class Experiment : int { kExp1SameLanguage = 0, kExp2English,
                              kExp3WeakLabels };

std::string prompt_mode_to_string(PromptMode mode);
PromptMode prompt_mode_from_string(std::string_view raw);
std::string experiment_to_string(Experiment experiment);
Experiment experiment_from_string(std::string_view raw);

struct PromptSpec {
  PromptMode mode = PromptMode::kZeroShot;
  OrderingStrategy ordering = OrderingStrategy::kNatural;
  Experiment experiment = Experiment::kExp1SameLanguage;
  int n_examples = 0;
  // Experiment 1 only: fall back to English examples when the query language
  // has no pool entries. Off by default; without it the gap is an error.
  bool allow_english_fallback = false;
  std::string template_path;  // empty: built-in template

  static PromptSpec zero_shot(OrderingStrategy ordering);
  static PromptSpec few_shot(Experiment experiment, OrderingStrategy ordering);
};

/// Draws examples per the experiment policy. Experiment 1: query language;
/// 2: English; 3: one English example per weak label plus two extras. Never
/// returns the query itself; never exceeds spec.n_examples.
std::vector<RelationInstance> select_examples(
    const ExamplePool& pool, const RelationInstance& instance,
    const PromptSpec& spec, const std::vector<UnifiedLabel>* weak_labels,
    std::mt19937_64& rng);

const std::string& default_prompt_template();

/// Deterministic render: English instructions, the 17-label list, example
/// blocks, then the (ordered) query pair. An override template must contain
/// the {{arg1}} and {{arg2}} placeholders; {{labels}} and {{examples}} are
/// also substituted.
std::string render_prompt(const RelationInstance& instance,
                          const std::vector<RelationInstance>& examples,
                          OrderingStrategy ordering,
                          const std::string& template_text = std::string());

/// First standalone label token in the text, case-insensitive; nullopt when
/// none occurs.
std::optional<UnifiedLabel> parse_response(const std::string& text);

// ---------------------------------------------------------------------------
// Clients

struct PromptRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.0;
  std::string instance_id;  // metadata for audit logs and deterministic mocks
};

struct PromptResponse {
  std::string text;
  bool transport_error = false;
  std::string error;
};

class LLMClient {
 public:
  virtual ~LLMClient() = default;
  virtual PromptResponse complete(const PromptRequest& request) = 0;
  virtual std::string describe() const = 0;
};

/// Answers with the gold label of the request's instance id.
class GoldEchoClient : public LLMClient {
 public:
  explicit GoldEchoClient(const std::vector<RelationInstance>& instances);
  PromptResponse complete(const PromptRequest& request) override;
  std::string describe() const override;

 private:
  std::map<std::string, UnifiedLabel> gold_;
};

class FixedLabelClient : public LLMClient {
 public:
  explicit FixedLabelClient(UnifiedLabel label) : label_(label) {}
  PromptResponse complete(const PromptRequest& request) override;
  std::string describe() const override;

 private:
  UnifiedLabel label_;
};

class UnparseableClient : public LLMClient {
 public:
  PromptResponse complete(const PromptRequest& request) override;
  std::string describe() const override;
};

/// Fails the first `failures` calls per instance with a transport error, then
/// delegates. Exercises the retry path.
class FlakyClient : public LLMClient {
 public:
  FlakyClient(std::unique_ptr<LLMClient> inner, int failures);
  PromptResponse complete(const PromptRequest& request) override;
  std::string describe() const override;

 private:
  std::unique_ptr<LLMClient> inner_;
  int failures_;
  std::map<std::string, int> calls_;
  std::mutex mu_;
};

/// POSTs {model, temperature, max_tokens, messages:[{role:"user", ...}]} to
/// `url` and accepts the common response envelopes (content[0].text,
/// choices[0].message.content, or text).
class HttpJsonClient : public LLMClient {
 public:
  HttpJsonClient(std::string url, std::string api_key, std::string model);
  PromptResponse complete(const PromptRequest& request) override;
  std::string describe() const override;

 private:
  std::string url_;
  std::string api_key_;
  std::string model_;
};

/// "mock:gold" | "mock:fixed:<label>" | "mock:unparseable" | "http:<model>".
/// The http form reads LLM_API_URL and LLM_API_KEY from the environment.
std::unique_ptr<LLMClient> make_client(
    const std::string& client_spec,
    const std::vector<RelationInstance>& subset);

// ---------------------------------------------------------------------------
// End-to-end evaluation

struct PromptEvalOptions {
  std::string audit_path;  // JSON-lines request/response log; empty disables
  int max_in_flight = 1;
  int max_attempts = 3;
  int backoff_ms = 10;
  std::string model = "mock";
  std::uint64_t seed = 42;
  std::vector<UnifiedLabel> weak_labels;  // experiment 3 (exactly six)
};

struct PromptOutcome {
  std::string instance_id;
  std::string response;
  std::optional<UnifiedLabel> parsed;
  int attempts = 1;
  bool transport_failure = false;
  double latency_ms = 0.0;
};

struct PromptEvalResult {
  GroupedReport report;
  std::vector<PromptOutcome> outcomes;  // aligned with the subset
  int n_parse_failures = 0;
  int n_transport_failures = 0;
};

/// One request per instance at temperature 0; transport errors retried up to
/// max_attempts with exponential backoff, then scored as incorrect. Example
/// selection is seeded per instance id, so results do not depend on
/// completion order.
PromptEvalResult run_prompt_eval(LLMClient& client,
                                 const std::vector<RelationInstance>& subset,
                                 const PromptSpec& spec,
                                 const ExamplePool& pool,
                                 const PromptEvalOptions& options);

}  // namespace hidac
