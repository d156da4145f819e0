#include "hidac/prompting.hpp"

#include "hidac/common.hpp"
#include "hidac/errors.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

namespace hidac {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string replace_all(std::string text, const std::string& needle,
                        const std::string& value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
  return text;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stratified subsetting

StratifiedFolds stratified_subsets(const std::vector<RelationInstance>& dev,
                                   int k, std::uint64_t seed) {
  if (dev.empty()) throw ConfigError("stratified subsets: empty input");
  if (k < 1) throw ConfigError("stratified subsets: k must be >= 1");
  if (static_cast<std::size_t>(k) > dev.size()) {
    throw ConfigError("stratified subsets: k=" + std::to_string(k) +
                      " exceeds " + std::to_string(dev.size()) + " instances");
  }

  std::array<std::vector<int>, kNumLabels> by_label;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    by_label[static_cast<std::size_t>(label_index(dev[i].label))].push_back(
        static_cast<int>(i));
  }

  auto rng = seeded_rng(seed, "stratify");
  StratifiedFolds result;
  result.seed = seed;
  result.folds.assign(static_cast<std::size_t>(k), {});

  // Deal each label group onto a cursor that runs on across groups: per-label
  // counts land within one of proportional, and fold totals stay near-equal.
  std::size_t cursor = 0;
  for (auto& group : by_label) {
    shuffle_in_place(group, rng);
    for (int index : group) {
      result.folds[cursor % static_cast<std::size_t>(k)].push_back(index);
      ++cursor;
    }
  }
  for (auto& fold : result.folds) std::sort(fold.begin(), fold.end());
  return result;
}

std::vector<int> select_fold_indices(int n_folds, int n_select,
                                     std::uint64_t seed) {
  if (n_folds < 1) throw ConfigError("fold selection: n_folds must be >= 1");
  if (n_select < 0 || n_select > n_folds) {
    throw ConfigError("fold selection: n_select must be in [0, n_folds]");
  }
  std::vector<int> indices(static_cast<std::size_t>(n_folds));
  std::iota(indices.begin(), indices.end(), 0);
  auto rng = seeded_rng(seed, "fold-select");
  shuffle_in_place(indices, rng);
  indices.resize(static_cast<std::size_t>(n_select));
  std::sort(indices.begin(), indices.end());
  return indices;
}

// ---------------------------------------------------------------------------
// Few-shot example pool

std::size_t ExamplePool::size() const {
  std::size_t n = 0;
  for (const auto& [key, list] : entries) {
    (void)key;
    n += list.size();
  }
  return n;
}

ExamplePool build_pool(const std::vector<RelationInstance>& train,
                       int per_combo, std::uint64_t seed) {
  if (per_combo < 1) throw ConfigError("example pool: per_combo must be >= 1");

  std::map<ComboKey, std::vector<RelationInstance>> candidates;
  for (const RelationInstance& r : train) {
    if (r.masked) continue;
    candidates[{r.framework, r.language, r.label}].push_back(r);
  }

  auto rng = seeded_rng(seed, "pool");
  ExamplePool pool;
  pool.per_combo = per_combo;
  for (auto& [key, list] : candidates) {
    shuffle_in_place(list, rng);
    if (list.size() > static_cast<std::size_t>(per_combo)) {
      list.resize(static_cast<std::size_t>(per_combo));
    } else if (list.size() < static_cast<std::size_t>(per_combo)) {
      pool.shortfalls.push_back(key);
    }
    pool.entries[key] = std::move(list);
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Prompt construction

std::string prompt_mode_to_string(PromptMode mode) {
  return mode == PromptMode::kZeroShot ? "zero-shot" : "few-shot";
}

PromptMode prompt_mode_from_string(std::string_view raw) {
  const std::string s = to_lower(trim(raw));
  if (s == "zero-shot" || s == "zero_shot" || s == "zero") {
    return PromptMode::kZeroShot;
  }
  if (s == "few-shot" || s == "few_shot" || s == "few") {
    return PromptMode::kFewShot;
  }
  throw ConfigError("unknown prompt mode '" + std::string(raw) +
                    "' (expected zero-shot or few-shot)");
}

std::string experiment_to_string(Experiment experiment) {
  switch (experiment) {
    case Experiment::kExp1SameLanguage: return "exp1";
    case Experiment::kExp2English: return "exp2";
    case Experiment::kExp3WeakLabels: return "exp3";
  }
  throw ConfigError("unknown experiment enumerator");
}

Experiment experiment_from_string(std::string_view raw) {
  const std::string s = to_lower(trim(raw));
  if (s == "exp1" || s == "1") return Experiment::kExp1SameLanguage;
  if (s == "exp2" || s == "2") return Experiment::kExp2English;
  if (s == "exp3" || s == "3") return Experiment::kExp3WeakLabels;
  throw ConfigError("unknown experiment '" + std::string(raw) +
                    "' (expected exp1, exp2 or exp3)");
}

PromptSpec PromptSpec::zero_shot(OrderingStrategy ordering) {
  PromptSpec spec;
  spec.mode = PromptMode::kZeroShot;
  spec.ordering = ordering;
  spec.n_examples = 0;
  return spec;
}

PromptSpec PromptSpec::few_shot(Experiment experiment,
                                OrderingStrategy ordering) {
  PromptSpec spec;
  spec.mode = PromptMode::kFewShot;
  spec.ordering = ordering;
  spec.experiment = experiment;
  spec.n_examples = experiment == Experiment::kExp3WeakLabels ? 8 : 4;
  return spec;
}

namespace {

// All pool entries passing `keep`, minus the query instance.
std::vector<const RelationInstance*> gather(
    const ExamplePool& pool, const RelationInstance& query,
    const std::function<bool(const ComboKey&)>& keep) {
  std::vector<const RelationInstance*> out;
  for (const auto& [key, list] : pool.entries) {
    if (!keep(key)) continue;
    for (const RelationInstance& r : list) {
      if (r.id != query.id) out.push_back(&r);
    }
  }
  return out;
}

std::vector<const RelationInstance*> draw(
    std::vector<const RelationInstance*> candidates, std::size_t n,
    std::mt19937_64& rng) {
  shuffle_in_place(candidates, rng);
  if (candidates.size() > n) candidates.resize(n);
  return candidates;
}

}  // namespace

std::vector<RelationInstance> select_examples(
    const ExamplePool& pool, const RelationInstance& instance,
    const PromptSpec& spec, const std::vector<UnifiedLabel>* weak_labels,
    std::mt19937_64& rng) {
  if (spec.mode != PromptMode::kFewShot) {
    throw ConfigError("example selection applies to few-shot mode only");
  }
  const std::size_t budget = static_cast<std::size_t>(spec.n_examples);
  std::vector<const RelationInstance*> picked;

  switch (spec.experiment) {
    case Experiment::kExp1SameLanguage: {
      auto same_language = gather(pool, instance, [&](const ComboKey& key) {
        return key.language == instance.language;
      });
      if (same_language.empty()) {
        if (!spec.allow_english_fallback) {
          throw SelectionError(
              "no few-shot candidates for language '" + instance.language +
              "' and the English fallback (allow_english_fallback) is off");
        }
        same_language = gather(pool, instance, [](const ComboKey& key) {
          return key.language == "eng";
        });
        if (same_language.empty()) {
          throw SelectionError(
              "no few-shot candidates for language '" + instance.language +
              "' and none in English either (allow_english_fallback)");
        }
      }
      picked = draw(std::move(same_language), budget, rng);
      break;
    }
    case Experiment::kExp2English: {
      auto english = gather(pool, instance, [](const ComboKey& key) {
        return key.language == "eng";
      });
      if (english.empty()) {
        throw SelectionError("no English few-shot candidates in the pool");
      }
      picked = draw(std::move(english), budget, rng);
      break;
    }
    case Experiment::kExp3WeakLabels: {
      if (weak_labels == nullptr || weak_labels->size() != 6) {
        throw ConfigError("experiment 3 requires exactly six weak labels");
      }
      for (UnifiedLabel weak : *weak_labels) {
        auto matching = gather(pool, instance, [&](const ComboKey& key) {
          return key.language == "eng" && key.label == weak;
        });
        std::erase_if(matching, [&](const RelationInstance* r) {
          return std::any_of(picked.begin(), picked.end(),
                             [&](const RelationInstance* p) {
                               return p->id == r->id;
                             });
        });
        if (matching.empty()) {
          throw SelectionError("no English candidate for weak label '" +
                               label_name(weak) + "'");
        }
        picked.push_back(draw(std::move(matching), 1, rng)[0]);
      }
      auto extras = gather(pool, instance, [](const ComboKey& key) {
        return key.language == "eng";
      });
      std::erase_if(extras, [&](const RelationInstance* r) {
        return std::any_of(picked.begin(), picked.end(),
                           [&](const RelationInstance* p) {
                             return p->id == r->id;
                           });
      });
      for (const RelationInstance* extra :
           draw(std::move(extras), budget - picked.size(), rng)) {
        picked.push_back(extra);
      }
      break;
    }
  }

  std::vector<RelationInstance> out;
  out.reserve(picked.size());
  for (const RelationInstance* p : picked) out.push_back(*p);
  return out;
}

const std::string& default_prompt_template() {
  static const std::string text =
      "You are given two text spans from a document. Identify the discourse "
      "link that holds between them.\n"
      "Choose exactly one type from this list:\n"
      "{{labels}}\n"
      "Answer with the single type name and nothing else.\n"
      "\n"
      "{{examples}}Span 1: {{arg1}}\n"
      "Span 2: {{arg2}}\n"
      "Link:";
  return text;
}

std::string render_prompt(const RelationInstance& instance,
                          const std::vector<RelationInstance>& examples,
                          OrderingStrategy ordering,
                          const std::string& template_text) {
  const std::string& base =
      template_text.empty() ? default_prompt_template() : template_text;
  if (base.find("{{arg1}}") == std::string::npos ||
      base.find("{{arg2}}") == std::string::npos) {
    throw ConfigError(
        "prompt template must contain {{arg1}} and {{arg2}} placeholders");
  }

  std::string labels;
  for (int j = 0; j < kNumLabels; ++j) {
    if (j > 0) labels += ", ";
    labels += label_name(label_from_index(j));
  }

  std::string blocks;
  for (const RelationInstance& example : examples) {
    const OrderedPair pair = apply_ordering(example, ordering);
    blocks += "Span 1: " + pair.first + "\n";
    blocks += "Span 2: " + pair.second + "\n";
    blocks += "Link: " + label_name(example.label) + "\n\n";
  }

  const OrderedPair query = apply_ordering(instance, ordering);
  std::string out = replace_all(base, "{{labels}}", labels);
  out = replace_all(out, "{{examples}}", blocks);
  out = replace_all(out, "{{arg1}}", query.first);
  out = replace_all(out, "{{arg2}}", query.second);
  return out;
}

std::optional<UnifiedLabel> parse_response(const std::string& text) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (!std::isalpha(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() &&
           std::isalpha(static_cast<unsigned char>(text[j]))) {
      ++j;
    }
    if (auto label = try_parse_label(text.substr(i, j - i))) return label;
    i = j;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Clients

GoldEchoClient::GoldEchoClient(const std::vector<RelationInstance>& instances) {
  for (const RelationInstance& r : instances) gold_[r.id] = r.label;
}

PromptResponse GoldEchoClient::complete(const PromptRequest& request) {
  auto it = gold_.find(request.instance_id);
  if (it == gold_.end()) {
    return {"", true, "unknown instance id '" + request.instance_id + "'"};
  }
  return {label_name(it->second), false, ""};
}

std::string GoldEchoClient::describe() const { return "mock:gold"; }

PromptResponse FixedLabelClient::complete(const PromptRequest&) {
  return {label_name(label_), false, ""};
}

std::string FixedLabelClient::describe() const {
  return "mock:fixed:" + label_name(label_);
}

PromptResponse UnparseableClient::complete(const PromptRequest&) {
  return {"I cannot determine this.", false, ""};
}

std::string UnparseableClient::describe() const { return "mock:unparseable"; }

FlakyClient::FlakyClient(std::unique_ptr<LLMClient> inner, int failures)
    : inner_(std::move(inner)), failures_(failures) {}

PromptResponse FlakyClient::complete(const PromptRequest& request) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    int& count = calls_[request.instance_id];
    if (count < failures_) {
      ++count;
      return {"", true, "synthetic transport failure"};
    }
  }
  return inner_->complete(request);
}

std::string FlakyClient::describe() const {
  return "flaky(" + inner_->describe() + ")";
}

HttpJsonClient::HttpJsonClient(std::string url, std::string api_key,
                               std::string model)
    : url_(std::move(url)), api_key_(std::move(api_key)),
      model_(std::move(model)) {
  if (url_.find("://") == std::string::npos) {
    throw ConfigError("http client URL must include a scheme: '" + url_ + "'");
  }
}

PromptResponse HttpJsonClient::complete(const PromptRequest& request) {
  const std::size_t scheme_end = url_.find("://") + 3;
  const std::size_t slash = url_.find('/', scheme_end);
  const std::string host =
      slash == std::string::npos ? url_ : url_.substr(0, slash);
  const std::string path =
      slash == std::string::npos ? "/" : url_.substr(slash);

  json body;
  body["model"] = model_.empty() ? request.model : model_;
  body["temperature"] = request.temperature;
  body["max_tokens"] = 256;
  body["messages"] = json::array({{{"role", "user"},
                                   {"content", request.prompt}}});

  httplib::Client http(host);
  http.set_connection_timeout(30, 0);
  http.set_read_timeout(120, 0);
  const httplib::Headers headers = {
      {"x-api-key", api_key_},
      {"Authorization", "Bearer " + api_key_},
  };
  auto res = http.Post(path, headers, body.dump(), "application/json");
  if (!res) {
    return {"", true, "transport: " + httplib::to_string(res.error())};
  }
  if (res->status != 200) {
    return {"", true,
            "http status " + std::to_string(res->status) + ": " +
                res->body.substr(0, 200)};
  }

  json reply;
  try {
    reply = json::parse(res->body);
  } catch (const json::exception& e) {
    return {"", true, std::string("unparseable response body: ") + e.what()};
  }
  // The two common chat envelopes, then a bare text field.
  if (reply.contains("content") && reply["content"].is_array() &&
      !reply["content"].empty() && reply["content"][0].contains("text")) {
    return {reply["content"][0]["text"].get<std::string>(), false, ""};
  }
  if (reply.contains("choices") && reply["choices"].is_array() &&
      !reply["choices"].empty() &&
      reply["choices"][0].contains("message")) {
    return {reply["choices"][0]["message"]["content"].get<std::string>(),
            false, ""};
  }
  if (reply.contains("text") && reply["text"].is_string()) {
    return {reply["text"].get<std::string>(), false, ""};
  }
  return {"", true, "unrecognized response envelope"};
}

std::string HttpJsonClient::describe() const {
  return "http:" + model_ + " @ " + url_;
}

std::unique_ptr<LLMClient> make_client(
    const std::string& client_spec,
    const std::vector<RelationInstance>& subset) {
  if (client_spec == "mock:gold") {
    return std::make_unique<GoldEchoClient>(subset);
  }
  if (client_spec == "mock:unparseable") {
    return std::make_unique<UnparseableClient>();
  }
  if (client_spec.rfind("mock:fixed:", 0) == 0) {
    return std::make_unique<FixedLabelClient>(
        validate_label(client_spec.substr(11)));
  }
  if (client_spec.rfind("http:", 0) == 0) {
    const char* url = std::getenv("LLM_API_URL");
    const char* key = std::getenv("LLM_API_KEY");
    if (url == nullptr || *url == '\0' || key == nullptr || *key == '\0') {
      throw ConfigError(
          "http client needs LLM_API_URL and LLM_API_KEY in the environment");
    }
    return std::make_unique<HttpJsonClient>(url, key, client_spec.substr(5));
  }
  throw ConfigError("unknown client '" + client_spec +
                    "' (expected mock:gold, mock:fixed:<label>, "
                    "mock:unparseable, or http:<model>)");
}

// ---------------------------------------------------------------------------
// End-to-end evaluation

namespace {

struct AuditLog {
  std::ofstream file;
  std::mutex mu;

  explicit AuditLog(const std::string& path) {
    if (path.empty()) return;
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    file.open(path, std::ios::trunc);
    if (!file) throw IoError("cannot open audit log '" + path + "'");
  }

  void append(const std::string& line) {
    if (!file.is_open()) return;
    std::lock_guard<std::mutex> lock(mu);
    file << line << '\n';
    file.flush();
  }
};

}  // namespace

PromptEvalResult run_prompt_eval(LLMClient& client,
                                 const std::vector<RelationInstance>& subset,
                                 const PromptSpec& spec,
                                 const ExamplePool& pool,
                                 const PromptEvalOptions& options) {
  if (subset.empty()) throw ConfigError("prompt eval: empty subset");
  if (options.max_in_flight < 1) {
    throw ConfigError("prompt eval: max_in_flight must be >= 1");
  }
  if (options.max_attempts < 1) {
    throw ConfigError("prompt eval: max_attempts must be >= 1");
  }
  const bool few_shot = spec.mode == PromptMode::kFewShot;
  if (few_shot && spec.experiment == Experiment::kExp3WeakLabels &&
      options.weak_labels.size() != 6) {
    throw ConfigError("experiment 3 requires exactly six weak labels");
  }

  std::string template_text;
  if (!spec.template_path.empty()) {
    std::ifstream in(spec.template_path);
    if (!in) {
      throw IoError("cannot read prompt template '" + spec.template_path +
                    "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    template_text = buffer.str();
  }

  AuditLog audit(options.audit_path);
  const std::size_t n = subset.size();
  std::vector<PromptOutcome> outcomes(n);
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto process = [&](std::size_t i) {
    const RelationInstance& instance = subset[i];
    auto rng = seeded_rng(options.seed ^ fnv1a64(instance.id),
                          "example-selection");
    std::vector<RelationInstance> examples;
    if (few_shot) {
      examples = select_examples(pool, instance, spec,
                                 options.weak_labels.empty()
                                     ? nullptr
                                     : &options.weak_labels,
                                 rng);
    }
    const std::string prompt =
        render_prompt(instance, examples, spec.ordering, template_text);

    PromptOutcome& outcome = outcomes[i];
    outcome.instance_id = instance.id;
    const auto t0 = std::chrono::steady_clock::now();
    PromptResponse response;
    for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
      outcome.attempts = attempt;
      response = client.complete(
          {options.model, prompt, 0.0, instance.id});
      if (!response.transport_error) break;
      if (attempt < options.max_attempts) {
        std::this_thread::sleep_for(std::chrono::milliseconds(
            options.backoff_ms << (attempt - 1)));
      }
    }
    const auto t1 = std::chrono::steady_clock::now();
    outcome.latency_ms =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
    outcome.transport_failure = response.transport_error;
    outcome.response =
        response.transport_error ? response.error : response.text;
    outcome.parsed = response.transport_error
                         ? std::nullopt
                         : parse_response(response.text);

    ordered_json line;
    line["instance_id"] = instance.id;
    line["prompt_fnv"] = to_hex(fnv1a64(prompt));
    line["response"] = outcome.response;
    line["parsed"] = outcome.parsed ? json(label_name(*outcome.parsed))
                                    : json(nullptr);
    line["latency_ms"] = outcome.latency_ms;
    line["attempts"] = outcome.attempts;
    line["transport_error"] = outcome.transport_failure;
    audit.append(line.dump());
  };

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        process(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  const std::size_t n_threads =
      std::min(static_cast<std::size_t>(options.max_in_flight), n);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  PromptEvalResult result;
  result.outcomes = std::move(outcomes);
  std::vector<PredictedLabel> preds;
  std::vector<UnifiedLabel> golds;
  std::vector<GroupMeta> meta;
  preds.reserve(n);
  golds.reserve(n);
  meta.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds.push_back(result.outcomes[i].parsed);
    golds.push_back(subset[i].label);
    meta.push_back({subset[i].framework, subset[i].language});
    if (result.outcomes[i].transport_failure) {
      ++result.n_transport_failures;
    } else if (!result.outcomes[i].parsed) {
      ++result.n_parse_failures;
    }
  }
  result.report = grouped_report(preds, golds, meta);
  return result;
}

}  // namespace hidac
