#include "hidac/synthetic.hpp"

#include "hidac/common.hpp"
#include "hidac/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace hidac {
namespace {

// Neutral filler vocabulary. None of these words is a relation label, so a
// rendered prompt mentions each label exactly where the template puts it.
const std::array<std::string, 24> kWordBank = {
    "the",    "report",  "follows", "measure", "signal",  "detail",
    "window", "across",  "note",    "value",   "series",  "board",
    "filing", "quarter", "margin",  "supply",  "harbor",  "ledger",
    "survey", "meadow",  "transit", "copper",  "ribbon",  "anchor"};

std::string random_text(std::mt19937_64& rng, int min_words, int max_words) {
  const int n = min_words + static_cast<int>(bounded(
                                rng, static_cast<std::uint64_t>(
                                         max_words - min_words + 1)));
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += ' ';
    out += kWordBank[bounded(rng, kWordBank.size())];
  }
  return out;
}

Direction random_direction(std::mt19937_64& rng) {
  const std::uint64_t r = bounded(rng, 20);
  if (r < 9) return Direction::kForward;
  if (r < 18) return Direction::kBackward;
  return Direction::kNone;
}

const std::vector<std::string>& language_codes() {
  static const std::vector<std::string> codes = [] {
    std::vector<std::string> out;
    for (const auto& [code, share] : reference_language_shares()) {
      (void)share;
      out.push_back(code);
    }
    return out;
  }();
  return codes;
}

}  // namespace

const std::vector<double>& reference_label_shares() {
  static const std::vector<double> shares = {
      23.3, 16.5, 10.6, 8.1, 5.1, 4.6, 4.7, 3.3, 3.9,
      3.7,  2.7,  3.2,  3.5, 2.9, 2.0, 1.4, 0.7};
  return shares;
}

const std::vector<double>& reference_framework_shares() {
  static const std::vector<double> shares = {27.0, 26.5, 16.7,
                                             14.5, 12.5, 2.8};
  return shares;
}

const std::vector<std::pair<std::string, double>>& reference_language_shares() {
  static const std::vector<std::pair<std::string, double>> shares = {
      {"eng", 51.0}, {"zho", 9.8}, {"rus", 8.2}, {"por", 7.4},
      {"tha", 4.5},  {"pcm", 3.8}, {"pol", 2.8}, {"eus", 2.2},
      {"fra", 1.9},  {"fas", 1.8}, {"spa", 1.7}, {"deu", 1.6},
      {"nld", 1.2},  {"tur", 0.8}, {"ita", 0.7}, {"ces", 0.4}};
  return shares;
}

std::vector<int> apportion(const std::vector<double>& weights, int total) {
  if (weights.empty()) throw ConfigError("apportion: empty weight vector");
  if (total < 0) throw ConfigError("apportion: negative total");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("apportion: weights must be >= 0");
    sum += w;
  }
  if (!(sum > 0.0)) throw ConfigError("apportion: weights sum to zero");

  const std::size_t k = weights.size();
  std::vector<int> counts(k, 0);
  std::vector<double> fraction(k, 0.0);
  int assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double quota = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<int>(std::floor(quota));
    fraction[i] = quota - std::floor(quota);
    assigned += counts[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return fraction[a] > fraction[b];
                   });
  for (int i = 0; i < total - assigned; ++i) ++counts[order[i % k]];
  return counts;
}

std::vector<RelationInstance> make_distribution_fixture(int total,
                                                        std::uint64_t seed) {
  if (total <= 0) throw ConfigError("distribution fixture: total must be > 0");

  const std::vector<int> label_counts = apportion(reference_label_shares(),
                                                  total);
  const std::vector<int> fw_counts = apportion(reference_framework_shares(),
                                               total);
  std::vector<double> lang_weights;
  for (const auto& [code, share] : reference_language_shares()) {
    (void)code;
    lang_weights.push_back(share);
  }
  const std::vector<int> lang_counts = apportion(lang_weights, total);

  // Three marginal slot vectors, shuffled independently; zipping them gives a
  // set whose label, framework and language marginals are each exact.
  std::vector<int> label_slots, fw_slots, lang_slots;
  for (int j = 0; j < kNumLabels; ++j)
    label_slots.insert(label_slots.end(), label_counts[j], j);
  for (int f = 0; f < kNumFrameworks; ++f)
    fw_slots.insert(fw_slots.end(), fw_counts[f], f);
  for (std::size_t l = 0; l < lang_counts.size(); ++l)
    lang_slots.insert(lang_slots.end(), lang_counts[l], static_cast<int>(l));

  auto label_rng = seeded_rng(seed, "fixture-labels");
  auto fw_rng = seeded_rng(seed, "fixture-frameworks");
  auto lang_rng = seeded_rng(seed, "fixture-languages");
  auto text_rng = seeded_rng(seed, "fixture-text");
  shuffle_in_place(label_slots, label_rng);
  shuffle_in_place(fw_slots, fw_rng);
  shuffle_in_place(lang_slots, lang_rng);

  std::vector<RelationInstance> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    RelationInstance r;
    r.id = "dist-" + std::to_string(i);
    r.language = language_codes()[static_cast<std::size_t>(lang_slots[i])];
    r.framework = static_cast<Framework>(fw_slots[i]);
    r.corpus_id = r.language + "." + framework_name(r.framework) + ".synth";
    r.label = label_from_index(label_slots[i]);
    r.arg1_text = random_text(text_rng, 3, 7);
    r.arg2_text = random_text(text_rng, 3, 7);
    r.direction = random_direction(text_rng);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<RelationInstance> make_combo_fixture(int per_combo,
                                                 std::uint64_t seed) {
  if (per_combo < 1) throw ConfigError("combo fixture: per_combo must be >= 1");

  struct Combo {
    Framework framework;
    std::string language;
    int label;
  };
  std::vector<Combo> combos;

  // English pairs (one per framework) carry all 17 labels, so English
  // candidates exist for every label. The remaining 90 (framework, language)
  // pairs split 45/45 between three and two labels: 6*17 + 45*3 + 45*2 = 327.
  const auto& langs = language_codes();
  for (int f = 0; f < kNumFrameworks; ++f) {
    for (int j = 0; j < kNumLabels; ++j) {
      combos.push_back({static_cast<Framework>(f), langs[0], j});
    }
  }
  int pair_index = 0;
  for (std::size_t l = 1; l < langs.size(); ++l) {
    for (int f = 0; f < kNumFrameworks; ++f, ++pair_index) {
      const int n_labels = pair_index < 45 ? 3 : 2;
      for (int q = 0; q < n_labels; ++q) {
        combos.push_back({static_cast<Framework>(f), langs[l],
                          (5 * pair_index + q) % kNumLabels});
      }
    }
  }

  auto text_rng = seeded_rng(seed, "fixture-text");
  std::vector<RelationInstance> out;
  out.reserve(combos.size() * static_cast<std::size_t>(per_combo));
  for (const Combo& combo : combos) {
    for (int j = 0; j < per_combo; ++j) {
      RelationInstance r;
      r.id = "combo-" + framework_name(combo.framework) + "-" +
             combo.language + "-" + std::to_string(combo.label) + "-" +
             std::to_string(j);
      r.language = combo.language;
      r.framework = combo.framework;
      r.corpus_id = combo.language + "." + framework_name(combo.framework) +
                    ".synth";
      r.label = label_from_index(combo.label);
      r.arg1_text = random_text(text_rng, 3, 6);
      r.arg2_text = random_text(text_rng, 3, 6);
      r.direction = random_direction(text_rng);
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<RelationInstance> make_separable_fixture(int total, int n_labels,
                                                     std::uint64_t seed) {
  if (n_labels < 1 || n_labels > kNumLabels) {
    throw ConfigError("separable fixture: n_labels must be in [1, 17]");
  }
  if (total < n_labels) {
    throw ConfigError("separable fixture: need at least one instance per label");
  }

  std::vector<RelationInstance> out;
  out.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    const int j = i % n_labels;
    const std::string& name = label_name(label_from_index(j));
    RelationInstance r;
    r.id = "sep-" + std::to_string(i);
    r.language = "eng";
    r.framework = static_cast<Framework>(i % kNumFrameworks);
    r.corpus_id = "eng." + framework_name(r.framework) + ".synth";
    r.label = label_from_index(j);
    // Label-distinctive token sets: the toy encoder's hash buckets for
    // "causal0 causal1 causal2" differ from those of every other label.
    r.arg1_text = name + "0 " + name + "1 " + name + "2";
    r.arg2_text = name + "3 " + name + "4 " + name + "5";
    r.direction = i % 2 == 0 ? Direction::kForward : Direction::kBackward;
    out.push_back(std::move(r));
  }
  auto order_rng = seeded_rng(seed, "fixture-order");
  shuffle_in_place(out, order_rng);
  return out;
}

}  // namespace hidac
