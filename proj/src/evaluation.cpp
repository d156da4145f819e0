#include "hidac/evaluation.hpp"

#include "hidac/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <sstream>

namespace hidac {

namespace {

constexpr const char* kF1Convention =
    "macro-F1 averages per-label F1 over labels present in golds or "
    "predictions; labels absent from both are excluded";

void check_aligned(std::size_t preds, std::size_t golds) {
  if (preds != golds)
    throw ShapeError("prediction/gold length mismatch: " +
                     std::to_string(preds) + " vs " + std::to_string(golds));
  if (golds == 0) throw InputError("no instances to score");
}

std::vector<PredictedLabel> lift(const std::vector<UnifiedLabel>& preds) {
  return std::vector<PredictedLabel>(preds.begin(), preds.end());
}

struct Confusion {
  std::array<int, kNumLabels> tp{}, fp{}, fn{};
  std::array<bool, kNumLabels> seen{};

  static Confusion count(const std::vector<PredictedLabel>& preds,
                         const std::vector<UnifiedLabel>& golds) {
    Confusion c;
    for (std::size_t i = 0; i < golds.size(); ++i) {
      const int g = label_index(golds[i]);
      c.seen[g] = true;
      if (preds[i]) {
        const int p = label_index(*preds[i]);
        c.seen[p] = true;
        if (p == g) {
          ++c.tp[g];
        } else {
          ++c.fp[p];
          ++c.fn[g];
        }
      } else {
        ++c.fn[g];  // missing prediction: a miss for the gold label
      }
    }
    return c;
  }

  double f1(int label) const {
    const int denom_p = tp[label] + fp[label];
    const int denom_r = tp[label] + fn[label];
    const double p = denom_p ? static_cast<double>(tp[label]) / denom_p : 0.0;
    const double r = denom_r ? static_cast<double>(tp[label]) / denom_r : 0.0;
    return (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

}  // namespace

double accuracy(const std::vector<PredictedLabel>& preds,
                const std::vector<UnifiedLabel>& golds) {
  check_aligned(preds.size(), golds.size());
  int correct = 0;
  for (std::size_t i = 0; i < golds.size(); ++i)
    if (preds[i] && *preds[i] == golds[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(golds.size());
}

double accuracy(const std::vector<UnifiedLabel>& preds,
                const std::vector<UnifiedLabel>& golds) {
  return accuracy(lift(preds), golds);
}

double macro_f1(const std::vector<PredictedLabel>& preds,
                const std::vector<UnifiedLabel>& golds) {
  check_aligned(preds.size(), golds.size());
  const Confusion c = Confusion::count(preds, golds);
  double sum = 0.0;
  int n = 0;
  for (int l = 0; l < kNumLabels; ++l) {
    if (!c.seen[l]) continue;
    sum += c.f1(l);
    ++n;
  }
  return n ? sum / n : 0.0;
}

double macro_f1(const std::vector<UnifiedLabel>& preds,
                const std::vector<UnifiedLabel>& golds) {
  return macro_f1(lift(preds), golds);
}

GroupedReport grouped_report(const std::vector<PredictedLabel>& preds,
                             const std::vector<UnifiedLabel>& golds,
                             const std::vector<GroupMeta>& meta) {
  check_aligned(preds.size(), golds.size());
  if (meta.size() != golds.size())
    throw ShapeError("metadata length mismatch: " + std::to_string(meta.size()) +
                     " vs " + std::to_string(golds.size()));

  GroupedReport report;
  report.total = static_cast<int>(golds.size());
  report.overall_accuracy = accuracy(preds, golds);
  report.overall_macro_f1 = macro_f1(preds, golds);
  report.f1_convention = kF1Convention;

  for (std::size_t i = 0; i < golds.size(); ++i) {
    const bool hit = preds[i] && *preds[i] == golds[i];
    GroupStat& fw = report.by_framework[meta[i].framework];
    ++fw.support;
    if (hit) ++fw.correct;
    GroupStat& lang = report.by_language[meta[i].language];
    ++lang.support;
    if (hit) ++lang.correct;
  }
  for (auto& [key, stat] : report.by_framework)
    stat.share = static_cast<double>(stat.support) / report.total;
  for (auto& [key, stat] : report.by_language)
    stat.share = static_cast<double>(stat.support) / report.total;

  const Confusion c = Confusion::count(preds, golds);
  for (int l = 0; l < kNumLabels; ++l)
    if (c.seen[l]) report.per_label_f1.emplace(label_from_index(l), c.f1(l));
  return report;
}

GroupedReport grouped_report(const std::vector<UnifiedLabel>& preds,
                             const std::vector<UnifiedLabel>& golds,
                             const std::vector<GroupMeta>& meta) {
  return grouped_report(lift(preds), golds, meta);
}

namespace {

template <typename Key, typename NameFn>
std::vector<std::pair<Key, GroupStat>> by_share_desc(
    const std::map<Key, GroupStat>& groups, const NameFn& name_of) {
  std::vector<std::pair<Key, GroupStat>> rows(groups.begin(), groups.end());
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    if (a.second.share != b.second.share) return a.second.share > b.second.share;
    return name_of(a.first) < name_of(b.first);
  });
  return rows;
}

}  // namespace

std::string report_json(const GroupedReport& report) {
  nlohmann::ordered_json j;
  j["total"] = report.total;
  j["overall_accuracy"] = report.overall_accuracy;
  j["overall_macro_f1"] = report.overall_macro_f1;
  j["macro_f1_convention"] = report.f1_convention;
  auto groups_to_json = [&](const auto& rows, auto name_of) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& [key, stat] : rows)
      arr.push_back({{"group", name_of(key)},
                     {"accuracy", stat.accuracy()},
                     {"support", stat.support},
                     {"correct", stat.correct},
                     {"share", stat.share}});
    return arr;
  };
  j["by_framework"] = groups_to_json(
      by_share_desc(report.by_framework,
                    [](Framework f) { return framework_name(f); }),
      [](Framework f) { return framework_name(f); });
  j["by_language"] = groups_to_json(
      by_share_desc(report.by_language, [](const std::string& s) { return s; }),
      [](const std::string& s) { return s; });
  nlohmann::ordered_json f1 = nlohmann::ordered_json::object();
  for (const auto& [label, value] : report.per_label_f1)
    f1[label_name(label)] = value;
  j["per_label_f1"] = std::move(f1);
  return j.dump(2);
}

std::string report_tsv(const GroupedReport& report) {
  std::ostringstream out;
  out << "group\tkind\taccuracy\tsupport\tshare\n";
  out << "overall\t-\t" << report.overall_accuracy << '\t' << report.total
      << "\t1\n";
  for (const auto& [key, stat] :
       by_share_desc(report.by_framework,
                     [](Framework f) { return framework_name(f); }))
    out << framework_name(key) << "\tframework\t" << stat.accuracy() << '\t'
        << stat.support << '\t' << stat.share << '\n';
  for (const auto& [key, stat] :
       by_share_desc(report.by_language,
                     [](const std::string& s) { return s; }))
    out << key << "\tlanguage\t" << stat.accuracy() << '\t' << stat.support
        << '\t' << stat.share << '\n';
  return out.str();
}

std::vector<UnifiedLabel> lowest_f1_labels(const GroupedReport& report, int k) {
  if (k < 0 || k > kNumLabels)
    throw ConfigError("requested " + std::to_string(k) + " labels of " +
                      std::to_string(kNumLabels));
  std::array<double, kNumLabels> f1;
  f1.fill(0.0);
  for (const auto& [label, value] : report.per_label_f1)
    f1[static_cast<std::size_t>(label_index(label))] = value;
  std::vector<int> order(kNumLabels);
  for (int i = 0; i < kNumLabels; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return f1[static_cast<std::size_t>(a)] < f1[static_cast<std::size_t>(b)];
  });
  std::vector<UnifiedLabel> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    out.push_back(label_from_index(order[static_cast<std::size_t>(i)]));
  return out;
}

}  // namespace hidac
