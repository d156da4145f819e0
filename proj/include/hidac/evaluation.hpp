#pragma once

#include "hidac/labels.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hidac {

// A prediction that may be missing (e.g. an unparseable model response).
// Missing predictions always score as incorrect.
using PredictedLabel = std::optional<UnifiedLabel>;

double accuracy(const std::vector<PredictedLabel>& preds,
                const std::vector<UnifiedLabel>& golds);
double accuracy(const std::vector<UnifiedLabel>& preds,
                const std::vector<UnifiedLabel>& golds);

/// Unweighted mean of per-label F1 over labels occurring in golds or preds;
/// labels absent from both are excluded from the mean.
double macro_f1(const std::vector<PredictedLabel>& preds,
                const std::vector<UnifiedLabel>& golds);
double macro_f1(const std::vector<UnifiedLabel>& preds,
                const std::vector<UnifiedLabel>& golds);

struct GroupStat {
  int support = 0;
  int correct = 0;
  double share = 0.0;

  double accuracy() const { return support ? static_cast<double>(correct) / support : 0.0; }
};

struct GroupMeta {
  Framework framework = Framework::kPdtb;
  std::string language = "und";
};

struct GroupedReport {
  int total = 0;
  double overall_accuracy = 0.0;
  double overall_macro_f1 = 0.0;
  std::map<Framework, GroupStat> by_framework;
  std::map<std::string, GroupStat> by_language;
  std::map<UnifiedLabel, double> per_label_f1;  // labels in golds ∪ preds
  std::string f1_convention;
};

GroupedReport grouped_report(const std::vector<PredictedLabel>& preds,
                             const std::vector<UnifiedLabel>& golds,
                             const std::vector<GroupMeta>& meta);
GroupedReport grouped_report(const std::vector<UnifiedLabel>& preds,
                             const std::vector<UnifiedLabel>& golds,
                             const std::vector<GroupMeta>& meta);

std::string report_json(const GroupedReport& report);
/// Group rows (frameworks then languages), sorted by share descending.
std::string report_tsv(const GroupedReport& report);

/// The k labels with the lowest F1, ties broken by canonical order. Labels
/// absent from the report rank as 0.
std::vector<UnifiedLabel> lowest_f1_labels(const GroupedReport& report, int k);

}  // namespace hidac
