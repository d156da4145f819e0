#include "hidac/labels.hpp"

#include "hidac/common.hpp"
#include "hidac/errors.hpp"

namespace hidac {

const std::array<std::string, kNumLabels>& label_names() {
  static const std::array<std::string, kNumLabels> names = {
      "elaboration",  "conjunction", "causal",      "temporal",
      "query",        "contrast",    "concession",  "comment",
      "explanation",  "purpose",     "condition",   "attribution",
      "organization", "frame",       "mode",        "reformulation",
      "alternation",
  };
  return names;
}

const std::string& label_name(UnifiedLabel label) {
  return label_names()[static_cast<std::size_t>(label)];
}

UnifiedLabel label_from_index(int index) {
  if (index < 0 || index >= kNumLabels) {
    throw LabelError("label index out of range: " + std::to_string(index));
  }
  return static_cast<UnifiedLabel>(index);
}

std::optional<UnifiedLabel> try_parse_label(std::string_view raw) {
  const std::string canon = to_lower(trim(raw));
  const auto& names = label_names();
  for (int i = 0; i < kNumLabels; ++i) {
    if (names[static_cast<std::size_t>(i)] == canon) {
      return static_cast<UnifiedLabel>(i);
    }
  }
  return std::nullopt;
}

UnifiedLabel validate_label(std::string_view raw) {
  if (auto label = try_parse_label(raw)) return *label;
  throw LabelError("unknown relation label: '" + std::string(raw) + "'");
}

const std::array<std::string, kNumFrameworks>& framework_names() {
  static const std::array<std::string, kNumFrameworks> names = {
      "pdtb", "rst", "dep", "sdrt", "erst", "iso",
  };
  return names;
}

const std::string& framework_name(Framework fw) {
  return framework_names()[static_cast<std::size_t>(fw)];
}

std::optional<Framework> try_parse_framework(std::string_view raw) {
  const std::string canon = to_lower(trim(raw));
  const auto& names = framework_names();
  for (int i = 0; i < kNumFrameworks; ++i) {
    if (names[static_cast<std::size_t>(i)] == canon) {
      return static_cast<Framework>(i);
    }
  }
  return std::nullopt;
}

Framework framework_from_string(std::string_view raw) {
  if (auto fw = try_parse_framework(raw)) return *fw;
  throw FormatError("unknown framework: '" + std::string(raw) + "'");
}

}  // namespace hidac
