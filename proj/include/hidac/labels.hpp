#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace hidac {

// The unified 17-way relation taxonomy used by DISRPT 2025 Task 3.
// Enumerator order is the canonical label order; it is frozen because
// prototype rows, logits and tie-breaking all index into it.
enum class UnifiedLabel : int {
  kElaboration = 0,
  kConjunction,
  kCausal,
  kTemporal,
  kQuery,
  kContrast,
  kConcession,
  kComment,
  kExplanation,
  kPurpose,
  kCondition,
  kAttribution,
  kOrganization,
  kFrame,
  kMode,
  kReformulation,
  kAlternation,
};

inline constexpr int kNumLabels = 17;

const std::array<std::string, kNumLabels>& label_names();

const std::string& label_name(UnifiedLabel label);

inline int label_index(UnifiedLabel label) { return static_cast<int>(label); }

UnifiedLabel label_from_index(int index);

/// Canonicalizes (trim + lowercase) and resolves a raw label string.
/// Throws LabelError for anything outside the 17-member set.
UnifiedLabel validate_label(std::string_view raw);

/// Non-throwing variant used by the response parser.
std::optional<UnifiedLabel> try_parse_label(std::string_view raw);

// Annotation framework of the source corpus.
enum class Framework : int { kPdtb = 0, kRst, kDep, kSdrt, kErst, kIso };

inline constexpr int kNumFrameworks = 6;

const std::array<std::string, kNumFrameworks>& framework_names();
const std::string& framework_name(Framework fw);
Framework framework_from_string(std::string_view raw);
std::optional<Framework> try_parse_framework(std::string_view raw);

}  // namespace hidac
