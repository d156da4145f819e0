#pragma once

#include "hidac/rels.hpp"

#include <cstdint>
#include <vector>

namespace hidac {

/// Development-split label shares (percent) in canonical label order.
const std::vector<double>& reference_label_shares();
/// Development-split shares (percent) per framework, canonical enum order.
const std::vector<double>& reference_framework_shares();
/// (language code, dev-split percent), largest first.
const std::vector<std::pair<std::string, double>>& reference_language_shares();

/// Largest-remainder apportionment: integer counts summing to `total`,
/// proportional to `weights`.
std::vector<int> apportion(const std::vector<double>& weights, int total);

/// Synthetic relation set whose label, framework and language marginals all
/// match the reference development distribution exactly (post-apportionment).
std::vector<RelationInstance> make_distribution_fixture(int total,
                                                        std::uint64_t seed);

/// Covers exactly 327 (framework, language, label) combinations with
/// `per_combo` instances each; English combinations span all 17 labels.
std::vector<RelationInstance> make_combo_fixture(int per_combo,
                                                 std::uint64_t seed);

/// Small fixture whose argument texts are label-distinctive, so a frozen
/// encoder already separates the classes. Labels cycle through the first
/// `n_labels` canonical labels.
std::vector<RelationInstance> make_separable_fixture(int total, int n_labels,
                                                     std::uint64_t seed);

}  // namespace hidac
