#pragma once

#include "hidac/labels.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace hidac {

enum class Direction : int { kForward = 0, kBackward, kNone };

std::string direction_to_string(Direction d);
Direction direction_from_string(std::string_view raw);

// One labeled argument pair from a shared-task .rels file. Immutable after
// parsing; `extra` preserves columns the parser does not interpret.
struct RelationInstance {
  std::string id;
  std::string corpus_id;
  std::string language;
  Framework framework = Framework::kPdtb;
  std::string arg1_text;
  std::string arg2_text;
  Direction direction = Direction::kNone;
  UnifiedLabel label = UnifiedLabel::kElaboration;
  bool masked = false;
  std::vector<std::pair<std::string, std::string>> extra;

  bool operator==(const RelationInstance& other) const;
};

// File-level metadata, normally derived from the corpus file name
// ("<lang>.<framework>.<corpus>_<split>.rels"). In-file `lang`/`framework`/
// `corpus` columns override it per row.
struct FileMeta {
  std::string corpus_id = "stream";
  std::string language = "und";
  Framework framework = Framework::kPdtb;
};

/// Parses "<lang>.<framework>.<name>_<split>.rels" style paths.
/// Returns false (leaving `out` untouched) when the name does not match.
bool file_meta_from_path(const std::string& path, FileMeta* out);

// Column-name mapping. Defaults follow the shared-task release.
struct ColumnMap {
  std::string arg1 = "unit1_txt";
  std::string arg2 = "unit2_txt";
  std::string direction = "dir";
  std::string label = "label";
  std::string language = "lang";      // optional
  std::string framework = "framework";  // optional
  std::string corpus = "corpus";        // optional
};

std::vector<RelationInstance> parse_rels(std::istream& source,
                                         const FileMeta& meta = FileMeta{},
                                         const ColumnMap& columns = ColumnMap{});

/// Convenience wrapper: opens `path`, infers FileMeta from the file name
/// when possible.
std::vector<RelationInstance> parse_rels_file(const std::string& path,
                                              const ColumnMap& columns = ColumnMap{});

/// Inverse of parse_rels for round-trips and fixture generation. Writes the
/// interpreted columns plus `lang`/`framework` plus any preserved extras.
void serialize_rels(const std::vector<RelationInstance>& instances,
                    std::ostream& out, const ColumnMap& columns = ColumnMap{});

void write_rels_file(const std::vector<RelationInstance>& instances,
                     const std::string& path,
                     const ColumnMap& columns = ColumnMap{});

enum class OrderingStrategy : int { kNatural = 0, kRelationDirected };

std::string ordering_to_string(OrderingStrategy s);
OrderingStrategy ordering_from_string(std::string_view raw);

struct OrderedPair {
  std::string first;
  std::string second;
  OrderingStrategy strategy = OrderingStrategy::kNatural;
  bool swapped = false;

  bool operator==(const OrderedPair&) const = default;
};

/// NATURAL keeps text order. RELATION_DIRECTED swaps the arguments iff the
/// annotated direction is 1<2; direction NONE is treated as 1>2.
OrderedPair apply_ordering(const RelationInstance& instance,
                           OrderingStrategy strategy);

struct LabelDistribution {
  std::map<UnifiedLabel, std::int64_t> counts;
  std::map<UnifiedLabel, double> proportions;
  std::int64_t total = 0;
};

LabelDistribution distribution(const std::vector<RelationInstance>& instances);

/// JSON stats document: label counts/proportions plus per-framework and
/// per-language breakdowns.
std::string stats_json(const std::vector<RelationInstance>& instances);

/// Drops masked instances (the default for training).
std::vector<RelationInstance> exclude_masked(
    const std::vector<RelationInstance>& instances);

}  // namespace hidac
