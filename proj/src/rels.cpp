#include "hidac/rels.hpp"

#include "hidac/common.hpp"
#include "hidac/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace hidac {
namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string::size_type start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return fields;
}

bool is_masked_text(const std::string& text) {
  bool saw_underscore = false;
  for (unsigned char c : text) {
    if (c == '_') {
      saw_underscore = true;
    } else if (!std::isspace(c)) {
      return false;
    }
  }
  return saw_underscore;
}

int find_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) return -1;
  return static_cast<int>(it - header.begin());
}

int require_column(const std::vector<std::string>& header, const std::string& name) {
  int idx = find_column(header, name);
  if (idx < 0) {
    throw FormatError("missing required column '" + name + "' in .rels header");
  }
  return idx;
}

}  // namespace

std::string direction_to_string(Direction d) {
  switch (d) {
    case Direction::kForward: return "1>2";
    case Direction::kBackward: return "1<2";
    case Direction::kNone: return "_";
  }
  return "_";
}

Direction direction_from_string(std::string_view raw) {
  const std::string v = trim(raw);
  if (v == "1>2") return Direction::kForward;
  if (v == "1<2") return Direction::kBackward;
  if (v.empty() || v == "_" || v == "none") return Direction::kNone;
  throw FormatError("unknown direction value: '" + v + "'");
}

bool RelationInstance::operator==(const RelationInstance& other) const {
  return id == other.id && corpus_id == other.corpus_id &&
         language == other.language && framework == other.framework &&
         arg1_text == other.arg1_text && arg2_text == other.arg2_text &&
         direction == other.direction && label == other.label &&
         masked == other.masked && extra == other.extra;
}

bool file_meta_from_path(const std::string& path, FileMeta* out) {
  std::string base = std::filesystem::path(path).filename().string();
  if (base.size() > 5 && base.ends_with(".rels")) {
    base = base.substr(0, base.size() - 5);
  }
  auto first_dot = base.find('.');
  auto second_dot = base.find('.', first_dot + 1);
  if (first_dot == std::string::npos || second_dot == std::string::npos) {
    return false;
  }
  const std::string lang = base.substr(0, first_dot);
  const std::string fw = base.substr(first_dot + 1, second_dot - first_dot - 1);
  auto parsed = try_parse_framework(fw);
  if (!parsed || lang.empty()) return false;
  std::string corpus = base;
  auto underscore = corpus.rfind('_');
  if (underscore != std::string::npos) corpus = corpus.substr(0, underscore);
  out->language = lang;
  out->framework = *parsed;
  out->corpus_id = corpus;
  return true;
}

std::vector<RelationInstance> parse_rels(std::istream& source,
                                         const FileMeta& meta,
                                         const ColumnMap& columns) {
  std::string header_line;
  if (!std::getline(source, header_line)) {
    throw FormatError(".rels input is empty (no header row)");
  }
  if (!header_line.empty() && header_line.back() == '\r') header_line.pop_back();
  const std::vector<std::string> header = split_tabs(header_line);

  const int arg1_col = require_column(header, columns.arg1);
  const int arg2_col = require_column(header, columns.arg2);
  const int dir_col = require_column(header, columns.direction);
  const int label_col = require_column(header, columns.label);
  const int lang_col = find_column(header, columns.language);
  const int fw_col = find_column(header, columns.framework);
  const int corpus_col = find_column(header, columns.corpus);

  std::vector<bool> interpreted(header.size(), false);
  for (int c : {arg1_col, arg2_col, dir_col, label_col, lang_col, fw_col, corpus_col}) {
    if (c >= 0) interpreted[static_cast<std::size_t>(c)] = true;
  }

  std::vector<RelationInstance> instances;
  std::string line;
  int row = 0;
  while (std::getline(source, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    std::vector<std::string> fields = split_tabs(line);
    if (fields.size() != header.size()) {
      throw FormatError("row " + std::to_string(row) + " has " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(header.size()));
    }

    RelationInstance inst;
    inst.corpus_id = corpus_col >= 0 ? fields[static_cast<std::size_t>(corpus_col)]
                                     : meta.corpus_id;
    inst.language = lang_col >= 0 ? fields[static_cast<std::size_t>(lang_col)]
                                  : meta.language;
    inst.framework = fw_col >= 0
                         ? framework_from_string(fields[static_cast<std::size_t>(fw_col)])
                         : meta.framework;
    inst.arg1_text = fields[static_cast<std::size_t>(arg1_col)];
    inst.arg2_text = fields[static_cast<std::size_t>(arg2_col)];
    inst.direction = direction_from_string(fields[static_cast<std::size_t>(dir_col)]);
    try {
      inst.label = validate_label(fields[static_cast<std::size_t>(label_col)]);
    } catch (const LabelError& e) {
      throw LabelError("row " + std::to_string(row) + ": " + e.what());
    }
    if (inst.arg1_text.empty() || inst.arg2_text.empty()) {
      throw FormatError("row " + std::to_string(row) + " has an empty argument text");
    }
    inst.masked = is_masked_text(inst.arg1_text) && is_masked_text(inst.arg2_text);
    inst.id = inst.corpus_id + "#" + std::to_string(row);
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (!interpreted[c]) inst.extra.emplace_back(header[c], fields[c]);
    }
    instances.push_back(std::move(inst));
  }
  return instances;
}

std::vector<RelationInstance> parse_rels_file(const std::string& path,
                                              const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open .rels file: " + path);
  FileMeta meta;
  file_meta_from_path(path, &meta);
  return parse_rels(in, meta, columns);
}

void serialize_rels(const std::vector<RelationInstance>& instances,
                    std::ostream& out, const ColumnMap& columns) {
  std::vector<std::string> extra_names;
  for (const auto& inst : instances) {
    for (const auto& [name, value] : inst.extra) {
      (void)value;
      if (std::find(extra_names.begin(), extra_names.end(), name) == extra_names.end()) {
        extra_names.push_back(name);
      }
    }
  }

  out << columns.corpus << '\t' << columns.language << '\t' << columns.framework
      << '\t' << columns.arg1 << '\t' << columns.arg2 << '\t' << columns.direction
      << '\t' << columns.label;
  for (const auto& name : extra_names) out << '\t' << name;
  out << '\n';

  for (const auto& inst : instances) {
    out << inst.corpus_id << '\t' << inst.language << '\t'
        << framework_name(inst.framework) << '\t' << inst.arg1_text << '\t'
        << inst.arg2_text << '\t' << direction_to_string(inst.direction) << '\t'
        << label_name(inst.label);
    for (const auto& name : extra_names) {
      std::string value;
      for (const auto& [k, v] : inst.extra) {
        if (k == name) {
          value = v;
          break;
        }
      }
      out << '\t' << value;
    }
    out << '\n';
  }
}

void write_rels_file(const std::vector<RelationInstance>& instances,
                     const std::string& path, const ColumnMap& columns) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write .rels file: " + path);
  serialize_rels(instances, out, columns);
}

std::string ordering_to_string(OrderingStrategy s) {
  return s == OrderingStrategy::kNatural ? "natural" : "relation-directed";
}

OrderingStrategy ordering_from_string(std::string_view raw) {
  const std::string v = to_lower(trim(raw));
  if (v == "natural" || v == "no") return OrderingStrategy::kNatural;
  if (v == "relation-directed" || v == "relation_directed" || v == "ro") {
    return OrderingStrategy::kRelationDirected;
  }
  throw ConfigError("unknown ordering strategy: '" + v + "'");
}

OrderedPair apply_ordering(const RelationInstance& instance,
                           OrderingStrategy strategy) {
  OrderedPair pair;
  pair.strategy = strategy;
  const bool swap = strategy == OrderingStrategy::kRelationDirected &&
                    instance.direction == Direction::kBackward;
  pair.swapped = swap;
  pair.first = swap ? instance.arg2_text : instance.arg1_text;
  pair.second = swap ? instance.arg1_text : instance.arg2_text;
  return pair;
}

LabelDistribution distribution(const std::vector<RelationInstance>& instances) {
  LabelDistribution dist;
  for (const auto& inst : instances) {
    ++dist.counts[inst.label];
    ++dist.total;
  }
  if (dist.total > 0) {
    for (const auto& [label, count] : dist.counts) {
      dist.proportions[label] =
          static_cast<double>(count) / static_cast<double>(dist.total);
    }
  }
  return dist;
}

std::string stats_json(const std::vector<RelationInstance>& instances) {
  nlohmann::ordered_json doc;
  const LabelDistribution dist = distribution(instances);
  doc["total"] = dist.total;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  nlohmann::ordered_json proportions = nlohmann::ordered_json::object();
  for (const auto& [label, count] : dist.counts) {
    counts[label_name(label)] = count;
    proportions[label_name(label)] = dist.proportions.at(label);
  }
  doc["counts"] = counts;
  doc["proportions"] = proportions;

  std::map<Framework, std::int64_t> by_fw;
  std::map<std::string, std::int64_t> by_lang;
  std::int64_t masked = 0;
  for (const auto& inst : instances) {
    ++by_fw[inst.framework];
    ++by_lang[inst.language];
    if (inst.masked) ++masked;
  }
  nlohmann::ordered_json fw_doc = nlohmann::ordered_json::object();
  for (const auto& [fw, count] : by_fw) {
    fw_doc[framework_name(fw)] = {
        {"count", count},
        {"share", dist.total > 0 ? static_cast<double>(count) / dist.total : 0.0}};
  }
  nlohmann::ordered_json lang_doc = nlohmann::ordered_json::object();
  for (const auto& [lang, count] : by_lang) {
    lang_doc[lang] = {
        {"count", count},
        {"share", dist.total > 0 ? static_cast<double>(count) / dist.total : 0.0}};
  }
  doc["by_framework"] = fw_doc;
  doc["by_language"] = lang_doc;
  doc["masked"] = masked;
  return doc.dump(2);
}

std::vector<RelationInstance> exclude_masked(
    const std::vector<RelationInstance>& instances) {
  std::vector<RelationInstance> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    if (!inst.masked) out.push_back(inst);
  }
  return out;
}

}  // namespace hidac
