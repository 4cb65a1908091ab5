#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hoplab/common.hpp"
#include "hoplab/kg/types.hpp"

// Bundle directory layout (all files UTF-8, tab-separated, LF endings,
// integers decimal):
//   facts.tsv      head  relation  tail  label            one fact per line
//   queries.tsv    tag  head  r1  r2  bridge  tail  hop1  hop2
//   manifest.json  spec, regime, counts, coverage, content checksum
// The checksum is FNV-1a 64 over facts.tsv bytes followed by queries.tsv
// bytes.

namespace hoplab::kg {

namespace detail {

inline std::uint32_t parse_u32(std::string_view field, const std::string& file,
                               std::size_t line) {
  std::uint32_t v = 0;
  const auto [ptr, ec] =
      std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw ParseError(file + ":" + std::to_string(line) +
                     ": expected integer, got '" + std::string(field) + "'");
  return v;
}

inline SplitLabel parse_label(std::string_view field, const std::string& file,
                              std::size_t line) {
  if (field == "ID") return SplitLabel::kId;
  if (field == "OOD") return SplitLabel::kOod;
  throw ParseError(file + ":" + std::to_string(line) +
                   ": expected ID or OOD, got '" + std::string(field) + "'");
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

inline void append_query_lines(std::string& out, const char* tag,
                               const std::vector<CompositionQuery>& queries) {
  for (const CompositionQuery& q : queries) {
    out += tag;
    out += '\t';
    out += std::to_string(q.head);
    out += '\t';
    out += std::to_string(q.r1);
    out += '\t';
    out += std::to_string(q.r2);
    out += '\t';
    out += std::to_string(q.bridge);
    out += '\t';
    out += std::to_string(q.tail);
    out += '\t';
    out += to_string(q.hop1_label);
    out += '\t';
    out += to_string(q.hop2_label);
    out += '\n';
  }
}

inline CompositionQuery parse_query_fields(
    const std::vector<std::string_view>& fields, const std::string& file,
    std::size_t line) {
  return CompositionQuery{parse_u32(fields[1], file, line),
                          parse_u32(fields[2], file, line),
                          parse_u32(fields[3], file, line),
                          parse_u32(fields[4], file, line),
                          parse_u32(fields[5], file, line),
                          parse_label(fields[6], file, line),
                          parse_label(fields[7], file, line)};
}

}  // namespace detail

inline void serialize_bundle(const DatasetBundle& bundle,
                             const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::string facts_text;
  for (FactIndex i = 0; i < bundle.facts.size(); ++i) {
    const AtomicFact& f = bundle.facts.fact(i);
    facts_text += std::to_string(f.head);
    facts_text += '\t';
    facts_text += std::to_string(f.relation);
    facts_text += '\t';
    facts_text += std::to_string(f.tail);
    facts_text += '\t';
    facts_text += to_string(bundle.labels[i]);
    facts_text += '\n';
  }

  std::string queries_text;
  detail::append_query_lines(queries_text, "train_inferred",
                             bundle.train_inferred);
  detail::append_query_lines(queries_text, "augmentation", bundle.augmentation);
  detail::append_query_lines(queries_text, "eval_ood", bundle.eval_ood);
  detail::append_query_lines(queries_text, "eval_id_held", bundle.eval_id_held);
  detail::append_query_lines(queries_text, "eval_mixed_hop1",
                             bundle.eval_mixed_hop1);
  detail::append_query_lines(queries_text, "eval_mixed_hop2",
                             bundle.eval_mixed_hop2);

  Fnv1a64 checksum;
  checksum.update(facts_text);
  checksum.update(queries_text);

  nlohmann::json manifest;
  manifest["format"] = "hoplab-bundle-v1";
  manifest["spec"] = {{"num_entities", bundle.spec.num_entities},
                      {"num_relations", bundle.spec.num_relations},
                      {"out_degree", bundle.spec.out_degree},
                      {"ood_fraction", bundle.spec.ood_fraction},
                      {"phi", bundle.spec.phi},
                      {"seed", bundle.spec.seed}};
  manifest["regime"] = to_string(bundle.regime);
  manifest["aug_per_fact_count"] = bundle.aug_per_fact_count;
  manifest["counts"] = {{"facts", bundle.facts.size()},
                        {"train_inferred", bundle.train_inferred.size()},
                        {"augmentation", bundle.augmentation.size()},
                        {"eval_ood", bundle.eval_ood.size()},
                        {"eval_id_held", bundle.eval_id_held.size()},
                        {"eval_mixed_hop1", bundle.eval_mixed_hop1.size()},
                        {"eval_mixed_hop2", bundle.eval_mixed_hop2.size()}};
  manifest["coverage"] = {{"skipped_hop1", bundle.coverage.skipped_hop1},
                          {"skipped_hop2", bundle.coverage.skipped_hop2}};
  manifest["checksum"] = to_hex(checksum.digest());

  detail::write_file(dir / "facts.tsv", facts_text);
  detail::write_file(dir / "queries.tsv", queries_text);
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline DatasetBundle load_bundle(const std::filesystem::path& dir) {
  const std::string manifest_path = (dir / "manifest.json").string();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != "hoplab-bundle-v1")
    throw ParseError(manifest_path + ": unknown bundle format");

  DatasetBundle b;
  try {
    const auto& spec = manifest.at("spec");
    b.spec.num_entities = spec.at("num_entities").get<std::uint32_t>();
    b.spec.num_relations = spec.at("num_relations").get<std::uint32_t>();
    b.spec.out_degree = spec.at("out_degree").get<std::uint32_t>();
    b.spec.ood_fraction = spec.at("ood_fraction").get<double>();
    b.spec.phi = spec.at("phi").get<double>();
    b.spec.seed = spec.at("seed").get<std::uint64_t>();
    b.regime = regime_from_string(manifest.at("regime").get<std::string>());
    b.aug_per_fact_count =
        manifest.at("aug_per_fact_count").get<std::uint32_t>();
    b.coverage.skipped_hop1 =
        manifest.at("coverage").at("skipped_hop1").get<std::vector<FactIndex>>();
    b.coverage.skipped_hop2 =
        manifest.at("coverage").at("skipped_hop2").get<std::vector<FactIndex>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }

  const std::string facts_text = detail::read_file(dir / "facts.tsv");
  const std::string queries_text = detail::read_file(dir / "queries.tsv");

  Fnv1a64 checksum;
  checksum.update(facts_text);
  checksum.update(queries_text);
  if (to_hex(checksum.digest()) != manifest.at("checksum").get<std::string>())
    throw CorruptionError(dir.string() +
                          ": content checksum mismatch (truncated or edited "
                          "record files)");

  // facts.tsv
  {
    const std::string file = (dir / "facts.tsv").string();
    std::vector<AtomicFact> facts;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < facts_text.size()) {
      std::size_t end = facts_text.find('\n', start);
      if (end == std::string::npos)
        throw ParseError(file + ":" + std::to_string(line_no + 1) +
                         ": missing trailing newline");
      ++line_no;
      const auto fields = detail::split_tabs(
          std::string_view(facts_text).substr(start, end - start));
      if (fields.size() != 4)
        throw ParseError(file + ":" + std::to_string(line_no) + ": expected 4 "
                         "fields, got " + std::to_string(fields.size()));
      facts.push_back(AtomicFact{detail::parse_u32(fields[0], file, line_no),
                                 detail::parse_u32(fields[1], file, line_no),
                                 detail::parse_u32(fields[2], file, line_no)});
      b.labels.push_back(detail::parse_label(fields[3], file, line_no));
      start = end + 1;
    }
    const std::size_t expected =
        manifest.at("counts").at("facts").get<std::size_t>();
    if (facts.size() != expected)
      throw ParseError(file + ": fact count " + std::to_string(facts.size()) +
                       " does not match manifest count " +
                       std::to_string(expected));
    b.facts =
        FactTable(std::move(facts), b.spec.num_entities, b.spec.num_relations);
  }

  // queries.tsv
  {
    const std::string file = (dir / "queries.tsv").string();
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < queries_text.size()) {
      std::size_t end = queries_text.find('\n', start);
      if (end == std::string::npos)
        throw ParseError(file + ":" + std::to_string(line_no + 1) +
                         ": missing trailing newline");
      ++line_no;
      const auto fields = detail::split_tabs(
          std::string_view(queries_text).substr(start, end - start));
      if (fields.size() != 8)
        throw ParseError(file + ":" + std::to_string(line_no) + ": expected 8 "
                         "fields, got " + std::to_string(fields.size()));
      const CompositionQuery q = detail::parse_query_fields(fields, file,
                                                            line_no);
      const std::string_view tag = fields[0];
      if (tag == "train_inferred")
        b.train_inferred.push_back(q);
      else if (tag == "augmentation")
        b.augmentation.push_back(q);
      else if (tag == "eval_ood")
        b.eval_ood.push_back(q);
      else if (tag == "eval_id_held")
        b.eval_id_held.push_back(q);
      else if (tag == "eval_mixed_hop1")
        b.eval_mixed_hop1.push_back(q);
      else if (tag == "eval_mixed_hop2")
        b.eval_mixed_hop2.push_back(q);
      else
        throw ParseError(file + ":" + std::to_string(line_no) +
                         ": unknown set tag '" + std::string(tag) + "'");
      start = end + 1;
    }
  }

  const auto check_count = [&](const char* key, std::size_t actual) {
    const std::size_t expected =
        manifest.at("counts").at(key).get<std::size_t>();
    if (actual != expected)
      throw ParseError((dir / "queries.tsv").string() + ": " + key +
                       " count " + std::to_string(actual) +
                       " does not match manifest count " +
                       std::to_string(expected));
  };
  check_count("train_inferred", b.train_inferred.size());
  check_count("augmentation", b.augmentation.size());
  check_count("eval_ood", b.eval_ood.size());
  check_count("eval_id_held", b.eval_id_held.size());
  check_count("eval_mixed_hop1", b.eval_mixed_hop1.size());
  check_count("eval_mixed_hop2", b.eval_mixed_hop2.size());
  return b;
}

// Finetune bundles use the same conventions: facts get a retained/new tag,
// queries get their eval-set tag.
inline void serialize_finetune_bundle(const FinetuneBundle& bundle,
                                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::string facts_text;
  const auto append_facts = [&](const char* tag,
                                const std::vector<AtomicFact>& facts) {
    for (const AtomicFact& f : facts) {
      facts_text += tag;
      facts_text += '\t';
      facts_text += std::to_string(f.head);
      facts_text += '\t';
      facts_text += std::to_string(f.relation);
      facts_text += '\t';
      facts_text += std::to_string(f.tail);
      facts_text += '\n';
    }
  };
  append_facts("retained", bundle.retained_atomic);
  append_facts("new", bundle.new_atomic);

  std::string queries_text;
  detail::append_query_lines(queries_text, "train_compositional",
                             bundle.train_compositional);
  detail::append_query_lines(queries_text, "eval_new_hop1",
                             bundle.eval_new_hop1);
  detail::append_query_lines(queries_text, "eval_new_hop2",
                             bundle.eval_new_hop2);
  detail::append_query_lines(queries_text, "eval_new_both",
                             bundle.eval_new_both);

  Fnv1a64 checksum;
  checksum.update(facts_text);
  checksum.update(queries_text);

  nlohmann::json manifest;
  manifest["format"] = "hoplab-finetune-v1";
  manifest["num_entities"] = bundle.num_entities;
  manifest["num_relations"] = bundle.num_relations;
  manifest["seed"] = bundle.seed;
  manifest["counts"] = {
      {"retained_atomic", bundle.retained_atomic.size()},
      {"new_atomic", bundle.new_atomic.size()},
      {"train_compositional", bundle.train_compositional.size()},
      {"eval_new_hop1", bundle.eval_new_hop1.size()},
      {"eval_new_hop2", bundle.eval_new_hop2.size()},
      {"eval_new_both", bundle.eval_new_both.size()}};
  manifest["checksum"] = to_hex(checksum.digest());

  detail::write_file(dir / "facts.tsv", facts_text);
  detail::write_file(dir / "queries.tsv", queries_text);
  detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline FinetuneBundle load_finetune_bundle(const std::filesystem::path& dir) {
  const std::string manifest_path = (dir / "manifest.json").string();
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(detail::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }
  if (manifest.value("format", "") != "hoplab-finetune-v1")
    throw ParseError(manifest_path + ": unknown finetune bundle format");

  FinetuneBundle b;
  try {
    b.num_entities = manifest.at("num_entities").get<std::uint32_t>();
    b.num_relations = manifest.at("num_relations").get<std::uint32_t>();
    b.seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(manifest_path + ": " + e.what());
  }

  const std::string facts_text = detail::read_file(dir / "facts.tsv");
  const std::string queries_text = detail::read_file(dir / "queries.tsv");

  Fnv1a64 checksum;
  checksum.update(facts_text);
  checksum.update(queries_text);
  if (to_hex(checksum.digest()) != manifest.at("checksum").get<std::string>())
    throw CorruptionError(dir.string() + ": content checksum mismatch");

  {
    const std::string file = (dir / "facts.tsv").string();
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < facts_text.size()) {
      std::size_t end = facts_text.find('\n', start);
      if (end == std::string::npos)
        throw ParseError(file + ":" + std::to_string(line_no + 1) +
                         ": missing trailing newline");
      ++line_no;
      const auto fields = detail::split_tabs(
          std::string_view(facts_text).substr(start, end - start));
      if (fields.size() != 4)
        throw ParseError(file + ":" + std::to_string(line_no) + ": expected 4 "
                         "fields, got " + std::to_string(fields.size()));
      const AtomicFact f{detail::parse_u32(fields[1], file, line_no),
                         detail::parse_u32(fields[2], file, line_no),
                         detail::parse_u32(fields[3], file, line_no)};
      if (fields[0] == "retained")
        b.retained_atomic.push_back(f);
      else if (fields[0] == "new")
        b.new_atomic.push_back(f);
      else
        throw ParseError(file + ":" + std::to_string(line_no) +
                         ": unknown fact tag '" + std::string(fields[0]) + "'");
      start = end + 1;
    }
  }
  {
    const std::string file = (dir / "queries.tsv").string();
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < queries_text.size()) {
      std::size_t end = queries_text.find('\n', start);
      if (end == std::string::npos)
        throw ParseError(file + ":" + std::to_string(line_no + 1) +
                         ": missing trailing newline");
      ++line_no;
      const auto fields = detail::split_tabs(
          std::string_view(queries_text).substr(start, end - start));
      if (fields.size() != 8)
        throw ParseError(file + ":" + std::to_string(line_no) + ": expected 8 "
                         "fields, got " + std::to_string(fields.size()));
      const CompositionQuery q = detail::parse_query_fields(fields, file,
                                                            line_no);
      const std::string_view tag = fields[0];
      if (tag == "train_compositional")
        b.train_compositional.push_back(q);
      else if (tag == "eval_new_hop1")
        b.eval_new_hop1.push_back(q);
      else if (tag == "eval_new_hop2")
        b.eval_new_hop2.push_back(q);
      else if (tag == "eval_new_both")
        b.eval_new_both.push_back(q);
      else
        throw ParseError(file + ":" + std::to_string(line_no) +
                         ": unknown set tag '" + std::string(tag) + "'");
      start = end + 1;
    }
  }

  const auto check_count = [&](const char* key, std::size_t actual) {
    const std::size_t expected =
        manifest.at("counts").at(key).get<std::size_t>();
    if (actual != expected)
      throw ParseError(dir.string() + ": " + key + " count " +
                       std::to_string(actual) +
                       " does not match manifest count " +
                       std::to_string(expected));
  };
  check_count("retained_atomic", b.retained_atomic.size());
  check_count("new_atomic", b.new_atomic.size());
  check_count("train_compositional", b.train_compositional.size());
  check_count("eval_new_hop1", b.eval_new_hop1.size());
  check_count("eval_new_hop2", b.eval_new_hop2.size());
  check_count("eval_new_both", b.eval_new_both.size());
  return b;
}

}  // namespace hoplab::kg
