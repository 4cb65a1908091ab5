#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hoplab/common.hpp"
#include "hoplab/encoding.hpp"
#include "hoplab/experiments/report.hpp"
#include "hoplab/kg/augment.hpp"
#include "hoplab/kg/finetune.hpp"
#include "hoplab/kg/generate.hpp"
#include "hoplab/kg/serialize.hpp"
#include "hoplab/model.hpp"
#include "hoplab/probe.hpp"
#include "hoplab/trainer/trainer.hpp"

namespace hoplab::experiments {

inline constexpr const char* kToolVersion = "hoplab 0.1.0";

namespace detail {

inline std::string bundle_checksum(const std::filesystem::path& bundle_dir) {
  std::ifstream in(bundle_dir / "manifest.json", std::ios::binary);
  if (!in) return "";
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error&) {
    return "";
  }
  return manifest.value("checksum", "");
}

inline void write_cli_manifest(const std::filesystem::path& out_dir,
                               const std::string& command,
                               const nlohmann::json& flags,
                               const nlohmann::json& inputs) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json manifest;
  manifest["version"] = kToolVersion;
  manifest["command"] = command;
  manifest["flags"] = flags;
  manifest["inputs"] = inputs;
  std::ofstream out(out_dir / "cli_manifest.json",
                    std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write cli manifest in " + out_dir.string());
  out << manifest.dump(2) << "\n";
}

}  // namespace detail

struct GenDataOptions {
  kg::GraphSpec spec;
  std::string regime = "natural";
  std::uint32_t aug_per_fact = 1;
  std::uint64_t aug_seed = 0;  // 0: follow spec.seed
  std::string out_dir;
};

inline int cmd_gen_data(const GenDataOptions& opt) {
  kg::DatasetBundle bundle = kg::build_base_bundle(opt.spec);
  const std::uint64_t aug_seed =
      opt.aug_seed != 0 ? opt.aug_seed : opt.spec.seed;
  bundle = kg::build_regime(std::move(bundle), opt.regime, opt.aug_per_fact,
                            aug_seed);
  kg::serialize_bundle(bundle, opt.out_dir);
  detail::write_cli_manifest(
      opt.out_dir, "gen-data",
      {{"num_entities", opt.spec.num_entities},
       {"num_relations", opt.spec.num_relations},
       {"out_degree", opt.spec.out_degree},
       {"ood_fraction", opt.spec.ood_fraction},
       {"phi", opt.spec.phi},
       {"seed", opt.spec.seed},
       {"regime", opt.regime},
       {"aug_per_fact", opt.aug_per_fact},
       {"aug_seed", aug_seed},
       {"out_dir", opt.out_dir}},
      nlohmann::json::object());
  std::cout << "bundle " << opt.out_dir << ": " << bundle.facts.size()
            << " facts, " << bundle.train_inferred.size()
            << " train-inferred, " << bundle.augmentation.size()
            << " augmentation, " << bundle.eval_ood.size() << " eval-ood, "
            << bundle.eval_id_held.size() << " id-held\n";
  return 0;
}

struct TrainOptions {
  std::string bundle_dir;
  std::string out_dir;
  model::ModelConfig model;
  trainer::TrainConfig train;
};

inline int cmd_train(const TrainOptions& opt) {
  const kg::DatasetBundle bundle = kg::load_bundle(opt.bundle_dir);
  detail::write_cli_manifest(
      opt.out_dir, "train",
      {{"bundle", opt.bundle_dir},
       {"out_dir", opt.out_dir},
       {"model_dim", opt.model.model_dim},
       {"num_heads", opt.model.num_heads},
       {"mlp_dim", opt.model.mlp_dim},
       {"num_iterations", opt.model.num_iterations},
       {"model_seed", opt.model.seed},
       {"steps", opt.train.steps},
       {"batch_size", opt.train.batch_size},
       {"learning_rate", opt.train.learning_rate},
       {"weight_decay", opt.train.weight_decay},
       {"warmup_steps", opt.train.warmup_steps},
       {"eval_interval", opt.train.eval_interval},
       {"eval_sample_size", opt.train.eval_sample_size},
       {"probe_sample_size", opt.train.probe_sample_size},
       {"checkpoint_interval", opt.train.checkpoint_interval},
       {"seed", opt.train.seed},
       {"regime", opt.train.regime},
       {"pool_weights", opt.train.pool_weights},
       {"resume_from", opt.train.resume_from}},
      {{"bundle_checksum", detail::bundle_checksum(opt.bundle_dir)}});
  const trainer::TrainResult res =
      trainer::train_run<float>(bundle, opt.model, opt.train, opt.out_dir);
  std::cout << "trained " << res.final_step << " steps; metrics "
            << res.metrics_file.string() << "; checkpoint "
            << res.final_checkpoint.string() << "\n";
  if (!res.rows.empty()) {
    const trainer::MetricsRow& last = res.rows.back();
    std::cout << "final: train_acc " << last.train_accuracy << ", ood_acc "
              << last.ood_accuracy << ", bridge_rate_among_correct "
              << last.bridge_rate_among_correct << "\n";
  }
  return 0;
}

struct ProbeOptions {
  std::string checkpoint;
  std::string bundle_dir;
  std::string eval_set = "eval_ood";
  std::uint32_t sample_size = 200;
  std::uint64_t seed = 0;
  std::uint32_t top_k = 1;
  std::vector<std::uint32_t> positions = {3};
  std::string out_dir;
};

inline int cmd_probe(const ProbeOptions& opt) {
  const kg::DatasetBundle bundle = kg::load_bundle(opt.bundle_dir);
  model::Checkpoint<float> ck = model::load_checkpoint<float>(opt.checkpoint);
  const encoding::Vocab vocab = encoding::build_vocab(bundle.spec);
  if (ck.params.config.vocab_size != vocab.size())
    throw ConfigError("checkpoint vocab " +
                      std::to_string(ck.params.config.vocab_size) +
                      " does not match bundle vocab " +
                      std::to_string(vocab.size()));

  const std::vector<kg::CompositionQuery>* set = nullptr;
  if (opt.eval_set == "eval_ood")
    set = &bundle.eval_ood;
  else if (opt.eval_set == "eval_id_held")
    set = &bundle.eval_id_held;
  else if (opt.eval_set == "eval_mixed_hop1")
    set = &bundle.eval_mixed_hop1;
  else if (opt.eval_set == "eval_mixed_hop2")
    set = &bundle.eval_mixed_hop2;
  else if (opt.eval_set == "train_inferred")
    set = &bundle.train_inferred;
  else if (opt.eval_set == "augmentation")
    set = &bundle.augmentation;
  else
    throw ConfigError("unknown eval set '" + opt.eval_set + "'");
  if (set->empty())
    throw EmptyInputError("eval set " + opt.eval_set + " is empty");

  trainer::detail::LockGuard lock(opt.out_dir);
  detail::write_cli_manifest(
      opt.out_dir, "probe",
      {{"checkpoint", opt.checkpoint},
       {"bundle", opt.bundle_dir},
       {"eval_set", opt.eval_set},
       {"sample_size", opt.sample_size},
       {"seed", opt.seed},
       {"top_k", opt.top_k},
       {"positions", opt.positions},
       {"out_dir", opt.out_dir}},
      {{"bundle_checksum", detail::bundle_checksum(opt.bundle_dir)},
       {"checkpoint_step", ck.step}});

  Rng rng(derive_seed(opt.seed, 0x70726f62));  // "prob"
  std::vector<kg::CompositionQuery> sample;
  if (opt.sample_size >= set->size()) {
    sample = *set;
  } else {
    for (std::uint32_t i :
         sample_without_replacement(set->size(), opt.sample_size, rng))
      sample.push_back((*set)[i]);
  }
  const std::vector<probe::TraceRecord> records = probe::trace_queries(
      ck.params, sample, vocab, ck.params.config.num_iterations, opt.top_k,
      opt.positions);
  probe::write_trace_records(records, opt.out_dir + "/traces.tsv");
  const probe::CircuitStats stats = probe::circuit_stats(records);

  nlohmann::json out;
  out["n_queries"] = stats.n_queries;
  out["n_correct"] = stats.n_correct;
  out["n_correct_with_bridge"] = stats.n_correct_with_bridge;
  out["n_bridge_found"] = stats.n_bridge_found;
  out["n_degenerate_excluded"] = stats.n_degenerate_excluded;
  out["bridge_rate_overall"] = stats.bridge_rate_overall;
  out["bridge_rate_among_correct"] = stats.bridge_rate_among_correct;
  std::ofstream sf(std::filesystem::path(opt.out_dir) / "circuit_stats.json",
                   std::ios::binary | std::ios::trunc);
  if (!sf) throw IoError("cannot write circuit stats");
  sf << out.dump(2) << "\n";

  std::cout << "probed " << records.size() << " queries from " << opt.eval_set
            << ": accuracy " << (stats.n_queries
                                     ? double(stats.n_correct) /
                                           double(stats.n_queries)
                                     : 0.0)
            << ", bridge_rate_among_correct "
            << stats.bridge_rate_among_correct << ", bridge_rate_overall "
            << stats.bridge_rate_overall << "\n";
  return 0;
}

struct FinetuneOptions {
  std::string checkpoint;
  std::string bundle_dir;
  std::uint32_t n_new = 500;
  std::uint32_t n_retain = 1000;
  std::uint64_t finetune_seed = 0;
  std::string out_dir;
  trainer::TrainConfig train;
};

inline int cmd_finetune(const FinetuneOptions& opt) {
  const kg::DatasetBundle bundle = kg::load_bundle(opt.bundle_dir);
  const kg::FinetuneBundle ft = kg::build_finetune_bundle(
      bundle, opt.n_new, opt.n_retain, opt.finetune_seed);
  detail::write_cli_manifest(
      opt.out_dir, "finetune",
      {{"checkpoint", opt.checkpoint},
       {"bundle", opt.bundle_dir},
       {"n_new", opt.n_new},
       {"n_retain", opt.n_retain},
       {"finetune_seed", opt.finetune_seed},
       {"out_dir", opt.out_dir},
       {"steps", opt.train.steps},
       {"batch_size", opt.train.batch_size},
       {"learning_rate", opt.train.learning_rate},
       {"weight_decay", opt.train.weight_decay},
       {"warmup_steps", opt.train.warmup_steps},
       {"eval_interval", opt.train.eval_interval},
       {"eval_sample_size", opt.train.eval_sample_size},
       {"probe_sample_size", opt.train.probe_sample_size},
       {"seed", opt.train.seed}},
      {{"bundle_checksum", detail::bundle_checksum(opt.bundle_dir)}});
  kg::serialize_finetune_bundle(
      ft, std::filesystem::path(opt.out_dir) / "finetune_bundle");
  const trainer::FinetuneResult res =
      trainer::finetune_run<float>(opt.checkpoint, ft, opt.train, opt.out_dir);
  std::cout << "finetuned " << opt.train.steps << " steps; metrics "
            << res.metrics_file.string() << "\n";
  if (!res.rows.empty()) {
    const trainer::FinetuneMetricsRow& last = res.rows.back();
    std::cout << "final: retained_acc " << last.retained_atomic_accuracy
              << ", new_hop1 " << last.new_hop1_accuracy << ", new_hop2 "
              << last.new_hop2_accuracy << ", new_both "
              << last.new_both_accuracy << "\n";
  }
  return 0;
}

struct ReportOptions {
  std::vector<std::string> metrics_files;
  std::string out_file;  // empty: stdout only
  double sat_threshold = 0.99;
  double ood_threshold = 0.9;
};

inline int cmd_report(const ReportOptions& opt) {
  if (opt.metrics_files.empty())
    throw ConfigError("report needs at least one metrics file");
  nlohmann::json out;
  out["version"] = kToolVersion;
  out["sat_threshold"] = opt.sat_threshold;
  out["ood_threshold"] = opt.ood_threshold;
  out["runs"] = nlohmann::json::array();
  for (const std::string& file : opt.metrics_files) {
    const trainer::CsvTable table = trainer::load_metrics_csv(file);
    const RegimeSummary s =
        summarize_metrics(table, opt.sat_threshold, opt.ood_threshold);
    nlohmann::json run;
    run["file"] = file;
    nlohmann::json summary = nlohmann::json::object();
    if (s.train_saturation_step)
      summary["train_saturation_step"] = *s.train_saturation_step;
    if (s.ood_crossing_step)
      summary["ood_crossing_step"] = *s.ood_crossing_step;
    if (s.final_bridge_rate_among_correct)
      summary["final_bridge_rate_among_correct"] =
          *s.final_bridge_rate_among_correct;
    if (s.gap_ratio) summary["gap_ratio"] = *s.gap_ratio;
    run["summary"] = summary;
    nlohmann::json series = nlohmann::json::object();
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
      std::vector<double> col;
      col.reserve(table.rows.size());
      for (const auto& row : table.rows) col.push_back(row[c]);
      series[table.columns[c]] = col;
    }
    run["series"] = series;
    out["runs"].push_back(std::move(run));

    std::cout << file << ":\n";
    if (s.train_saturation_step)
      std::cout << "  train saturation at step " << *s.train_saturation_step
                << "\n";
    else
      std::cout << "  train never saturated\n";
    if (s.ood_crossing_step)
      std::cout << "  ood crossing at step " << *s.ood_crossing_step << "\n";
    else
      std::cout << "  ood never crossed\n";
    if (s.gap_ratio) std::cout << "  gap ratio " << *s.gap_ratio << "\n";
    if (s.final_bridge_rate_among_correct)
      std::cout << "  final bridge_rate_among_correct "
                << *s.final_bridge_rate_among_correct << "\n";
  }
  if (!opt.out_file.empty()) {
    std::ofstream f(opt.out_file, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + opt.out_file);
    f << out.dump(2) << "\n";
  }
  return 0;
}

}  // namespace hoplab::experiments
