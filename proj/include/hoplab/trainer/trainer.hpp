#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hoplab/common.hpp"
#include "hoplab/encoding.hpp"
#include "hoplab/kg/types.hpp"
#include "hoplab/model.hpp"
#include "hoplab/probe.hpp"
#include "hoplab/tensor/tape.hpp"
#include "hoplab/trainer/metrics.hpp"
#include "hoplab/trainer/optimizer.hpp"

namespace hoplab::trainer {

struct TrainConfig {
  std::uint64_t steps = 0;
  std::uint32_t batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint32_t warmup_steps = 2000;
  std::uint64_t eval_interval = 500;
  std::uint32_t eval_sample_size = 256;
  std::uint32_t probe_sample_size = 128;
  std::uint64_t checkpoint_interval = 0;  // 0: checkpoint only at the end
  std::uint64_t seed = 0;
  std::string regime = "natural";
  // Optional sampling weights over the three training pools (atomic,
  // train_inferred, augmentation); empty means uniform over their union.
  std::vector<double> pool_weights;
  std::string resume_from;  // checkpoint path; expects a .opt sidecar
  // Early stop: thresholds < 0 are inactive; when every active threshold is
  // met on one eval row, the run checkpoints and stops after that row.
  double stop_ood_accuracy = -1.0;
  double stop_bridge_rate = -1.0;
  double stop_train_accuracy = -1.0;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
    if (steps > 0 && eval_interval > steps)
      throw ConfigError("eval_interval " + std::to_string(eval_interval) +
                        " exceeds steps " + std::to_string(steps));
    if (eval_sample_size == 0)
      throw ConfigError("eval_sample_size must be positive");
    OptimConfig oc{learning_rate, weight_decay, beta1,
                   beta2,         adam_eps,     warmup_steps};
    oc.validate();
  }

  OptimConfig optim() const {
    return OptimConfig{learning_rate, weight_decay, beta1,
                       beta2,         adam_eps,     warmup_steps};
  }
};

struct EvalOutcome {
  std::uint32_t index;  // position in the evaluated set
  bool correct;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<EvalOutcome> outcomes;
};

namespace detail {

inline constexpr std::uint64_t kEvalTag = 0x6576616c;   // "eval"
inline constexpr std::uint64_t kProbeTag = 0x70726f62;  // "prob"

template <typename T>
EvalResult evaluate_examples(model::ModelParams<T>& params,
                             const std::vector<encoding::EncodedExample>& pool,
                             const std::vector<std::uint32_t>& indices,
                             const encoding::Vocab& vocab,
                             std::uint32_t num_iterations) {
  EvalResult res;
  res.outcomes.reserve(indices.size());
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  for (std::size_t at = 0; at < indices.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, indices.size() - at);
    std::vector<std::uint32_t> tokens;
    tokens.reserve(n * model::kSeqLen);
    for (std::size_t i = 0; i < n; ++i) {
      const encoding::EncodedExample& ex = pool[indices[at + i]];
      tokens.insert(tokens.end(), ex.input.begin(), ex.input.end());
    }
    const std::vector<std::uint32_t> preds =
        model::predict_batch(params, tokens, num_iterations, vocab);
    for (std::size_t i = 0; i < n; ++i) {
      const bool ok = preds[i] == pool[indices[at + i]].target;
      correct += ok;
      res.outcomes.push_back(EvalOutcome{indices[at + i], ok});
    }
  }
  if (!indices.empty())
    res.accuracy = double(correct) / double(indices.size());
  return res;
}

inline std::vector<std::uint32_t> eval_sample(std::size_t pool_size,
                                              std::size_t sample_size,
                                              std::uint64_t seed) {
  Rng rng(seed);
  if (sample_size >= pool_size) {
    std::vector<std::uint32_t> all(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) all[i] = std::uint32_t(i);
    return all;
  }
  return sample_without_replacement(pool_size, sample_size, rng);
}

}  // namespace detail

// Uniform sample without replacement (full set when sample_size covers it),
// scored by entity-masked argmax against the stored tail.
template <typename T>
EvalResult evaluate(model::ModelParams<T>& params,
                    const std::vector<encoding::EncodedExample>& pool,
                    std::uint32_t sample_size, const encoding::Vocab& vocab,
                    std::uint32_t num_iterations, std::uint64_t seed) {
  if (pool.empty()) throw EmptyInputError("evaluate: empty example pool");
  return detail::evaluate_examples(
      params, pool, detail::eval_sample(pool.size(), sample_size, seed), vocab,
      num_iterations);
}

template <typename T>
EvalResult evaluate(model::ModelParams<T>& params,
                    const std::vector<kg::CompositionQuery>& queries,
                    const encoding::Vocab& vocab, std::uint32_t num_iterations,
                    std::uint32_t sample_size, std::uint64_t seed) {
  if (queries.empty()) throw EmptyInputError("evaluate: empty query set");
  return evaluate(params, encoding::encode_compositions(queries, vocab),
                  sample_size, vocab, num_iterations, seed);
}

struct TrainResult {
  std::vector<MetricsRow> rows;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_file;
  std::uint64_t final_step = 0;
};

namespace detail {

// Probe a deterministic sample of eval_ood and return
// (bridge_rate_among_correct, bridge_rate_overall).
template <typename T>
std::pair<double, double> probe_rates(
    model::ModelParams<T>& params,
    const std::vector<kg::CompositionQuery>& eval_ood,
    const encoding::Vocab& vocab, std::uint32_t num_iterations,
    std::uint32_t probe_sample_size, std::uint64_t seed) {
  if (eval_ood.empty() || probe_sample_size == 0) return {0.0, 0.0};
  const std::vector<std::uint32_t> idx =
      eval_sample(eval_ood.size(), probe_sample_size, seed);
  std::vector<kg::CompositionQuery> sample;
  sample.reserve(idx.size());
  for (std::uint32_t i : idx) sample.push_back(eval_ood[i]);
  const std::vector<probe::TraceRecord> records =
      probe::trace_queries(params, sample, vocab, num_iterations, 1);
  bool all_degenerate = true;
  for (const probe::TraceRecord& r : records)
    if (!r.degenerate) all_degenerate = false;
  if (all_degenerate) return {0.0, 0.0};
  const probe::CircuitStats stats = probe::circuit_stats(records);
  return {stats.bridge_rate_among_correct, stats.bridge_rate_overall};
}

inline void write_lock_or_throw(const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path lock = out_dir / ".hoplab.lock";
  if (std::filesystem::exists(lock))
    throw ConfigError("output directory " + out_dir.string() +
                      " is locked by another run (remove " + lock.string() +
                      " if stale)");
  std::ofstream out(lock);
  out << "locked\n";
}

struct LockGuard {
  std::filesystem::path lock;
  explicit LockGuard(const std::filesystem::path& out_dir)
      : lock(out_dir / ".hoplab.lock") {
    write_lock_or_throw(out_dir);
  }
  ~LockGuard() {
    std::error_code ec;
    std::filesystem::remove(lock, ec);
  }
};

}  // namespace detail

template <typename T = float>
TrainResult train_run(const kg::DatasetBundle& bundle,
                      model::ModelConfig model_config,
                      const TrainConfig& train_config,
                      const std::filesystem::path& out_dir) {
  train_config.validate();
  if (kg::to_string(bundle.regime) != train_config.regime)
    throw ConfigError("bundle regime " +
                      std::string(kg::to_string(bundle.regime)) +
                      " does not match configured regime " +
                      train_config.regime);
  const encoding::Vocab vocab = encoding::build_vocab(bundle.spec);
  if (model_config.vocab_size == 0) model_config.vocab_size = vocab.size();
  if (model_config.vocab_size != vocab.size())
    throw ConfigError("model vocab_size " +
                      std::to_string(model_config.vocab_size) +
                      " does not match bundle vocab " +
                      std::to_string(vocab.size()));
  model_config.validate();

  detail::LockGuard lock(out_dir);

  // Training pools.
  std::vector<encoding::EncodedExample> atomic_pool =
      encoding::encode_atomics(bundle.facts, vocab);
  std::vector<encoding::EncodedExample> inferred_pool =
      encoding::encode_compositions(bundle.train_inferred, vocab);
  std::vector<encoding::EncodedExample> augment_pool =
      encoding::encode_compositions(bundle.augmentation, vocab);

  // Train accuracy is measured over the pools the run actually samples:
  // a pool with zero weight contributes no batches and no eval examples.
  const auto pool_used = [&](std::size_t i) {
    return train_config.pool_weights.empty() ||
           (i < train_config.pool_weights.size() &&
            train_config.pool_weights[i] > 0.0);
  };
  std::vector<encoding::EncodedExample> train_eval_pool;
  train_eval_pool.reserve(atomic_pool.size() + inferred_pool.size() +
                          augment_pool.size());
  if (pool_used(0))
    train_eval_pool.insert(train_eval_pool.end(), atomic_pool.begin(),
                           atomic_pool.end());
  if (pool_used(1))
    train_eval_pool.insert(train_eval_pool.end(), inferred_pool.begin(),
                           inferred_pool.end());
  if (pool_used(2))
    train_eval_pool.insert(train_eval_pool.end(), augment_pool.begin(),
                           augment_pool.end());

  encoding::BatchStream stream =
      train_config.pool_weights.empty()
          ? encoding::BatchStream(train_eval_pool, train_config.batch_size,
                                  train_config.seed)
          : encoding::BatchStream(
                {atomic_pool, inferred_pool, augment_pool},
                train_config.pool_weights, train_config.batch_size,
                train_config.seed);

#ifndef NDEBUG
  std::unordered_set<std::uint64_t> ood_keys;
  for (const kg::CompositionQuery& q : bundle.eval_ood)
    ood_keys.insert((std::uint64_t(q.head) << 40) ^
                    (std::uint64_t(q.r1) << 20) ^ std::uint64_t(q.r2));
#endif

  // Model and optimizer, fresh or resumed.
  model::ModelParams<T> params;
  std::uint64_t start_step = 0;
  if (train_config.resume_from.empty()) {
    model_config.seed = model_config.seed != 0 ? model_config.seed
                                               : train_config.seed;
    params = model::init_model<T>(model_config);
  } else {
    model::Checkpoint<T> ck =
        model::load_checkpoint<T>(train_config.resume_from);
    if (ck.params.config.vocab_size != vocab.size())
      throw ConfigError("resume checkpoint vocab " +
                        std::to_string(ck.params.config.vocab_size) +
                        " does not match bundle vocab " +
                        std::to_string(vocab.size()));
    params = std::move(ck.params);
    start_step = ck.step;
  }
  AdamW<T> opt(params, train_config.optim());
  if (!train_config.resume_from.empty())
    opt.load_state(train_config.resume_from + ".opt");

  const std::uint32_t L = params.config.num_iterations;
  MetricsWriter writer(out_dir / "metrics.csv", kMetricsHeader);
  TrainResult result;
  result.metrics_file = out_dir / "metrics.csv";
  const auto t0 = std::chrono::steady_clock::now();

  // Run manifest.
  {
    nlohmann::json manifest;
    manifest["kind"] = "train";
    manifest["version"] = "hoplab 0.1.0";
    manifest["regime"] = train_config.regime;
    manifest["model"] = {{"vocab_size", params.config.vocab_size},
                         {"model_dim", params.config.model_dim},
                         {"num_heads", params.config.num_heads},
                         {"mlp_dim", params.config.mlp_dim},
                         {"num_iterations", params.config.num_iterations},
                         {"seed", params.config.seed}};
    manifest["train"] = {{"steps", train_config.steps},
                         {"batch_size", train_config.batch_size},
                         {"learning_rate", train_config.learning_rate},
                         {"weight_decay", train_config.weight_decay},
                         {"beta1", train_config.beta1},
                         {"beta2", train_config.beta2},
                         {"adam_eps", train_config.adam_eps},
                         {"warmup_steps", train_config.warmup_steps},
                         {"eval_interval", train_config.eval_interval},
                         {"eval_sample_size", train_config.eval_sample_size},
                         {"probe_sample_size", train_config.probe_sample_size},
                         {"checkpoint_interval",
                          train_config.checkpoint_interval},
                         {"seed", train_config.seed},
                         {"pool_weights", train_config.pool_weights},
                         {"resume_from", train_config.resume_from}};
    manifest["pools"] = {{"atomic", atomic_pool.size()},
                         {"train_inferred", inferred_pool.size()},
                         {"augmentation", augment_pool.size()}};
    manifest["bundle"] = {{"num_entities", bundle.spec.num_entities},
                          {"num_relations", bundle.spec.num_relations},
                          {"out_degree", bundle.spec.out_degree},
                          {"ood_fraction", bundle.spec.ood_fraction},
                          {"phi", bundle.spec.phi},
                          {"seed", bundle.spec.seed}};
    std::ofstream mf(out_dir / "run_manifest.json",
                     std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot write run manifest");
    mf << manifest.dump(2) << "\n";
  }

  double last_train_loss = 0.0;

  const auto emit_row = [&](std::uint64_t step) {
    MetricsRow row;
    row.step = step;
    row.train_loss = last_train_loss;
    const auto seed_for = [&](std::uint64_t set_idx) {
      return derive_seed(train_config.seed, detail::kEvalTag,
                         step * 8 + set_idx);
    };
    row.train_accuracy =
        evaluate(params, train_eval_pool, train_config.eval_sample_size, vocab,
                 L, seed_for(0))
            .accuracy;
    if (!bundle.eval_id_held.empty())
      row.id_test_accuracy = evaluate(params, bundle.eval_id_held, vocab, L,
                                      train_config.eval_sample_size,
                                      seed_for(1))
                                 .accuracy;
    if (!bundle.eval_ood.empty())
      row.ood_accuracy = evaluate(params, bundle.eval_ood, vocab, L,
                                  train_config.eval_sample_size, seed_for(2))
                             .accuracy;
    if (!bundle.eval_mixed_hop1.empty())
      row.mixed_hop1_accuracy =
          evaluate(params, bundle.eval_mixed_hop1, vocab, L,
                   train_config.eval_sample_size, seed_for(3))
              .accuracy;
    if (!bundle.eval_mixed_hop2.empty())
      row.mixed_hop2_accuracy =
          evaluate(params, bundle.eval_mixed_hop2, vocab, L,
                   train_config.eval_sample_size, seed_for(4))
              .accuracy;
    const auto rates = detail::probe_rates(
        params, bundle.eval_ood, vocab, L, train_config.probe_sample_size,
        derive_seed(train_config.seed, detail::kProbeTag, step));
    row.bridge_rate_among_correct = rates.first;
    row.bridge_rate_overall = rates.second;
    row.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    writer.append(row);
    result.rows.push_back(row);
  };

  const auto stop_rule_met = [&]() {
    const bool any = train_config.stop_ood_accuracy >= 0 ||
                     train_config.stop_bridge_rate >= 0 ||
                     train_config.stop_train_accuracy >= 0;
    if (!any || result.rows.empty()) return false;
    const MetricsRow& r = result.rows.back();
    if (train_config.stop_ood_accuracy >= 0 &&
        r.ood_accuracy < train_config.stop_ood_accuracy)
      return false;
    if (train_config.stop_bridge_rate >= 0 &&
        r.bridge_rate_among_correct < train_config.stop_bridge_rate)
      return false;
    if (train_config.stop_train_accuracy >= 0 &&
        r.train_accuracy < train_config.stop_train_accuracy)
      return false;
    return true;
  };

  const auto save_at = [&](const std::string& name, std::uint64_t step) {
    const std::filesystem::path ck = out_dir / name;
    model::save_checkpoint(params, step, ck);
    opt.save_state(ck.string() + ".opt");
    return ck;
  };

  if (start_step == 0) {
    // Initial row: loss of the step-1 batch under the initial parameters.
    {
      const encoding::Batch b = stream.batch(1);
      model::ModelGraph<T> g = model::build_graph(params, b.inputs, L);
      const auto loss = g.tape.cross_entropy(g.logits, b.targets);
      last_train_loss = double(g.tape.value(loss).val[0]);
    }
    emit_row(0);
  }

  for (std::uint64_t s = start_step + 1; s <= train_config.steps; ++s) {
    const encoding::Batch b = stream.batch(s);
#ifndef NDEBUG
    for (std::size_t i = 0; i < b.targets.size(); ++i) {
      const std::uint32_t* in = b.inputs.data() + i * model::kSeqLen;
      if (in[0] != vocab.pad_token()) {
        const std::uint64_t key =
            (std::uint64_t(in[0]) << 40) ^
            (std::uint64_t(in[1] - vocab.num_entities) << 20) ^
            std::uint64_t(in[2] - vocab.num_entities);
        if (ood_keys.count(key))
          throw ConfigError("regime isolation violated: eval_ood query in "
                            "training batch at step " +
                            std::to_string(s));
      }
    }
#endif
    params.zero_grads();
    model::ModelGraph<T> g = model::build_graph(params, b.inputs, L);
    const auto loss = g.tape.cross_entropy(g.logits, b.targets);
    last_train_loss = double(g.tape.value(loss).val[0]);
    if (!std::isfinite(last_train_loss))
      throw NumericError("step " + std::to_string(s) + ": non-finite loss " +
                         std::to_string(last_train_loss));
    g.tape.backward(loss);
    opt.step(params, s);

    std::uint64_t reached = train_config.steps;
    if (s % train_config.eval_interval == 0 || s == train_config.steps) {
      emit_row(s);
      if (stop_rule_met()) reached = s;
    }
    if (train_config.checkpoint_interval > 0 &&
        s % train_config.checkpoint_interval == 0 && s != reached)
      save_at("ckpt_" + std::to_string(s) + ".bin", s);
    if (reached == s) {
      result.final_step = s;
      result.final_checkpoint = save_at("ckpt_final.bin", s);
      return result;
    }
  }

  result.final_step = train_config.steps;
  result.final_checkpoint = save_at("ckpt_final.bin", train_config.steps);
  return result;
}

struct FinetuneResult {
  std::vector<FinetuneMetricsRow> rows;
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_file;
};

template <typename T = float>
FinetuneResult finetune_run(const std::filesystem::path& checkpoint,
                            const kg::FinetuneBundle& bundle,
                            const TrainConfig& train_config,
                            const std::filesystem::path& out_dir) {
  train_config.validate();
  model::Checkpoint<T> ck = model::load_checkpoint<T>(checkpoint);
  const encoding::Vocab vocab =
      encoding::build_vocab(bundle.num_entities, bundle.num_relations);
  if (ck.params.config.vocab_size != vocab.size())
    throw ConfigError("checkpoint vocab " +
                      std::to_string(ck.params.config.vocab_size) +
                      " does not match finetune bundle vocab " +
                      std::to_string(vocab.size()));
  model::ModelParams<T> params = std::move(ck.params);
  const std::uint32_t L = params.config.num_iterations;

  detail::LockGuard lock(out_dir);

  std::vector<encoding::EncodedExample> retained_pool, new_pool;
  retained_pool.reserve(bundle.retained_atomic.size());
  for (const kg::AtomicFact& f : bundle.retained_atomic)
    retained_pool.push_back(encoding::encode_atomic(f, vocab));
  new_pool.reserve(bundle.new_atomic.size());
  for (const kg::AtomicFact& f : bundle.new_atomic)
    new_pool.push_back(encoding::encode_atomic(f, vocab));
  std::vector<encoding::EncodedExample> comp_pool =
      encoding::encode_compositions(bundle.train_compositional, vocab);

  std::vector<encoding::EncodedExample> train_pool;
  train_pool.reserve(retained_pool.size() + new_pool.size() +
                     comp_pool.size());
  train_pool.insert(train_pool.end(), retained_pool.begin(),
                    retained_pool.end());
  train_pool.insert(train_pool.end(), new_pool.begin(), new_pool.end());
  train_pool.insert(train_pool.end(), comp_pool.begin(), comp_pool.end());

  encoding::BatchStream stream =
      train_config.pool_weights.empty()
          ? encoding::BatchStream(train_pool, train_config.batch_size,
                                  train_config.seed)
          : encoding::BatchStream({retained_pool, new_pool, comp_pool},
                                  train_config.pool_weights,
                                  train_config.batch_size, train_config.seed);

  AdamW<T> opt(params, train_config.optim());
  MetricsWriter writer(out_dir / "metrics.csv", kFinetuneMetricsHeader);
  FinetuneResult result;
  result.metrics_file = out_dir / "metrics.csv";
  const auto t0 = std::chrono::steady_clock::now();

  {
    nlohmann::json manifest;
    manifest["kind"] = "finetune";
    manifest["version"] = "hoplab 0.1.0";
    manifest["checkpoint"] = checkpoint.string();
    manifest["checkpoint_step"] = ck.step;
    manifest["train"] = {{"steps", train_config.steps},
                         {"batch_size", train_config.batch_size},
                         {"learning_rate", train_config.learning_rate},
                         {"weight_decay", train_config.weight_decay},
                         {"warmup_steps", train_config.warmup_steps},
                         {"eval_interval", train_config.eval_interval},
                         {"eval_sample_size", train_config.eval_sample_size},
                         {"probe_sample_size", train_config.probe_sample_size},
                         {"seed", train_config.seed},
                         {"pool_weights", train_config.pool_weights}};
    manifest["pools"] = {{"retained_atomic", retained_pool.size()},
                         {"new_atomic", new_pool.size()},
                         {"train_compositional", comp_pool.size()}};
    manifest["eval_sets"] = {{"eval_new_hop1", bundle.eval_new_hop1.size()},
                             {"eval_new_hop2", bundle.eval_new_hop2.size()},
                             {"eval_new_both", bundle.eval_new_both.size()}};
    std::ofstream mf(out_dir / "run_manifest.json",
                     std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot write run manifest");
    mf << manifest.dump(2) << "\n";
  }

  double last_train_loss = 0.0;

  const auto eval_set =
      [&](const std::vector<kg::CompositionQuery>& queries,
          std::uint64_t seed, double* accuracy, double* bridge_rate) {
        if (queries.empty()) return;
        *accuracy = evaluate(params, queries, vocab, L,
                             train_config.eval_sample_size, seed)
                        .accuracy;
        const auto rates = detail::probe_rates(
            params, queries, vocab, L, train_config.probe_sample_size,
            splitmix64(seed));
        *bridge_rate = rates.first;
      };

  const auto emit_row = [&](std::uint64_t step) {
    FinetuneMetricsRow row;
    row.step = step;
    row.train_loss = last_train_loss;
    const auto seed_for = [&](std::uint64_t set_idx) {
      return derive_seed(train_config.seed, detail::kEvalTag,
                         step * 8 + set_idx);
    };
    if (!retained_pool.empty())
      row.retained_atomic_accuracy =
          evaluate(params, retained_pool, train_config.eval_sample_size, vocab,
                   L, seed_for(0))
              .accuracy;
    eval_set(bundle.eval_new_hop1, seed_for(1), &row.new_hop1_accuracy,
             &row.new_hop1_bridge_rate);
    eval_set(bundle.eval_new_hop2, seed_for(2), &row.new_hop2_accuracy,
             &row.new_hop2_bridge_rate);
    eval_set(bundle.eval_new_both, seed_for(3), &row.new_both_accuracy,
             &row.new_both_bridge_rate);
    row.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    writer.append(row);
    result.rows.push_back(row);
  };

  {
    const encoding::Batch b = stream.batch(1);
    model::ModelGraph<T> g = model::build_graph(params, b.inputs, L);
    const auto loss = g.tape.cross_entropy(g.logits, b.targets);
    last_train_loss = double(g.tape.value(loss).val[0]);
  }
  emit_row(0);

  for (std::uint64_t s = 1; s <= train_config.steps; ++s) {
    const encoding::Batch b = stream.batch(s);
    params.zero_grads();
    model::ModelGraph<T> g = model::build_graph(params, b.inputs, L);
    const auto loss = g.tape.cross_entropy(g.logits, b.targets);
    last_train_loss = double(g.tape.value(loss).val[0]);
    if (!std::isfinite(last_train_loss))
      throw NumericError("step " + std::to_string(s) + ": non-finite loss " +
                         std::to_string(last_train_loss));
    g.tape.backward(loss);
    opt.step(params, s);
    if (s % train_config.eval_interval == 0 || s == train_config.steps)
      emit_row(s);
  }

  model::save_checkpoint(params, train_config.steps, out_dir / "ckpt_final.bin");
  opt.save_state((out_dir / "ckpt_final.bin").string() + ".opt");
  result.final_checkpoint = out_dir / "ckpt_final.bin";
  return result;
}

}  // namespace hoplab::trainer
