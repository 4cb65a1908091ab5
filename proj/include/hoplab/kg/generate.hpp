#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/kg/types.hpp"

namespace hoplab::kg {

namespace seed_tag {
inline constexpr std::uint64_t kGraph = 0x67726170; // per-phase stream tags
inline constexpr std::uint64_t kSplit = 0x73706c69;
inline constexpr std::uint64_t kPhi = 0x70686920;
inline constexpr std::uint64_t kAugHop1 = 0x61756731;
inline constexpr std::uint64_t kAugHop2 = 0x61756732;
inline constexpr std::uint64_t kFinetune = 0x66696e65;
}  // namespace seed_tag

// Generates the random functional knowledge graph: every entity is subject of
// exactly out_degree distinct relations, each with a uniform random tail
// (self-loops permitted). Deterministic given spec.seed.
inline FactTable generate_graph(const GraphSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, seed_tag::kGraph));

  std::vector<AtomicFact> facts;
  facts.reserve(static_cast<std::size_t>(spec.num_entities) * spec.out_degree);

  std::vector<RelationId> rel_scratch(spec.num_relations);
  for (EntityId e = 0; e < spec.num_entities; ++e) {
    std::iota(rel_scratch.begin(), rel_scratch.end(), RelationId{0});
    // Partial Fisher-Yates: first out_degree entries become the subject's
    // distinct relations.
    for (std::uint32_t i = 0; i < spec.out_degree; ++i) {
      const std::uint64_t j = i + rng.uniform_index(spec.num_relations - i);
      std::swap(rel_scratch[i], rel_scratch[j]);
      const auto tail =
          static_cast<EntityId>(rng.uniform_index(spec.num_entities));
      facts.push_back(AtomicFact{e, rel_scratch[i], tail});
    }
  }
  return FactTable(std::move(facts), spec.num_entities, spec.num_relations);
}

// Labels exactly round(ood_fraction * |facts|) facts OOD, chosen uniformly.
inline LabelMap split_facts(const FactTable& facts, double ood_fraction,
                            std::uint64_t seed) {
  if (ood_fraction < 0.0 || ood_fraction >= 1.0)
    throw ConfigError("split_facts: ood_fraction must lie in [0, 1)");
  const std::uint64_t n_ood =
      round_half_up(ood_fraction * static_cast<double>(facts.size()));

  LabelMap labels(facts.size(), SplitLabel::kId);
  Rng rng(derive_seed(seed, seed_tag::kSplit));
  for (FactIndex i : sample_without_replacement(facts.size(), n_ood, rng))
    labels[i] = SplitLabel::kOod;
  return labels;
}

// All two-hop chains (h, r1, b) + (b, r2, t), one query per ordered pair of
// chainable facts. (h, r1, r2) triples are distinct by functionality.
inline std::vector<CompositionQuery> enumerate_compositions(
    const FactTable& facts, const LabelMap& labels) {
  std::vector<CompositionQuery> out;
  for (FactIndex i = 0; i < facts.size(); ++i) {
    const AtomicFact& hop1 = facts.fact(i);
    for (FactIndex j : facts.out_edges(hop1.tail)) {
      const AtomicFact& hop2 = facts.fact(j);
      out.push_back(CompositionQuery{hop1.head, hop1.relation, hop2.relation,
                                     hop1.tail, hop2.tail, labels[i],
                                     labels[j]});
    }
  }
  return out;
}

struct TrainInferredSplit {
  std::vector<CompositionQuery> train_inferred;
  std::vector<CompositionQuery> eval_id_held;
};

// Uniform sample without replacement of round(phi * atomic_id_count) queries
// from the ID-only pool; the unsampled remainder becomes eval_id_held.
inline TrainInferredSplit sample_train_inferred(
    std::span<const CompositionQuery> compositions, double phi,
    std::uint64_t atomic_id_count, std::uint64_t seed) {
  if (phi < 0.0) throw ConfigError("sample_train_inferred: phi must be >= 0");

  std::vector<const CompositionQuery*> pool;
  for (const CompositionQuery& q : compositions)
    if (q.hop1_label == SplitLabel::kId && q.hop2_label == SplitLabel::kId)
      pool.push_back(&q);

  const std::uint64_t want =
      round_half_up(phi * static_cast<double>(atomic_id_count));
  if (want > pool.size())
    throw SizingError("sample_train_inferred: requested " +
                      std::to_string(want) + " ID-only queries but pool has " +
                      std::to_string(pool.size()));

  Rng rng(derive_seed(seed, seed_tag::kPhi));
  const auto picked = sample_without_replacement(pool.size(), want, rng);
  std::vector<char> taken(pool.size(), 0);

  TrainInferredSplit out;
  out.train_inferred.reserve(want);
  for (std::uint32_t idx : picked) {
    out.train_inferred.push_back(*pool[idx]);
    taken[idx] = 1;
  }
  out.eval_id_held.reserve(pool.size() - want);
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!taken[i]) out.eval_id_held.push_back(*pool[i]);
  return out;
}

struct EvalSets {
  std::vector<CompositionQuery> ood_both;    // canonical OOD test set
  std::vector<CompositionQuery> mixed_hop1;  // OOD hop-1 only, diagnostic
  std::vector<CompositionQuery> mixed_hop2;  // OOD hop-2 only, diagnostic
};

inline EvalSets build_eval_ood(std::span<const CompositionQuery> compositions) {
  EvalSets out;
  for (const CompositionQuery& q : compositions) {
    const bool o1 = q.hop1_label == SplitLabel::kOod;
    const bool o2 = q.hop2_label == SplitLabel::kOod;
    if (o1 && o2)
      out.ood_both.push_back(q);
    else if (o1)
      out.mixed_hop1.push_back(q);
    else if (o2)
      out.mixed_hop2.push_back(q);
  }
  return out;
}

struct OodHopFacts {
  std::vector<FactIndex> hop1;  // OOD facts appearing as hop 1 in eval_ood
  std::vector<FactIndex> hop2;  // OOD facts appearing as hop 2 in eval_ood
};

// The OOD hop facts that actually appear in the evaluation compositions,
// deduplicated and in ascending fact-index order.
inline OodHopFacts extract_ood_hop_facts(
    std::span<const CompositionQuery> eval_ood, const FactTable& facts) {
  OodHopFacts out;
  for (const CompositionQuery& q : eval_ood) {
    out.hop1.push_back(facts.lookup(q.head, q.r1));
    out.hop2.push_back(facts.lookup(q.bridge, q.r2));
  }
  for (auto* v : {&out.hop1, &out.hop2}) {
    std::sort(v->begin(), v->end());
    v->erase(std::unique(v->begin(), v->end()), v->end());
  }
  return out;
}

struct OracleAnswer {
  EntityId bridge;
  EntityId tail;
};

// Ground-truth two-hop evaluator: two table lookups.
inline OracleAnswer oracle_answer(EntityId head, RelationId r1, RelationId r2,
                                  const FactTable& facts) {
  const FactIndex f1 = facts.lookup(head, r1);
  if (f1 == kNoFact)
    throw NoPathError(1, "oracle_answer: no fact (" + std::to_string(head) +
                             ", " + std::to_string(r1) + ", ?) for hop 1");
  const EntityId bridge = facts.fact(f1).tail;
  const FactIndex f2 = facts.lookup(bridge, r2);
  if (f2 == kNoFact)
    throw NoPathError(2, "oracle_answer: no fact (" + std::to_string(bridge) +
                             ", " + std::to_string(r2) + ", ?) for hop 2");
  return OracleAnswer{bridge, facts.fact(f2).tail};
}

// Generates the full natural-regime bundle: graph, split, phi-sampled
// training queries, and all evaluation sets.
inline DatasetBundle build_base_bundle(const GraphSpec& spec) {
  spec.validate();
  DatasetBundle b;
  b.spec = spec;
  b.facts = generate_graph(spec);
  b.labels = split_facts(b.facts, spec.ood_fraction, spec.seed);

  std::uint64_t atomic_id = 0;
  for (SplitLabel l : b.labels)
    if (l == SplitLabel::kId) ++atomic_id;

  const auto compositions = enumerate_compositions(b.facts, b.labels);
  auto split = sample_train_inferred(compositions, spec.phi, atomic_id,
                                     spec.seed);
  b.train_inferred = std::move(split.train_inferred);
  b.eval_id_held = std::move(split.eval_id_held);

  auto evals = build_eval_ood(compositions);
  b.eval_ood = std::move(evals.ood_both);
  b.eval_mixed_hop1 = std::move(evals.mixed_hop1);
  b.eval_mixed_hop2 = std::move(evals.mixed_hop2);
  return b;
}

}  // namespace hoplab::kg
