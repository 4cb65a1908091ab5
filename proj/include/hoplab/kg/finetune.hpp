#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/kg/generate.hpp"
#include "hoplab/kg/types.hpp"

namespace hoplab::kg {

// Builds the finetuning bundle from a pretraining bundle:
//   - n_new facts on (entity, relation) pairs unseen in the original table,
//     collected round-robin across entities with uniform random tails;
//   - n_retain uniformly sampled original ID facts;
//   - compositions over the retained+new union, split by where new facts sit.
// In the emitted queries the hop label marks provenance: kId = retained
// original fact, kOod = newly injected fact.
inline FinetuneBundle build_finetune_bundle(const DatasetBundle& bundle,
                                            std::uint32_t n_new,
                                            std::uint32_t n_retain,
                                            std::uint64_t seed) {
  const FactTable& table = bundle.facts;
  const std::uint32_t num_entities = table.num_entities();
  const std::uint32_t num_relations = table.num_relations();

  FinetuneBundle out;
  out.num_entities = num_entities;
  out.num_relations = num_relations;
  out.seed = seed;

  Rng rng(derive_seed(seed, seed_tag::kFinetune));

  // Unused relations per entity, in ascending relation order.
  std::vector<std::vector<RelationId>> unused(num_entities);
  std::uint64_t total_unused = 0;
  for (EntityId e = 0; e < num_entities; ++e) {
    for (RelationId r = 0; r < num_relations; ++r)
      if (!table.has_subject(e, r)) unused[e].push_back(r);
    total_unused += unused[e].size();
  }
  if (n_new > total_unused)
    throw SizingError("build_finetune_bundle: requested " +
                      std::to_string(n_new) + " new facts but only " +
                      std::to_string(total_unused) +
                      " unused (entity, relation) pairs exist");

  // Round-robin over entities so new facts spread evenly, one per entity per
  // round, until n_new are collected.
  while (out.new_atomic.size() < n_new) {
    for (EntityId e = 0; e < num_entities && out.new_atomic.size() < n_new;
         ++e) {
      auto& pool = unused[e];
      if (pool.empty()) continue;
      const std::uint64_t pick = rng.uniform_index(pool.size());
      const RelationId rel = pool[pick];
      pool[pick] = pool.back();
      pool.pop_back();
      const auto tail = static_cast<EntityId>(rng.uniform_index(num_entities));
      out.new_atomic.push_back(AtomicFact{e, rel, tail});
    }
  }

  // Retained subset of the original ID facts.
  std::vector<FactIndex> id_facts;
  for (FactIndex i = 0; i < table.size(); ++i)
    if (bundle.labels[i] == SplitLabel::kId) id_facts.push_back(i);
  if (n_retain > id_facts.size())
    throw SizingError("build_finetune_bundle: requested " +
                      std::to_string(n_retain) + " retained facts but only " +
                      std::to_string(id_facts.size()) + " ID facts exist");
  for (std::uint32_t pick :
       sample_without_replacement(id_facts.size(), n_retain, rng))
    out.retained_atomic.push_back(table.fact(id_facts[pick]));

  // Compositions over the union graph. kId marks a retained hop, kOod a new
  // hop; the union table keeps retained facts first so label-by-index works.
  std::vector<AtomicFact> union_facts = out.retained_atomic;
  union_facts.insert(union_facts.end(), out.new_atomic.begin(),
                     out.new_atomic.end());
  FactTable union_table(std::move(union_facts), num_entities, num_relations);
  const std::size_t n_retained = out.retained_atomic.size();

  for (FactIndex i = 0; i < union_table.size(); ++i) {
    const AtomicFact& hop1 = union_table.fact(i);
    const bool hop1_new = i >= n_retained;
    for (FactIndex j : union_table.out_edges(hop1.tail)) {
      const AtomicFact& hop2 = union_table.fact(j);
      const bool hop2_new = j >= n_retained;
      const CompositionQuery q{
          hop1.head,
          hop1.relation,
          hop2.relation,
          hop1.tail,
          hop2.tail,
          hop1_new ? SplitLabel::kOod : SplitLabel::kId,
          hop2_new ? SplitLabel::kOod : SplitLabel::kId};
      if (!hop1_new && !hop2_new)
        out.train_compositional.push_back(q);
      else if (hop1_new && !hop2_new)
        out.eval_new_hop1.push_back(q);
      else if (!hop1_new && hop2_new)
        out.eval_new_hop2.push_back(q);
      else
        out.eval_new_both.push_back(q);
    }
  }
  return out;
}

}  // namespace hoplab::kg
