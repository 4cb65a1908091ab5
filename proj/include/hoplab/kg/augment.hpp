#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/kg/generate.hpp"
#include "hoplab/kg/types.hpp"

namespace hoplab::kg {

struct AugmentResult {
  std::vector<CompositionQuery> queries;
  std::vector<FactIndex> skipped;  // facts whose bridge had no ID partner
};

// Hop-1 injection: for each OOD fact (h, r1, b), pair it with up to
// per_fact_count ID facts (b, r_x, t_x) sharing bridge b, emitting training
// queries (h, r1, r_x) -> t_x with exactly one OOD hop.
inline AugmentResult augment_hop1(std::span<const FactIndex> f1_ood,
                                  const FactTable& facts,
                                  const LabelMap& labels,
                                  std::uint32_t per_fact_count,
                                  std::uint64_t seed) {
  AugmentResult out;
  Rng rng(derive_seed(seed, seed_tag::kAugHop1));
  std::vector<FactIndex> candidates;
  for (FactIndex fi : f1_ood) {
    const AtomicFact& hop1 = facts.fact(fi);
    candidates.clear();
    for (FactIndex j : facts.out_edges(hop1.tail))
      if (labels[j] == SplitLabel::kId) candidates.push_back(j);

    if (candidates.empty()) {
      if (per_fact_count > 0) out.skipped.push_back(fi);
      continue;
    }
    const std::uint64_t take =
        std::min<std::uint64_t>(per_fact_count, candidates.size());
    for (std::uint32_t pick :
         sample_without_replacement(candidates.size(), take, rng)) {
      const AtomicFact& hop2 = facts.fact(candidates[pick]);
      out.queries.push_back(CompositionQuery{hop1.head, hop1.relation,
                                             hop2.relation, hop1.tail,
                                             hop2.tail, SplitLabel::kOod,
                                             SplitLabel::kId});
    }
  }
  return out;
}

// Hop-2 injection, the mirror image: for each OOD fact (b, r2, t), pair it
// with up to per_fact_count ID facts (h_y, r_y, b) ending at bridge b,
// emitting (h_y, r_y, r2) -> t.
inline AugmentResult augment_hop2(std::span<const FactIndex> f2_ood,
                                  const FactTable& facts,
                                  const LabelMap& labels,
                                  std::uint32_t per_fact_count,
                                  std::uint64_t seed) {
  AugmentResult out;
  Rng rng(derive_seed(seed, seed_tag::kAugHop2));
  std::vector<FactIndex> candidates;
  for (FactIndex fi : f2_ood) {
    const AtomicFact& hop2 = facts.fact(fi);
    candidates.clear();
    for (FactIndex j : facts.in_edges(hop2.head))
      if (labels[j] == SplitLabel::kId) candidates.push_back(j);

    if (candidates.empty()) {
      if (per_fact_count > 0) out.skipped.push_back(fi);
      continue;
    }
    const std::uint64_t take =
        std::min<std::uint64_t>(per_fact_count, candidates.size());
    for (std::uint32_t pick :
         sample_without_replacement(candidates.size(), take, rng)) {
      const AtomicFact& hop1 = facts.fact(candidates[pick]);
      out.queries.push_back(CompositionQuery{hop1.head, hop1.relation,
                                             hop2.relation, hop1.tail,
                                             hop2.tail, SplitLabel::kId,
                                             SplitLabel::kOod});
    }
  }
  return out;
}

// Applies a supervision regime to a base bundle. "Full" regimes inject every
// OOD hop fact that appears in eval_ood; eval sets are never touched and no
// both-hop-OOD query enters training.
inline DatasetBundle build_regime(DatasetBundle bundle, Regime regime,
                                  std::uint32_t per_fact_count,
                                  std::uint64_t seed) {
  bundle.regime = regime;
  bundle.aug_per_fact_count = per_fact_count;
  bundle.augmentation.clear();
  bundle.coverage = AugmentationCoverage{};
  if (regime == Regime::kNatural) return bundle;

  const OodHopFacts ood_facts =
      extract_ood_hop_facts(bundle.eval_ood, bundle.facts);

  if (regime == Regime::kHop1Full || regime == Regime::kBothFull) {
    AugmentResult r = augment_hop1(ood_facts.hop1, bundle.facts, bundle.labels,
                                   per_fact_count, seed);
    bundle.augmentation.insert(bundle.augmentation.end(), r.queries.begin(),
                               r.queries.end());
    bundle.coverage.skipped_hop1 = std::move(r.skipped);
  }
  if (regime == Regime::kHop2Full || regime == Regime::kBothFull) {
    AugmentResult r = augment_hop2(ood_facts.hop2, bundle.facts, bundle.labels,
                                   per_fact_count, seed);
    bundle.augmentation.insert(bundle.augmentation.end(), r.queries.begin(),
                               r.queries.end());
    bundle.coverage.skipped_hop2 = std::move(r.skipped);
  }
  return bundle;
}

inline DatasetBundle build_regime(DatasetBundle bundle,
                                  const std::string& regime,
                                  std::uint32_t per_fact_count,
                                  std::uint64_t seed) {
  return build_regime(std::move(bundle), regime_from_string(regime),
                      per_fact_count, seed);
}

}  // namespace hoplab::kg
