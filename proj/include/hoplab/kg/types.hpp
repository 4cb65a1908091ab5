#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hoplab/common.hpp"

namespace hoplab::kg {

// Entities and relations are dense contiguous indices, stable for the
// lifetime of a bundle.
using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using FactIndex = std::uint32_t;

inline constexpr FactIndex kNoFact = std::numeric_limits<FactIndex>::max();

enum class SplitLabel : std::uint8_t { kId = 0, kOod = 1 };

inline const char* to_string(SplitLabel l) {
  return l == SplitLabel::kId ? "ID" : "OOD";
}

struct AtomicFact {
  EntityId head;
  RelationId relation;
  EntityId tail;

  friend bool operator==(const AtomicFact&, const AtomicFact&) = default;
};

// A two-hop query (head, r1, r2) -> tail with its recorded bridge entity and
// the split labels of the two supporting facts.
struct CompositionQuery {
  EntityId head;
  RelationId r1;
  RelationId r2;
  EntityId bridge;
  EntityId tail;
  SplitLabel hop1_label;
  SplitLabel hop2_label;

  friend bool operator==(const CompositionQuery&,
                         const CompositionQuery&) = default;
};

struct GraphSpec {
  std::uint32_t num_entities = 2000;
  std::uint32_t num_relations = 200;
  std::uint32_t out_degree = 20;     // relations per subject entity
  double ood_fraction = 0.05;
  double phi = 18.0;                 // |train_inferred(ID)| / |atomic(ID)|
  std::uint64_t seed = 0;

  void validate() const {
    if (num_entities < 1)
      throw ConfigError("GraphSpec: num_entities must be >= 1");
    if (num_relations < 1)
      throw ConfigError("GraphSpec: num_relations must be >= 1");
    if (out_degree < 1)
      throw ConfigError("GraphSpec: out_degree must be >= 1");
    if (out_degree > num_relations)
      throw ConfigError("GraphSpec: out_degree " + std::to_string(out_degree) +
                        " exceeds num_relations " +
                        std::to_string(num_relations));
    if (ood_fraction < 0.0 || ood_fraction >= 1.0)
      throw ConfigError("GraphSpec: ood_fraction must lie in [0, 1)");
    if (phi < 0.0) throw ConfigError("GraphSpec: phi must be >= 0");
  }

  friend bool operator==(const GraphSpec&, const GraphSpec&) = default;
};

// Fact collection plus the three lookup indices. (head, relation) is
// functional: at most one tail per subject pair, enforced at build time.
class FactTable {
 public:
  FactTable() = default;

  FactTable(std::vector<AtomicFact> facts, std::uint32_t num_entities,
            std::uint32_t num_relations)
      : facts_(std::move(facts)),
        num_entities_(num_entities),
        num_relations_(num_relations),
        by_subject_(static_cast<std::size_t>(num_entities) * num_relations,
                    kNoFact),
        out_by_entity_(num_entities),
        in_by_entity_(num_entities) {
    for (FactIndex i = 0; i < facts_.size(); ++i) {
      const AtomicFact& f = facts_[i];
      if (f.head >= num_entities_ || f.tail >= num_entities_)
        throw ConfigError("FactTable: entity id out of range in fact " +
                          std::to_string(i));
      if (f.relation >= num_relations_)
        throw ConfigError("FactTable: relation id out of range in fact " +
                          std::to_string(i));
      const std::size_t key = subject_key(f.head, f.relation);
      if (by_subject_[key] != kNoFact)
        throw ConfigError("FactTable: duplicate (head, relation) pair (" +
                          std::to_string(f.head) + ", " +
                          std::to_string(f.relation) + ")");
      by_subject_[key] = i;
      out_by_entity_[f.head].push_back(i);
      in_by_entity_[f.tail].push_back(i);
    }
  }

  const std::vector<AtomicFact>& facts() const { return facts_; }
  std::size_t size() const { return facts_.size(); }
  std::uint32_t num_entities() const { return num_entities_; }
  std::uint32_t num_relations() const { return num_relations_; }

  const AtomicFact& fact(FactIndex i) const { return facts_[i]; }

  // Index of the fact with the given subject pair, or kNoFact.
  FactIndex lookup(EntityId head, RelationId relation) const {
    if (head >= num_entities_ || relation >= num_relations_) return kNoFact;
    return by_subject_[subject_key(head, relation)];
  }

  bool has_subject(EntityId head, RelationId relation) const {
    return lookup(head, relation) != kNoFact;
  }

  // Facts with the given entity as head (outgoing hops from a bridge).
  const std::vector<FactIndex>& out_edges(EntityId e) const {
    return out_by_entity_[e];
  }
  // Facts with the given entity as tail (incoming hops into a bridge).
  const std::vector<FactIndex>& in_edges(EntityId e) const {
    return in_by_entity_[e];
  }

  // Index structures are derived, so fact order and dimensions decide
  // equality.
  friend bool operator==(const FactTable& a, const FactTable& b) {
    return a.facts_ == b.facts_ && a.num_entities_ == b.num_entities_ &&
           a.num_relations_ == b.num_relations_;
  }

 private:
  std::size_t subject_key(EntityId h, RelationId r) const {
    return static_cast<std::size_t>(h) * num_relations_ + r;
  }

  std::vector<AtomicFact> facts_;
  std::uint32_t num_entities_ = 0;
  std::uint32_t num_relations_ = 0;
  std::vector<FactIndex> by_subject_;
  std::vector<std::vector<FactIndex>> out_by_entity_;
  std::vector<std::vector<FactIndex>> in_by_entity_;
};

// Per-fact split labels, indexed by fact index.
using LabelMap = std::vector<SplitLabel>;

enum class Regime : std::uint8_t { kNatural, kHop1Full, kHop2Full, kBothFull };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::kNatural: return "natural";
    case Regime::kHop1Full: return "hop1_full";
    case Regime::kHop2Full: return "hop2_full";
    case Regime::kBothFull: return "both_full";
  }
  return "?";
}

inline Regime regime_from_string(const std::string& s) {
  if (s == "natural") return Regime::kNatural;
  if (s == "hop1_full") return Regime::kHop1Full;
  if (s == "hop2_full") return Regime::kHop2Full;
  if (s == "both_full") return Regime::kBothFull;
  throw ConfigError("unknown regime '" + s +
                    "' (expected natural|hop1_full|hop2_full|both_full)");
}

// Facts that augmentation had to skip because their bridge has no valid ID
// partner, per hop. Informational, not fatal.
struct AugmentationCoverage {
  std::vector<FactIndex> skipped_hop1;
  std::vector<FactIndex> skipped_hop2;

  friend bool operator==(const AugmentationCoverage&,
                         const AugmentationCoverage&) = default;
};

struct DatasetBundle {
  GraphSpec spec;
  FactTable facts;
  LabelMap labels;
  Regime regime = Regime::kNatural;
  std::uint32_t aug_per_fact_count = 1;

  // Training-side query collections.
  std::vector<CompositionQuery> train_inferred;  // ID-only, phi-sampled
  std::vector<CompositionQuery> augmentation;    // regime-dependent

  // Evaluation-side query collections.
  std::vector<CompositionQuery> eval_ood;        // both hops OOD (canonical)
  std::vector<CompositionQuery> eval_id_held;    // ID-only, held out of training
  std::vector<CompositionQuery> eval_mixed_hop1; // OOD hop-1 only, diagnostic
  std::vector<CompositionQuery> eval_mixed_hop2; // OOD hop-2 only, diagnostic

  AugmentationCoverage coverage;

  friend bool operator==(const DatasetBundle&, const DatasetBundle&) = default;
};

struct FinetuneBundle {
  std::uint32_t num_entities = 0;
  std::uint32_t num_relations = 0;
  std::uint64_t seed = 0;

  std::vector<AtomicFact> retained_atomic;  // ID subset kept from pretraining
  std::vector<AtomicFact> new_atomic;       // unseen (head, relation) pairs

  std::vector<CompositionQuery> train_compositional;  // both hops retained
  std::vector<CompositionQuery> eval_new_hop1;        // new fact in hop 1 only
  std::vector<CompositionQuery> eval_new_hop2;        // new fact in hop 2 only
  std::vector<CompositionQuery> eval_new_both;        // both hops new

  friend bool operator==(const FinetuneBundle&,
                         const FinetuneBundle&) = default;
};

}  // namespace hoplab::kg
