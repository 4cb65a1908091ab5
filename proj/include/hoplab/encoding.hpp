#pragma once

#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/kg/types.hpp"

// Token layout: entity tokens occupy [0, E), relation tokens [E, E+R), and
// the pad token is the final id E+R. Every example is exactly three input
// tokens plus one entity target:
//   composition  [h, r1, r2] -> tail
//   atomic       [pad, h, r] -> tail
// Pad in position 0 distinguishes atomics from compositions.

namespace hoplab::encoding {

using TokenId = std::uint32_t;

struct Vocab {
  std::uint32_t num_entities = 0;
  std::uint32_t num_relations = 0;

  std::uint32_t size() const { return num_entities + num_relations + 1; }
  TokenId entity_token(kg::EntityId e) const {
    if (e >= num_entities)
      throw IndexError("entity id " + std::to_string(e) + " out of range [0, " +
                       std::to_string(num_entities) + ")");
    return e;
  }
  TokenId relation_token(kg::RelationId r) const {
    if (r >= num_relations)
      throw IndexError("relation id " + std::to_string(r) +
                       " out of range [0, " + std::to_string(num_relations) +
                       ")");
    return num_entities + r;
  }
  TokenId pad_token() const { return num_entities + num_relations; }
  bool is_entity(TokenId t) const { return t < num_entities; }

  friend bool operator==(const Vocab&, const Vocab&) = default;
};

inline Vocab build_vocab(const kg::GraphSpec& spec) {
  return Vocab{spec.num_entities, spec.num_relations};
}

inline Vocab build_vocab(std::uint32_t num_entities,
                         std::uint32_t num_relations) {
  return Vocab{num_entities, num_relations};
}

enum class ExampleKind : std::uint8_t { kAtomic, kComposition };

struct EncodedExample {
  std::array<TokenId, 3> input;
  TokenId target;
  ExampleKind kind;

  friend bool operator==(const EncodedExample&, const EncodedExample&) =
      default;
};

inline EncodedExample encode_atomic(const kg::AtomicFact& fact,
                                    const Vocab& vocab) {
  return EncodedExample{{vocab.pad_token(), vocab.entity_token(fact.head),
                         vocab.relation_token(fact.relation)},
                        vocab.entity_token(fact.tail),
                        ExampleKind::kAtomic};
}

inline EncodedExample encode_composition(const kg::CompositionQuery& query,
                                         const Vocab& vocab) {
  return EncodedExample{{vocab.entity_token(query.head),
                         vocab.relation_token(query.r1),
                         vocab.relation_token(query.r2)},
                        vocab.entity_token(query.tail),
                        ExampleKind::kComposition};
}

enum class SymbolKind : std::uint8_t { kEntity, kRelation, kPad };

struct DecodedSymbol {
  SymbolKind kind;
  std::uint32_t id;  // entity or relation id; 0 for pad

  friend bool operator==(const DecodedSymbol&, const DecodedSymbol&) = default;
};

inline DecodedSymbol decode_token(TokenId token, const Vocab& vocab) {
  if (token < vocab.num_entities)
    return DecodedSymbol{SymbolKind::kEntity, token};
  if (token < vocab.num_entities + vocab.num_relations)
    return DecodedSymbol{SymbolKind::kRelation, token - vocab.num_entities};
  if (token == vocab.pad_token()) return DecodedSymbol{SymbolKind::kPad, 0};
  throw IndexError("token id " + std::to_string(token) +
                   " out of range for vocab of size " +
                   std::to_string(vocab.size()));
}

struct Batch {
  std::vector<TokenId> inputs;   // batch_size x 3, row-major
  std::vector<TokenId> targets;  // batch_size

  std::size_t size() const { return targets.size(); }
};

// Deterministic batch source: the batch at a given step depends only on
// (seed, step), so replay and resume see identical data. Pools are sampled
// with replacement; with several pools a weighted pool choice precedes the
// uniform element choice.
class BatchStream {
 public:
  BatchStream(std::vector<EncodedExample> pool, std::uint32_t batch_size,
              std::uint64_t seed)
      : BatchStream(make_single(std::move(pool)), {1.0}, batch_size, seed) {}

  BatchStream(std::vector<std::vector<EncodedExample>> pools,
              std::vector<double> weights, std::uint32_t batch_size,
              std::uint64_t seed)
      : pools_(std::move(pools)), batch_size_(batch_size), seed_(seed) {
    if (batch_size_ == 0) throw ConfigError("batch_size must be positive");
    if (pools_.empty()) throw ConfigError("batch stream needs at least one pool");
    if (weights.empty()) weights.assign(pools_.size(), 1.0);
    if (weights.size() != pools_.size())
      throw ConfigError("got " + std::to_string(weights.size()) +
                        " pool weights for " + std::to_string(pools_.size()) +
                        " pools");
    double total = 0.0;
    for (std::size_t i = 0; i < pools_.size(); ++i) {
      if (weights[i] < 0.0)
        throw ConfigError("pool weight " + std::to_string(i) +
                          " is negative");
      if (weights[i] > 0.0 && pools_[i].empty())
        throw ConfigError("pool " + std::to_string(i) +
                          " has positive weight but no examples");
      total += weights[i];
    }
    if (total <= 0.0) throw ConfigError("pool weights sum to zero");
    cumulative_.resize(pools_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pools_.size(); ++i) {
      acc += weights[i] / total;
      cumulative_[i] = acc;
    }
    cumulative_.back() = 1.0;
  }

  std::uint32_t batch_size() const { return batch_size_; }
  std::size_t pool_size() const {
    std::size_t n = 0;
    for (const auto& p : pools_) n += p.size();
    return n;
  }

  Batch batch(std::uint64_t step) const {
    Rng rng(derive_seed(seed_, kBatchTag, step));
    Batch out;
    out.inputs.reserve(std::size_t{batch_size_} * 3);
    out.targets.reserve(batch_size_);
    for (std::uint32_t i = 0; i < batch_size_; ++i) {
      const EncodedExample& ex = draw(rng);
      out.inputs.insert(out.inputs.end(), ex.input.begin(), ex.input.end());
      out.targets.push_back(ex.target);
    }
    return out;
  }

 private:
  static constexpr std::uint64_t kBatchTag = 0x62617463;  // "batc"

  static std::vector<std::vector<EncodedExample>> make_single(
      std::vector<EncodedExample> pool) {
    std::vector<std::vector<EncodedExample>> pools;
    pools.push_back(std::move(pool));
    return pools;
  }

  const EncodedExample& draw(Rng& rng) const {
    std::size_t pool_idx = 0;
    if (pools_.size() > 1) {
      const double u = rng.uniform_real();
      while (pool_idx + 1 < cumulative_.size() && u >= cumulative_[pool_idx])
        ++pool_idx;
    }
    const auto& pool = pools_[pool_idx];
    return pool[rng.uniform_index(pool.size())];
  }

  std::vector<std::vector<EncodedExample>> pools_;
  std::vector<double> cumulative_;
  std::uint32_t batch_size_;
  std::uint64_t seed_;
};

// Convenience: encode every fact / query of a training pool.
inline std::vector<EncodedExample> encode_atomics(
    const kg::FactTable& facts, const Vocab& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(facts.size());
  for (kg::FactIndex i = 0; i < facts.size(); ++i)
    out.push_back(encode_atomic(facts.fact(i), vocab));
  return out;
}

inline std::vector<EncodedExample> encode_compositions(
    const std::vector<kg::CompositionQuery>& queries, const Vocab& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(queries.size());
  for (const kg::CompositionQuery& q : queries)
    out.push_back(encode_composition(q, vocab));
  return out;
}

}  // namespace hoplab::encoding
