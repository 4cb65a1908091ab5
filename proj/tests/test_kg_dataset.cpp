#include <gtest/gtest.h>

#include <algorithm>
#include <cstdint>
#include <set>
#include <unordered_set>

#include "hoplab/kg/generate.hpp"
#include "hoplab/kg/types.hpp"

namespace kg = hoplab::kg;

namespace {

kg::GraphSpec small_spec(std::uint64_t seed = 7) {
  kg::GraphSpec s;
  s.num_entities = 60;
  s.num_relations = 12;
  s.out_degree = 4;
  s.ood_fraction = 0.05;
  s.phi = 2.0;
  s.seed = seed;
  return s;
}

std::uint64_t query_key(const kg::CompositionQuery& q) {
  return (static_cast<std::uint64_t>(q.head) << 40) ^
         (static_cast<std::uint64_t>(q.r1) << 20) ^ q.r2;
}

}  // namespace

TEST(GraphSpec, RejectsBadConfigs) {
  kg::GraphSpec s = small_spec();
  s.out_degree = s.num_relations + 1;
  EXPECT_THROW(s.validate(), hoplab::ConfigError);

  s = small_spec();
  s.ood_fraction = 1.0;
  EXPECT_THROW(s.validate(), hoplab::ConfigError);

  s = small_spec();
  s.phi = -1.0;
  EXPECT_THROW(s.validate(), hoplab::ConfigError);
}

TEST(FactTable, RejectsDuplicateSubjectRelation) {
  std::vector<kg::AtomicFact> facts = {{0, 1, 2}, {0, 1, 3}};
  EXPECT_THROW(kg::FactTable(facts, 5, 5), hoplab::ConfigError);
}

TEST(FactTable, EdgesAndLookupAgreeWithLinearScan) {
  const auto spec = small_spec();
  const kg::FactTable table = kg::generate_graph(spec);

  for (kg::EntityId e = 0; e < spec.num_entities; e += 7) {
    std::set<kg::FactIndex> expected_out, expected_in;
    for (kg::FactIndex i = 0; i < table.size(); ++i) {
      if (table.fact(i).head == e) expected_out.insert(i);
      if (table.fact(i).tail == e) expected_in.insert(i);
    }
    const auto& out = table.out_edges(e);
    const auto& in = table.in_edges(e);
    EXPECT_EQ(std::set<kg::FactIndex>(out.begin(), out.end()), expected_out);
    EXPECT_EQ(std::set<kg::FactIndex>(in.begin(), in.end()), expected_in);
  }

  for (kg::FactIndex i = 0; i < table.size(); i += 11) {
    const auto& f = table.fact(i);
    EXPECT_EQ(table.lookup(f.head, f.relation), i);
  }
  EXPECT_EQ(table.lookup(0, spec.num_relations), kg::kNoFact);
}

TEST(GenerateGraph, ProducesExactOutDegreeWithDistinctRelations) {
  const auto spec = small_spec();
  const kg::FactTable table = kg::generate_graph(spec);

  EXPECT_EQ(table.size(),
            static_cast<std::size_t>(spec.num_entities) * spec.out_degree);

  std::vector<std::set<kg::RelationId>> rels(spec.num_entities);
  for (kg::FactIndex i = 0; i < table.size(); ++i) {
    const auto& f = table.fact(i);
    ASSERT_LT(f.head, spec.num_entities);
    ASSERT_LT(f.relation, spec.num_relations);
    ASSERT_LT(f.tail, spec.num_entities);
    rels[f.head].insert(f.relation);
  }
  for (kg::EntityId e = 0; e < spec.num_entities; ++e)
    EXPECT_EQ(rels[e].size(), spec.out_degree) << "entity " << e;
}

TEST(GenerateGraph, DeterministicInSeed) {
  const auto a = kg::generate_graph(small_spec(7));
  const auto b = kg::generate_graph(small_spec(7));
  const auto c = kg::generate_graph(small_spec(8));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(SplitFacts, ExactCountAndDeterminism) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);
  const auto labels = kg::split_facts(table, spec.ood_fraction, spec.seed);

  ASSERT_EQ(labels.size(), table.size());
  const auto n_ood = static_cast<std::uint64_t>(
      std::count(labels.begin(), labels.end(), kg::SplitLabel::kOod));
  EXPECT_EQ(n_ood, hoplab::round_half_up(spec.ood_fraction *
                                         static_cast<double>(table.size())));

  EXPECT_EQ(labels, kg::split_facts(table, spec.ood_fraction, spec.seed));
  EXPECT_NE(labels, kg::split_facts(table, spec.ood_fraction, spec.seed + 1));
  EXPECT_THROW(kg::split_facts(table, 1.0, 0), hoplab::ConfigError);
}

TEST(EnumerateCompositions, MatchesBruteForceChainScan) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);
  const auto labels = kg::split_facts(table, spec.ood_fraction, spec.seed);
  const auto queries = kg::enumerate_compositions(table, labels);

  // Uniform out-degree means every fact extends into exactly out_degree
  // chains.
  EXPECT_EQ(queries.size(), table.size() * spec.out_degree);

  std::uint64_t expected = 0;
  for (kg::FactIndex i = 0; i < table.size(); ++i)
    for (kg::FactIndex j = 0; j < table.size(); ++j)
      if (table.fact(i).tail == table.fact(j).head) ++expected;
  EXPECT_EQ(queries.size(), expected);

  std::unordered_set<std::uint64_t> keys;
  for (const auto& q : queries) {
    const kg::FactIndex f1 = table.lookup(q.head, q.r1);
    ASSERT_NE(f1, kg::kNoFact);
    EXPECT_EQ(table.fact(f1).tail, q.bridge);
    const kg::FactIndex f2 = table.lookup(q.bridge, q.r2);
    ASSERT_NE(f2, kg::kNoFact);
    EXPECT_EQ(table.fact(f2).tail, q.tail);
    EXPECT_EQ(q.hop1_label, labels[f1]);
    EXPECT_EQ(q.hop2_label, labels[f2]);
    EXPECT_TRUE(keys.insert(query_key(q)).second)
        << "duplicate (head, r1, r2) triple";
  }
}

TEST(SampleTrainInferred, ExactPhiCountAndPartition) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);
  const auto labels = kg::split_facts(table, spec.ood_fraction, spec.seed);
  const auto queries = kg::enumerate_compositions(table, labels);

  const auto atomic_id = static_cast<std::uint64_t>(
      std::count(labels.begin(), labels.end(), kg::SplitLabel::kId));
  const auto split =
      kg::sample_train_inferred(queries, spec.phi, atomic_id, spec.seed);

  EXPECT_EQ(split.train_inferred.size(),
            hoplab::round_half_up(spec.phi * static_cast<double>(atomic_id)));

  std::uint64_t id_pool = 0;
  for (const auto& q : queries)
    if (q.hop1_label == kg::SplitLabel::kId &&
        q.hop2_label == kg::SplitLabel::kId)
      ++id_pool;
  EXPECT_EQ(split.train_inferred.size() + split.eval_id_held.size(), id_pool);

  for (const auto& q : split.train_inferred) {
    EXPECT_EQ(q.hop1_label, kg::SplitLabel::kId);
    EXPECT_EQ(q.hop2_label, kg::SplitLabel::kId);
  }

  std::unordered_set<std::uint64_t> train_keys;
  for (const auto& q : split.train_inferred) train_keys.insert(query_key(q));
  for (const auto& q : split.eval_id_held)
    EXPECT_FALSE(train_keys.count(query_key(q)))
        << "held-out query also sampled for training";
}

TEST(SampleTrainInferred, PhiZeroAndOversizedPhi) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);
  const auto labels = kg::split_facts(table, spec.ood_fraction, spec.seed);
  const auto queries = kg::enumerate_compositions(table, labels);
  const auto atomic_id = static_cast<std::uint64_t>(
      std::count(labels.begin(), labels.end(), kg::SplitLabel::kId));

  const auto zero = kg::sample_train_inferred(queries, 0.0, atomic_id, 1);
  EXPECT_TRUE(zero.train_inferred.empty());

  EXPECT_THROW(kg::sample_train_inferred(queries, 1000.0, atomic_id, 1),
               hoplab::SizingError);
}

TEST(BuildEvalOod, PartitionsByLabelPair) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);
  const auto labels = kg::split_facts(table, spec.ood_fraction, spec.seed);
  const auto queries = kg::enumerate_compositions(table, labels);
  const auto sets = kg::build_eval_ood(queries);

  std::uint64_t both = 0, h1 = 0, h2 = 0;
  for (const auto& q : queries) {
    const bool o1 = q.hop1_label == kg::SplitLabel::kOod;
    const bool o2 = q.hop2_label == kg::SplitLabel::kOod;
    both += o1 && o2;
    h1 += o1 && !o2;
    h2 += !o1 && o2;
  }
  EXPECT_EQ(sets.ood_both.size(), both);
  EXPECT_EQ(sets.mixed_hop1.size(), h1);
  EXPECT_EQ(sets.mixed_hop2.size(), h2);

  for (const auto& q : sets.ood_both) {
    EXPECT_EQ(q.hop1_label, kg::SplitLabel::kOod);
    EXPECT_EQ(q.hop2_label, kg::SplitLabel::kOod);
  }
  for (const auto& q : sets.mixed_hop1) {
    EXPECT_EQ(q.hop1_label, kg::SplitLabel::kOod);
    EXPECT_EQ(q.hop2_label, kg::SplitLabel::kId);
  }
  for (const auto& q : sets.mixed_hop2) {
    EXPECT_EQ(q.hop1_label, kg::SplitLabel::kId);
    EXPECT_EQ(q.hop2_label, kg::SplitLabel::kOod);
  }
}

TEST(ExtractOodHopFacts, MatchesIndependentScan) {
  const auto spec = small_spec();
  const auto bundle = kg::build_base_bundle(spec);
  const auto hops = kg::extract_ood_hop_facts(bundle.eval_ood, bundle.facts);

  std::set<kg::FactIndex> hop1, hop2;
  for (const auto& q : bundle.eval_ood) {
    hop1.insert(bundle.facts.lookup(q.head, q.r1));
    hop2.insert(bundle.facts.lookup(q.bridge, q.r2));
  }
  EXPECT_EQ(std::set<kg::FactIndex>(hops.hop1.begin(), hops.hop1.end()), hop1);
  EXPECT_EQ(std::set<kg::FactIndex>(hops.hop2.begin(), hops.hop2.end()), hop2);
  EXPECT_TRUE(std::is_sorted(hops.hop1.begin(), hops.hop1.end()));
  EXPECT_TRUE(std::is_sorted(hops.hop2.begin(), hops.hop2.end()));
  for (kg::FactIndex fi : hops.hop1)
    EXPECT_EQ(bundle.labels[fi], kg::SplitLabel::kOod);
  for (kg::FactIndex fi : hops.hop2)
    EXPECT_EQ(bundle.labels[fi], kg::SplitLabel::kOod);
}

TEST(OracleAnswer, AgreesWithEnumeratedQueries) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);
  const auto labels = kg::split_facts(table, spec.ood_fraction, spec.seed);
  const auto queries = kg::enumerate_compositions(table, labels);

  std::size_t checked = 0;
  for (std::size_t i = 0; i < queries.size(); i += 7, ++checked) {
    const auto& q = queries[i];
    const auto ans = kg::oracle_answer(q.head, q.r1, q.r2, table);
    EXPECT_EQ(ans.bridge, q.bridge);
    EXPECT_EQ(ans.tail, q.tail);
  }
  EXPECT_GT(checked, 100u);
}

TEST(OracleAnswer, ReportsWhichHopIsBroken) {
  const auto spec = small_spec();
  const auto table = kg::generate_graph(spec);

  // Hop 1 broken: a relation the head does not use.
  const auto& f = table.fact(0);
  kg::RelationId unused_r1 = kg::kNoFact;
  for (kg::RelationId r = 0; r < spec.num_relations; ++r)
    if (table.lookup(f.head, r) == kg::kNoFact) {
      unused_r1 = r;
      break;
    }
  ASSERT_NE(unused_r1, kg::kNoFact);
  try {
    kg::oracle_answer(f.head, unused_r1, 0, table);
    FAIL() << "expected NoPathError";
  } catch (const hoplab::NoPathError& e) {
    EXPECT_EQ(e.hop, 1);
  }

  // Hop 2 broken: valid first hop, then a relation the bridge does not use.
  const kg::EntityId bridge = f.tail;
  kg::RelationId unused_r2 = kg::kNoFact;
  for (kg::RelationId r = 0; r < spec.num_relations; ++r)
    if (table.lookup(bridge, r) == kg::kNoFact) {
      unused_r2 = r;
      break;
    }
  ASSERT_NE(unused_r2, kg::kNoFact);
  try {
    kg::oracle_answer(f.head, f.relation, unused_r2, table);
    FAIL() << "expected NoPathError";
  } catch (const hoplab::NoPathError& e) {
    EXPECT_EQ(e.hop, 2);
  }
}

TEST(BuildBaseBundle, CountsAndDeterminism) {
  const auto spec = small_spec();
  const auto bundle = kg::build_base_bundle(spec);

  EXPECT_EQ(bundle.facts.size(),
            static_cast<std::size_t>(spec.num_entities) * spec.out_degree);
  const auto n_ood = static_cast<std::uint64_t>(std::count(
      bundle.labels.begin(), bundle.labels.end(), kg::SplitLabel::kOod));
  EXPECT_EQ(n_ood, hoplab::round_half_up(spec.ood_fraction *
                                         static_cast<double>(
                                             bundle.facts.size())));
  const std::uint64_t atomic_id = bundle.facts.size() - n_ood;
  EXPECT_EQ(bundle.train_inferred.size(),
            hoplab::round_half_up(spec.phi * static_cast<double>(atomic_id)));
  EXPECT_EQ(bundle.regime, kg::Regime::kNatural);
  EXPECT_TRUE(bundle.augmentation.empty());
  EXPECT_FALSE(bundle.eval_ood.empty());

  EXPECT_EQ(bundle, kg::build_base_bundle(spec));
}
