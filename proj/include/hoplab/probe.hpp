#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/encoding.hpp"
#include "hoplab/kg/types.hpp"
#include "hoplab/model.hpp"

namespace hoplab::probe {

struct LensEntry {
  std::uint32_t token;
  double score;

  friend bool operator==(const LensEntry&, const LensEntry&) = default;
};

namespace detail {

// Applies the model's final norm to one state row and scores it against the
// unembedding.
template <typename T>
std::vector<double> lens_scores(const T* state,
                                model::ModelParams<T>& params) {
  const std::size_t D = params.config.model_dim;
  const std::size_t V = params.config.vocab_size;
  double mean = 0;
  for (std::size_t j = 0; j < D; ++j) mean += double(state[j]);
  mean /= double(D);
  double var = 0;
  for (std::size_t j = 0; j < D; ++j) {
    const double d = double(state[j]) - mean;
    var += d * d;
  }
  var /= double(D);
  const double inv_std = 1.0 / std::sqrt(var + model::kLayerNormEps);
  std::vector<double> normed(D);
  for (std::size_t j = 0; j < D; ++j)
    normed[j] = double(params.final_gain.val[j]) *
                    ((double(state[j]) - mean) * inv_std) +
                double(params.final_shift.val[j]);
  std::vector<double> scores(V, 0.0);
  for (std::size_t j = 0; j < D; ++j) {
    const double nj = normed[j];
    const T* urow = params.unembedding.val.data() + j * V;
    for (std::size_t v = 0; v < V; ++v) scores[v] += nj * double(urow[v]);
  }
  return scores;
}

inline std::vector<LensEntry> top_k(const std::vector<double>& scores,
                                    std::size_t k) {
  std::vector<std::uint32_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0u);
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;  // ties: lower token id first
  };
  k = std::min(k, order.size());
  std::partial_sort(order.begin(), order.begin() + k, order.end(), better);
  std::vector<LensEntry> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(LensEntry{order[i], scores[order[i]]});
  return out;
}

}  // namespace detail

template <typename T>
std::vector<LensEntry> lens_decode(std::span<const T> state,
                                   model::ModelParams<T>& params,
                                   std::size_t k) {
  if (state.size() != params.config.model_dim)
    throw ShapeError("lens_decode: state size " + std::to_string(state.size()) +
                     " vs model_dim " +
                     std::to_string(params.config.model_dim));
  return detail::top_k(detail::lens_scores(state.data(), params), k);
}

struct SiteDecode {
  std::uint32_t iteration;  // 1..L-1
  std::uint32_t position;   // 1..3
  std::vector<LensEntry> topk;
};

struct FoundAt {
  std::uint32_t iteration;
  std::uint32_t position;

  friend bool operator==(const FoundAt&, const FoundAt&) = default;
};

struct TraceRecord {
  kg::CompositionQuery query;
  std::vector<SiteDecode> sites;
  bool prediction_correct = false;
  bool bridge_found = false;
  bool degenerate = false;  // bridge equals head or tail
  std::optional<FoundAt> found_at;
};

inline const std::vector<std::uint32_t>& default_positions() {
  static const std::vector<std::uint32_t> kPositions = {3};
  return kPositions;
}

// Lens-decodes the intermediate residual states (iterations 1..L-1) of each
// query at the given positions. bridge_found means some site's top-1 token
// is the bridge entity's token; found_at is the first such site in
// (iteration, position) order.
template <typename T>
std::vector<TraceRecord> trace_queries(
    model::ModelParams<T>& params,
    const std::vector<kg::CompositionQuery>& queries,
    const encoding::Vocab& vocab, std::uint32_t num_iterations, std::size_t k,
    const std::vector<std::uint32_t>& position_set = default_positions()) {
  if (num_iterations < 2)
    throw ConfigError("tracing needs num_iterations >= 2");
  for (std::uint32_t p : position_set)
    if (p < 1 || p > model::kSeqLen)
      throw ConfigError("probe position " + std::to_string(p) +
                        " outside 1..3");
  std::vector<std::uint32_t> positions = position_set;
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()),
                  positions.end());

  std::vector<TraceRecord> records(queries.size());
  if (queries.empty()) return records;

  std::vector<std::uint32_t> tokens;
  tokens.reserve(queries.size() * model::kSeqLen);
  for (const kg::CompositionQuery& q : queries) {
    const encoding::EncodedExample ex = encoding::encode_composition(q, vocab);
    tokens.insert(tokens.end(), ex.input.begin(), ex.input.end());
  }
  model::ModelGraph<T> g = model::build_graph(params, tokens, num_iterations);
  const tensor::Tensor<T>& logits = g.tape.value(g.logits);

  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    TraceRecord& rec = records[qi];
    rec.query = queries[qi];
    rec.degenerate = rec.query.bridge == rec.query.head ||
                     rec.query.bridge == rec.query.tail;
    const std::uint32_t bridge_token = vocab.entity_token(rec.query.bridge);
    const std::uint32_t tail_token = vocab.entity_token(rec.query.tail);

    const T* row = logits.val.data() + qi * logits.cols;
    std::uint32_t best = 0;
    T best_score = row[0];
    for (std::uint32_t t = 1; t < vocab.num_entities; ++t)
      if (row[t] > best_score) {
        best_score = row[t];
        best = t;
      }
    rec.prediction_correct = best == tail_token;

    for (std::uint32_t it = 1; it < num_iterations; ++it) {
      const tensor::Tensor<T>& state = g.tape.value(g.states[it]);
      for (std::uint32_t p : positions) {
        const T* vec =
            state.val.data() + (qi * model::kSeqLen + (p - 1)) * state.cols;
        SiteDecode site;
        site.iteration = it;
        site.position = p;
        site.topk = detail::top_k(detail::lens_scores(vec, params), k);
        if (!site.topk.empty() && site.topk[0].token == bridge_token &&
            !rec.bridge_found) {
          rec.bridge_found = true;
          rec.found_at = FoundAt{it, p};
        }
        rec.sites.push_back(std::move(site));
      }
    }
  }
  return records;
}

template <typename T>
TraceRecord trace_query(
    model::ModelParams<T>& params, const kg::CompositionQuery& query,
    const encoding::Vocab& vocab, std::uint32_t num_iterations, std::size_t k,
    const std::vector<std::uint32_t>& position_set = default_positions()) {
  return trace_queries(params, std::vector<kg::CompositionQuery>{query}, vocab,
                       num_iterations, k, position_set)[0];
}

struct CircuitStats {
  std::size_t n_queries = 0;
  std::size_t n_correct = 0;
  std::size_t n_correct_with_bridge = 0;
  std::size_t n_bridge_found = 0;
  std::size_t n_degenerate_excluded = 0;
  double bridge_rate_overall = 0.0;
  double bridge_rate_among_correct = 0.0;

  friend bool operator==(const CircuitStats&, const CircuitStats&) = default;
};

// Degenerate queries (bridge = head or tail) are excluded unless
// include_degenerate is set; rates over zero denominators are 0.
inline CircuitStats circuit_stats(const std::vector<TraceRecord>& records,
                                  bool include_degenerate = false) {
  if (records.empty())
    throw EmptyInputError("circuit_stats: no trace records");
  CircuitStats s;
  for (const TraceRecord& r : records) {
    if (r.degenerate && !include_degenerate) {
      ++s.n_degenerate_excluded;
      continue;
    }
    ++s.n_queries;
    if (r.bridge_found) ++s.n_bridge_found;
    if (r.prediction_correct) {
      ++s.n_correct;
      if (r.bridge_found) ++s.n_correct_with_bridge;
    }
  }
  if (s.n_queries > 0)
    s.bridge_rate_overall = double(s.n_bridge_found) / double(s.n_queries);
  if (s.n_correct > 0)
    s.bridge_rate_among_correct =
        double(s.n_correct_with_bridge) / double(s.n_correct);
  return s;
}

// Shard format: one record per line, tab-separated:
// head r1 r2 bridge tail hop1 hop2 correct bridge_found degenerate
// found_iteration found_position site_top1s
// where found_* are "-" when absent and site_top1s is a comma-joined list of
// iteration:position:token entries.
inline void write_trace_records(const std::vector<TraceRecord>& records,
                                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const TraceRecord& r : records) {
    out << r.query.head << '\t' << r.query.r1 << '\t' << r.query.r2 << '\t'
        << r.query.bridge << '\t' << r.query.tail << '\t'
        << kg::to_string(r.query.hop1_label) << '\t'
        << kg::to_string(r.query.hop2_label) << '\t'
        << int(r.prediction_correct) << '\t' << int(r.bridge_found) << '\t'
        << int(r.degenerate) << '\t';
    if (r.found_at)
      out << r.found_at->iteration << '\t' << r.found_at->position << '\t';
    else
      out << "-\t-\t";
    for (std::size_t i = 0; i < r.sites.size(); ++i) {
      if (i) out << ',';
      out << r.sites[i].iteration << ':' << r.sites[i].position << ':'
          << (r.sites[i].topk.empty() ? 0 : r.sites[i].topk[0].token);
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// Reads back the fields needed for recounting stats; per-site top-1 lists
// are restored as single-entry sites without scores.
inline std::vector<TraceRecord> load_trace_records(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TraceRecord> records;
  std::string line;
  std::size_t line_no = 0;
  const auto parse_u32 = [&](const std::string& s) {
    std::uint32_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected integer, got '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find('\t', start);
      if (pos == std::string::npos) {
        f.push_back(line.substr(start));
        break;
      }
      f.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (f.size() != 13)
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected 13 fields, got " + std::to_string(f.size()));
    TraceRecord r;
    r.query.head = parse_u32(f[0]);
    r.query.r1 = parse_u32(f[1]);
    r.query.r2 = parse_u32(f[2]);
    r.query.bridge = parse_u32(f[3]);
    r.query.tail = parse_u32(f[4]);
    r.query.hop1_label = f[5] == "OOD" ? kg::SplitLabel::kOod
                                       : kg::SplitLabel::kId;
    r.query.hop2_label = f[6] == "OOD" ? kg::SplitLabel::kOod
                                       : kg::SplitLabel::kId;
    r.prediction_correct = f[7] == "1";
    r.bridge_found = f[8] == "1";
    r.degenerate = f[9] == "1";
    if (f[10] != "-") r.found_at = FoundAt{parse_u32(f[10]), parse_u32(f[11])};
    if (!f[12].empty()) {
      std::size_t s2 = 0;
      while (s2 <= f[12].size()) {
        std::size_t e2 = f[12].find(',', s2);
        if (e2 == std::string::npos) e2 = f[12].size();
        const std::string entry = f[12].substr(s2, e2 - s2);
        const std::size_t c1 = entry.find(':');
        const std::size_t c2 = entry.find(':', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
          throw ParseError(path.string() + ":" + std::to_string(line_no) +
                           ": malformed site entry '" + entry + "'");
        SiteDecode site;
        site.iteration = parse_u32(entry.substr(0, c1));
        site.position = parse_u32(entry.substr(c1 + 1, c2 - c1 - 1));
        site.topk = {LensEntry{parse_u32(entry.substr(c2 + 1)), 0.0}};
        r.sites.push_back(std::move(site));
        s2 = e2 + 1;
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace hoplab::probe
