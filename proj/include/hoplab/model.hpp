#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/encoding.hpp"
#include "hoplab/tensor/tape.hpp"
#include "hoplab/tensor/tensor.hpp"

namespace hoplab::model {

inline constexpr std::size_t kSeqLen = 3;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
  std::uint32_t vocab_size = 0;
  std::uint32_t model_dim = 64;
  std::uint32_t num_heads = 4;
  std::uint32_t mlp_dim = 256;
  std::uint32_t num_iterations = 6;  // L: shared-block applications
  std::uint64_t seed = 0;

  void validate() const {
    if (vocab_size == 0) throw ConfigError("vocab_size must be positive");
    if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0)
      throw ConfigError("model_dim " + std::to_string(model_dim) +
                        " must be divisible by num_heads " +
                        std::to_string(num_heads));
    if (mlp_dim == 0) throw ConfigError("mlp_dim must be positive");
    if (num_iterations < 2)
      throw ConfigError("num_iterations must be at least 2, got " +
                        std::to_string(num_iterations));
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One shared block's parameters plus embeddings and the output head. The
// block is applied num_iterations times; parameter count is independent of
// that count.
template <typename T>
struct ModelParams {
  ModelConfig config;

  tensor::Tensor<T> token_embedding;     // vocab x dim
  tensor::Tensor<T> position_embedding;  // 3 x dim
  tensor::Tensor<T> ln1_gain, ln1_shift;
  tensor::Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  tensor::Tensor<T> ln2_gain, ln2_shift;
  tensor::Tensor<T> w1, b1;  // dim x mlp
  tensor::Tensor<T> w2, b2;  // mlp x dim
  tensor::Tensor<T> final_gain, final_shift;
  tensor::Tensor<T> unembedding;  // dim x vocab

  // Fixed order; checkpoint payload and optimizer state follow it.
  std::vector<std::pair<std::string, tensor::Tensor<T>*>> named_params() {
    return {{"token_embedding", &token_embedding},
            {"position_embedding", &position_embedding},
            {"ln1_gain", &ln1_gain},
            {"ln1_shift", &ln1_shift},
            {"wq", &wq},
            {"bq", &bq},
            {"wk", &wk},
            {"bk", &bk},
            {"wv", &wv},
            {"bv", &bv},
            {"wo", &wo},
            {"bo", &bo},
            {"ln2_gain", &ln2_gain},
            {"ln2_shift", &ln2_shift},
            {"w1", &w1},
            {"b1", &b1},
            {"w2", &w2},
            {"b2", &b2},
            {"final_gain", &final_gain},
            {"final_shift", &final_shift},
            {"unembedding", &unembedding}};
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto& [name, t] : named_params()) n += t->size();
    return n;
  }

  // Weight decay applies to matrices only, not norms, biases, or embeddings.
  static bool decayed(const std::string& name) {
    return name == "wq" || name == "wk" || name == "wv" || name == "wo" ||
           name == "w1" || name == "w2" || name == "unembedding";
  }

  void zero_grads() {
    for (auto& [name, t] : named_params()) t->zero_grad();
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    ModelParams& ma = const_cast<ModelParams&>(a);
    ModelParams& mb = const_cast<ModelParams&>(b);
    if (a.config != b.config) return false;
    auto na = ma.named_params();
    auto nb = mb.named_params();
    for (std::size_t i = 0; i < na.size(); ++i)
      if (!(*na[i].second == *nb[i].second)) return false;
    return true;
  }
};

template <typename T>
ModelParams<T> init_model(const ModelConfig& config) {
  config.validate();
  ModelParams<T> p;
  p.config = config;
  const std::size_t D = config.model_dim;
  const std::size_t M = config.mlp_dim;
  const std::size_t V = config.vocab_size;

  p.token_embedding = tensor::Tensor<T>(V, D);
  p.position_embedding = tensor::Tensor<T>(kSeqLen, D);
  p.ln1_gain = tensor::Tensor<T>(1, D);
  p.ln1_shift = tensor::Tensor<T>(1, D);
  p.wq = tensor::Tensor<T>(D, D);
  p.bq = tensor::Tensor<T>(1, D);
  p.wk = tensor::Tensor<T>(D, D);
  p.bk = tensor::Tensor<T>(1, D);
  p.wv = tensor::Tensor<T>(D, D);
  p.bv = tensor::Tensor<T>(1, D);
  p.wo = tensor::Tensor<T>(D, D);
  p.bo = tensor::Tensor<T>(1, D);
  p.ln2_gain = tensor::Tensor<T>(1, D);
  p.ln2_shift = tensor::Tensor<T>(1, D);
  p.w1 = tensor::Tensor<T>(D, M);
  p.b1 = tensor::Tensor<T>(1, M);
  p.w2 = tensor::Tensor<T>(M, D);
  p.b2 = tensor::Tensor<T>(1, D);
  p.final_gain = tensor::Tensor<T>(1, D);
  p.final_shift = tensor::Tensor<T>(1, D);
  p.unembedding = tensor::Tensor<T>(D, V);

  Rng rng(derive_seed(config.seed, 0x696e6974));  // "init"
  constexpr T kStd = T(0.02);
  const auto gaussian = [&](tensor::Tensor<T>& t) {
    for (T& v : t.val) v = kStd * T(rng.normal());
  };
  const auto ones = [](tensor::Tensor<T>& t) {
    for (T& v : t.val) v = T(1);
  };
  gaussian(p.token_embedding);
  gaussian(p.position_embedding);
  gaussian(p.wq);
  gaussian(p.wk);
  gaussian(p.wv);
  gaussian(p.wo);
  gaussian(p.w1);
  gaussian(p.w2);
  gaussian(p.unembedding);
  ones(p.ln1_gain);
  ones(p.ln2_gain);
  ones(p.final_gain);
  return p;
}

// One forward pass over flattened (batch * 3) tokens. Keeps the tape plus
// the node ids needed for loss, probing, and the residual-stream snapshots
// x_0..x_L.
template <typename T>
struct ModelGraph {
  using Id = typename tensor::Tape<T>::Id;

  tensor::Tape<T> tape;
  std::size_t batch = 0;
  std::vector<Id> states;  // L+1 ids, each (batch*3) x dim
  Id logits = 0;           // batch x vocab, final position only
};

template <typename T>
ModelGraph<T> build_graph(ModelParams<T>& params,
                          const std::vector<std::uint32_t>& tokens,
                          std::uint32_t num_iterations) {
  if (tokens.empty() || tokens.size() % kSeqLen != 0)
    throw ShapeError("token stream length " + std::to_string(tokens.size()) +
                     " is not a multiple of " + std::to_string(kSeqLen));
  for (std::uint32_t t : tokens)
    if (t >= params.config.vocab_size)
      throw IndexError("token " + std::to_string(t) + " out of vocab range " +
                       std::to_string(params.config.vocab_size));
  ModelGraph<T> g;
  g.batch = tokens.size() / kSeqLen;
  auto& t = g.tape;

  std::vector<std::uint32_t> pos_ids(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) pos_ids[i] = i % kSeqLen;

  const auto le = t.leaf(&params.token_embedding);
  const auto lp = t.leaf(&params.position_embedding);
  auto x = t.add(t.gather_rows(le, tokens), t.gather_rows(lp, pos_ids));
  g.states.push_back(x);

  const auto lg1 = t.leaf(&params.ln1_gain), ls1 = t.leaf(&params.ln1_shift);
  const auto lg2 = t.leaf(&params.ln2_gain), ls2 = t.leaf(&params.ln2_shift);
  const auto lwq = t.leaf(&params.wq), lbq = t.leaf(&params.bq);
  const auto lwk = t.leaf(&params.wk), lbk = t.leaf(&params.bk);
  const auto lwv = t.leaf(&params.wv), lbv = t.leaf(&params.bv);
  const auto lwo = t.leaf(&params.wo), lbo = t.leaf(&params.bo);
  const auto lw1 = t.leaf(&params.w1), lb1 = t.leaf(&params.b1);
  const auto lw2 = t.leaf(&params.w2), lb2 = t.leaf(&params.b2);
  const T eps = T(kLayerNormEps);

  for (std::uint32_t i = 0; i < num_iterations; ++i) {
    const auto attn =
        t.causal_attention(t.layer_norm(x, lg1, ls1, eps),
                           params.config.num_heads, kSeqLen, lwq, lbq, lwk,
                           lbk, lwv, lbv, lwo, lbo);
    x = t.add(x, attn);
    const auto mlp = t.affine(
        t.gelu(t.affine(t.layer_norm(x, lg2, ls2, eps), lw1, lb1)), lw2, lb2);
    x = t.add(x, mlp);
    g.states.push_back(x);
  }

  std::vector<std::uint32_t> final_rows(g.batch);
  for (std::size_t b = 0; b < g.batch; ++b)
    final_rows[b] = std::uint32_t(b * kSeqLen + kSeqLen - 1);
  const auto fin = t.gather_rows(x, std::move(final_rows));
  const auto lfg = t.leaf(&params.final_gain);
  const auto lfs = t.leaf(&params.final_shift);
  g.logits = t.affine(t.layer_norm(fin, lfg, lfs, eps),
                      t.leaf(&params.unembedding));
  return g;
}

template <typename T>
ModelGraph<T> build_graph(ModelParams<T>& params,
                          const std::vector<std::uint32_t>& tokens) {
  return build_graph(params, tokens, params.config.num_iterations);
}

// Residual-stream snapshots of a single sequence: states[i] holds iteration
// i's 3 x dim block (i = 0 is the embedding output).
template <typename T>
struct HiddenTrace {
  std::size_t model_dim = 0;
  std::vector<std::vector<T>> states;  // L+1 entries of size 3*dim

  const T* position(std::size_t iteration, std::size_t pos) const {
    return states[iteration].data() + (pos - 1) * model_dim;  // pos in 1..3
  }
};

template <typename T>
struct TraceResult {
  std::vector<T> logits;  // vocab
  HiddenTrace<T> trace;
};

template <typename T>
TraceResult<T> forward_with_trace(ModelParams<T>& params,
                                  const std::vector<std::uint32_t>& tokens,
                                  std::uint32_t num_iterations) {
  if (tokens.size() != kSeqLen)
    throw ShapeError("forward_with_trace wants one sequence of 3 tokens, got " +
                     std::to_string(tokens.size()));
  ModelGraph<T> g = build_graph(params, tokens, num_iterations);
  TraceResult<T> r;
  const auto& lv = g.tape.value(g.logits).val;
  r.logits.assign(lv.begin(), lv.end());
  r.trace.model_dim = params.config.model_dim;
  r.trace.states.reserve(g.states.size());
  for (auto id : g.states) {
    const auto& sv = g.tape.value(id).val;
    r.trace.states.emplace_back(sv.begin(), sv.end());
  }
  return r;
}

// Argmax over entity-token logits only; relation and pad logits are ignored.
template <typename T>
std::uint32_t argmax_entity(std::span<const T> logits,
                            const encoding::Vocab& vocab) {
  std::uint32_t best = 0;
  T best_score = logits[0];
  for (std::uint32_t t = 1; t < vocab.num_entities; ++t)
    if (logits[t] > best_score) {
      best_score = logits[t];
      best = t;
    }
  return best;
}

template <typename T>
std::uint32_t predict_answer(ModelParams<T>& params,
                             const std::vector<std::uint32_t>& tokens,
                             std::uint32_t num_iterations,
                             const encoding::Vocab& vocab) {
  ModelGraph<T> g = build_graph(params, tokens, num_iterations);
  return argmax_entity<T>(g.tape.value(g.logits).val, vocab);
}

// Batched prediction: tokens is (n * 3) flattened; returns n entity tokens.
template <typename T>
std::vector<std::uint32_t> predict_batch(ModelParams<T>& params,
                                         const std::vector<std::uint32_t>& tokens,
                                         std::uint32_t num_iterations,
                                         const encoding::Vocab& vocab) {
  ModelGraph<T> g = build_graph(params, tokens, num_iterations);
  const tensor::Tensor<T>& lg = g.tape.value(g.logits);
  std::vector<std::uint32_t> out(g.batch);
  for (std::size_t b = 0; b < g.batch; ++b) {
    const T* row = lg.val.data() + b * lg.cols;
    std::uint32_t best = 0;
    T best_score = row[0];
    for (std::uint32_t t = 1; t < vocab.num_entities; ++t)
      if (row[t] > best_score) {
        best_score = row[t];
        best = t;
      }
    out[b] = best;
  }
  return out;
}

// Checkpoint: text manifest, a "---" separator line, then every tensor's
// values as little-endian 32-bit floats in named_params order. The checksum
// covers the binary payload.
static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

template <typename T>
void save_checkpoint(ModelParams<T>& params, std::uint64_t step,
                     const std::filesystem::path& path) {
  std::string payload;
  for (auto& [name, t] : params.named_params()) {
    for (const T& v : t->val) {
      const float f = float(v);
      payload.append(reinterpret_cast<const char*>(&f), sizeof(float));
    }
  }
  Fnv1a64 checksum;
  checksum.update(payload);

  std::ostringstream head;
  const ModelConfig& c = params.config;
  head << "hoplab-checkpoint-v1\n"
       << "vocab_size " << c.vocab_size << "\n"
       << "model_dim " << c.model_dim << "\n"
       << "num_heads " << c.num_heads << "\n"
       << "mlp_dim " << c.mlp_dim << "\n"
       << "num_iterations " << c.num_iterations << "\n"
       << "seed " << c.seed << "\n"
       << "step " << step << "\n"
       << "checksum " << to_hex(checksum.digest()) << "\n"
       << "---\n";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << head.str() << payload;
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
struct Checkpoint {
  ModelParams<T> params;
  std::uint64_t step = 0;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "hoplab-checkpoint-v1")
    throw ParseError(path.string() + ": not a checkpoint file");

  ModelConfig config;
  std::uint64_t step = 0;
  std::string stored_checksum;
  while (std::getline(in, line)) {
    if (line == "---") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "vocab_size")
      ls >> config.vocab_size;
    else if (key == "model_dim")
      ls >> config.model_dim;
    else if (key == "num_heads")
      ls >> config.num_heads;
    else if (key == "mlp_dim")
      ls >> config.mlp_dim;
    else if (key == "num_iterations")
      ls >> config.num_iterations;
    else if (key == "seed")
      ls >> config.seed;
    else if (key == "step")
      ls >> step;
    else if (key == "checksum")
      ls >> stored_checksum;
    else
      throw ParseError(path.string() + ": unknown manifest key '" + key + "'");
    if (ls.fail())
      throw ParseError(path.string() + ": malformed manifest line '" + line +
                       "'");
  }
  if (line != "---")
    throw ParseError(path.string() + ": missing manifest separator");
  config.validate();

  Checkpoint<T> ck;
  ck.params = init_model<T>(config);  // allocates shapes
  ck.step = step;

  std::string payload((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  std::size_t expected = 0;
  for (auto& [name, t] : ck.params.named_params()) expected += t->size();
  if (payload.size() != expected * sizeof(float))
    throw CorruptionError(path.string() + ": payload is " +
                          std::to_string(payload.size()) + " bytes, expected " +
                          std::to_string(expected * sizeof(float)));
  Fnv1a64 checksum;
  checksum.update(payload);
  if (to_hex(checksum.digest()) != stored_checksum)
    throw CorruptionError(path.string() + ": checksum mismatch");

  const char* p = payload.data();
  for (auto& [name, t] : ck.params.named_params()) {
    for (T& v : t->val) {
      float f;
      std::memcpy(&f, p, sizeof(float));
      v = T(f);
      p += sizeof(float);
    }
  }
  return ck;
}

}  // namespace hoplab::model
