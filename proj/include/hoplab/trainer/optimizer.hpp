#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hoplab/common.hpp"
#include "hoplab/model.hpp"

namespace hoplab::trainer {

struct OptimConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint32_t warmup_steps = 2000;

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("betas must lie in [0, 1)");
    if (adam_eps <= 0) throw ConfigError("adam_eps must be positive");
  }
};

// Adaptive moments with decoupled weight decay. Decay is applied only to
// weight matrices (ModelParams::decayed); layer-norm affines, biases, and
// embeddings update without decay. Learning rate ramps linearly over
// warmup_steps, then stays constant.
template <typename T>
class AdamW {
 public:
  AdamW(model::ModelParams<T>& params, OptimConfig config)
      : config_(config) {
    config_.validate();
    for (auto& [name, t] : params.named_params()) {
      m_.emplace_back(t->size(), T(0));
      v_.emplace_back(t->size(), T(0));
    }
  }

  // step_index is 1-based: the first update is step 1.
  void step(model::ModelParams<T>& params, std::uint64_t step_index) {
    const double warm =
        config_.warmup_steps == 0
            ? 1.0
            : std::min(1.0, double(step_index) / double(config_.warmup_steps));
    const T lr = T(config_.learning_rate * warm);
    const T b1 = T(config_.beta1);
    const T b2 = T(config_.beta2);
    const T eps = T(config_.adam_eps);
    const T bc1 = T(1) - T(std::pow(config_.beta1, double(step_index)));
    const T bc2 = T(1) - T(std::pow(config_.beta2, double(step_index)));

    auto named = params.named_params();
    for (std::size_t pi = 0; pi < named.size(); ++pi) {
      auto& [name, t] = named[pi];
      const T wd = model::ModelParams<T>::decayed(name)
                       ? T(config_.weight_decay)
                       : T(0);
      T* m = m_[pi].data();
      T* v = v_[pi].data();
      for (std::size_t i = 0; i < t->size(); ++i) {
        const T g = t->grad[i];
        if (!std::isfinite(double(g)))
          throw NumericError("step " + std::to_string(step_index) +
                             ": non-finite gradient in parameter " + name);
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T mhat = m[i] / bc1;
        const T vhat = v[i] / bc2;
        t->val[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * t->val[i]);
      }
    }
  }

  // Moment buffers as little-endian 32-bit floats, checksummed; layout
  // follows named_params order, all m then all v per tensor.
  void save_state(const std::filesystem::path& path) const {
    std::string payload;
    const auto append = [&](const std::vector<T>& buf) {
      for (const T& x : buf) {
        const float f = float(x);
        payload.append(reinterpret_cast<const char*>(&f), sizeof(float));
      }
    };
    for (std::size_t i = 0; i < m_.size(); ++i) {
      append(m_[i]);
      append(v_[i]);
    }
    Fnv1a64 checksum;
    checksum.update(payload);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "hoplab-optstate-v1\n"
        << "tensors " << m_.size() << "\n"
        << "checksum " << to_hex(checksum.digest()) << "\n"
        << "---\n"
        << payload;
    if (!out) throw IoError("write failed for " + path.string());
  }

  void load_state(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "hoplab-optstate-v1")
      throw ParseError(path.string() + ": not an optimizer state file");
    std::size_t tensors = 0;
    std::string stored_checksum;
    while (std::getline(in, line)) {
      if (line == "---") break;
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key == "tensors")
        ls >> tensors;
      else if (key == "checksum")
        ls >> stored_checksum;
      else
        throw ParseError(path.string() + ": unknown key '" + key + "'");
      if (ls.fail())
        throw ParseError(path.string() + ": malformed line '" + line + "'");
    }
    if (line != "---")
      throw ParseError(path.string() + ": missing separator");
    if (tensors != m_.size())
      throw CorruptionError(path.string() + ": state holds " +
                            std::to_string(tensors) + " tensors, model has " +
                            std::to_string(m_.size()));
    std::string payload((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    std::size_t expected = 0;
    for (const auto& buf : m_) expected += 2 * buf.size();
    if (payload.size() != expected * sizeof(float))
      throw CorruptionError(path.string() + ": payload is " +
                            std::to_string(payload.size()) +
                            " bytes, expected " +
                            std::to_string(expected * sizeof(float)));
    Fnv1a64 checksum;
    checksum.update(payload);
    if (to_hex(checksum.digest()) != stored_checksum)
      throw CorruptionError(path.string() + ": checksum mismatch");
    const char* p = payload.data();
    const auto read_into = [&](std::vector<T>& buf) {
      for (T& x : buf) {
        float f;
        std::memcpy(&f, p, sizeof(float));
        x = T(f);
        p += sizeof(float);
      }
    };
    for (std::size_t i = 0; i < m_.size(); ++i) {
      read_into(m_[i]);
      read_into(v_[i]);
    }
  }

 private:
  OptimConfig config_;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace hoplab::trainer
