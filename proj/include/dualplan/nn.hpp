#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dualplan/tensor.hpp"

namespace dualplan {

enum class Init { Xavier, Zero, Normal02 };

// Named parameters with deterministic creation order; the order drives both
// RNG consumption at init and checkpoint layout.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor create(const std::string& name, int rows, int cols, Init init);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const;

  void zero_grads();
  void freeze_prefix(const std::string& prefix, bool frozen);
  bool any_frozen() const;

  const std::vector<std::string>& order() const { return order_; }

  std::vector<std::uint8_t> serialize(std::uint64_t config_hash) const;
  void load_bytes(const std::vector<std::uint8_t>& bytes, std::uint64_t expected_hash);
  void save(const std::filesystem::path& path, std::uint64_t config_hash) const;
  void load(const std::filesystem::path& path, std::uint64_t expected_hash);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor> map_;
  std::mt19937_64 rng_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }

  // Applies one update to every unfrozen parameter, then zeroes its gradient.
  void step(ParamStore& store);

 private:
  struct State {
    std::vector<double> m, v;
    long t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, State> state_;
};

struct Linear {
  Tensor W;  // [in x out]
  Tensor b;  // [1 x out]
  Tensor operator()(const Tensor& x) const { return add_rowvec(matmul(x, W), b); }
};

Linear make_linear(ParamStore& store, const std::string& prefix, int in, int out,
                   Init w_init = Init::Xavier, Init b_init = Init::Zero);

struct MultiHeadAttention {
  int heads = 1;
  Linear wq, wk, wv, wo;
  Tensor forward(const Tensor& q_in, const Tensor& kv_in, const Tensor* mask = nullptr) const;
};

MultiHeadAttention make_mha(ParamStore& store, const std::string& prefix, int dim, int heads);

// Pre-norm transformer decoder block: self-attention over the query set,
// cross-attention into a context sequence, position-wise feed-forward.
struct DecoderBlock {
  MultiHeadAttention self_attn;
  MultiHeadAttention cross_attn;
  Linear ffn1, ffn2;
  Tensor forward(const Tensor& x, const Tensor& context, const Tensor* self_mask = nullptr,
                 const Tensor* cross_mask = nullptr) const;
};

DecoderBlock make_decoder_block(ParamStore& store, const std::string& prefix, int dim, int heads,
                                int ffn_mult = 2);

struct CheckpointInfo {
  std::uint32_t version = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, std::pair<int, int>>> params;  // name -> (rows, cols)
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace dualplan
