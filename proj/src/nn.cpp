#include "dualplan/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace dualplan {

namespace {

constexpr const char* kModule = "tensor_autograd";
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[4] = {'D', 'P', 'C', 'K'};

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw FormatError(kModule, "checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

Tensor ParamStore::create(const std::string& name, int rows, int cols, Init init) {
  if (map_.count(name)) throw ShapeError(kModule, "duplicate parameter name '" + name + "'");
  Tensor t;
  switch (init) {
    case Init::Xavier: t = xavier_uniform(rows, cols, rng_); break;
    case Init::Zero: t = Tensor::zeros(rows, cols); break;
    case Init::Normal02: t = randn(rows, cols, rng_, 0.02); break;
  }
  t.set_requires_grad(true);
  t.node()->name = name;
  order_.push_back(name);
  map_.emplace(name, t);
  return t;
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw ShapeError(kModule, "unknown parameter '" + name + "'");
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return map_.count(name) != 0; }

void ParamStore::zero_grads() {
  for (const auto& name : order_) {
    auto& node = *map_.at(name).node();
    if (node.frozen) continue;
    node.grad.assign(node.value.size(), 0.0);
  }
}

void ParamStore::freeze_prefix(const std::string& prefix, bool frozen) {
  for (const auto& name : order_) {
    if (name.rfind(prefix, 0) != 0) continue;
    auto& node = *map_.at(name).node();
    node.frozen = frozen;
    node.requires_grad = !frozen;
    if (frozen) node.grad.clear();
  }
}

bool ParamStore::any_frozen() const {
  for (const auto& name : order_)
    if (map_.at(name).node()->frozen) return true;
  return false;
}

std::vector<std::uint8_t> ParamStore::serialize(std::uint64_t config_hash) const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put(out, kCheckpointVersion);
  put(out, config_hash);
  put(out, static_cast<std::uint32_t>(order_.size()));
  for (const auto& name : order_) {
    const auto& t = map_.at(name);
    put(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put(out, static_cast<std::uint32_t>(t.rows()));
    put(out, static_cast<std::uint32_t>(t.cols()));
    for (double v : t.data()) put(out, v);
  }
  return out;
}

void ParamStore::load_bytes(const std::vector<std::uint8_t>& bytes, std::uint64_t expected_hash) {
  std::size_t off = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(kModule, "not a checkpoint file");
  off = 4;
  const auto version = take<std::uint32_t>(bytes, off);
  if (version != kCheckpointVersion)
    throw FormatError(kModule, "checkpoint version mismatch: expected " +
                                   std::to_string(kCheckpointVersion) + ", got " + std::to_string(version));
  const auto hash = take<std::uint64_t>(bytes, off);
  if (expected_hash != 0 && hash != expected_hash)
    throw FormatError(kModule, "checkpoint config hash mismatch");
  const auto count = take<std::uint32_t>(bytes, off);
  if (count != order_.size())
    throw FormatError(kModule, "checkpoint parameter count mismatch: expected " +
                                   std::to_string(order_.size()) + ", got " + std::to_string(count));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(bytes, off);
    if (off + name_len > bytes.size()) throw FormatError(kModule, "checkpoint truncated");
    std::string name(reinterpret_cast<const char*>(bytes.data() + off), name_len);
    off += name_len;
    const auto rows = take<std::uint32_t>(bytes, off);
    const auto cols = take<std::uint32_t>(bytes, off);
    auto it = map_.find(name);
    if (it == map_.end()) throw FormatError(kModule, "checkpoint has unknown parameter '" + name + "'");
    Tensor& t = it->second;
    if (static_cast<int>(rows) != t.rows() || static_cast<int>(cols) != t.cols())
      throw FormatError(kModule, "checkpoint shape mismatch for '" + name + "'");
    for (auto& v : t.mutable_data()) v = take<double>(bytes, off);
  }
  if (off != bytes.size()) throw FormatError(kModule, "checkpoint has trailing bytes");
}

void ParamStore::save(const std::filesystem::path& path, std::uint64_t config_hash) const {
  const auto bytes = serialize(config_hash);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(kModule, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void ParamStore::load(const std::filesystem::path& path, std::uint64_t expected_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(kModule, "cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  load_bytes(bytes, expected_hash);
}

void Adam::step(ParamStore& store) {
  for (const auto& name : store.order()) {
    Tensor t = store.get(name);
    auto& node = *t.node();
    if (node.frozen) continue;
    if (node.grad.size() != node.value.size())
      throw OptimizerError(kModule, "missing gradient for parameter '" + name + "'");
    auto& st = state_[name];
    if (st.m.empty()) {
      st.m.assign(node.value.size(), 0.0);
      st.v.assign(node.value.size(), 0.0);
    }
    ++st.t;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < node.value.size(); ++i) {
      const double g = node.grad[i];
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = st.m[i] / bc1;
      const double vhat = st.v[i] / bc2;
      node.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      node.grad[i] = 0.0;
    }
  }
}

Linear make_linear(ParamStore& store, const std::string& prefix, int in, int out, Init w_init,
                   Init b_init) {
  return {store.create(prefix + ".W", in, out, w_init), store.create(prefix + ".b", 1, out, b_init)};
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& kv_in, const Tensor* mask) const {
  const int dim = wq.W.cols();
  if (dim % heads != 0) throw ShapeError(kModule, "model dim not divisible by heads");
  const int dh = dim / heads;
  const Tensor q = wq(q_in), k = wk(kv_in), v = wv(kv_in);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask != nullptr) scores = add_mask(scores, *mask);
    ctx.push_back(matmul(softmax_rows(scores), vh));
  }
  return wo(heads == 1 ? ctx[0] : concat_cols(ctx));
}

MultiHeadAttention make_mha(ParamStore& store, const std::string& prefix, int dim, int heads) {
  MultiHeadAttention mha;
  mha.heads = heads;
  mha.wq = make_linear(store, prefix + ".q", dim, dim);
  mha.wk = make_linear(store, prefix + ".k", dim, dim);
  mha.wv = make_linear(store, prefix + ".v", dim, dim);
  mha.wo = make_linear(store, prefix + ".o", dim, dim);
  return mha;
}

Tensor DecoderBlock::forward(const Tensor& x_in, const Tensor& context, const Tensor* self_mask,
                             const Tensor* cross_mask) const {
  Tensor x = x_in;
  {
    const Tensor h = layer_norm_rows(x);
    x = add(x, self_attn.forward(h, h, self_mask));
  }
  x = add(x, cross_attn.forward(layer_norm_rows(x), context, cross_mask));
  x = add(x, ffn2(gelu(ffn1(layer_norm_rows(x)))));
  return x;
}

DecoderBlock make_decoder_block(ParamStore& store, const std::string& prefix, int dim, int heads,
                                int ffn_mult) {
  DecoderBlock blk;
  blk.self_attn = make_mha(store, prefix + ".self", dim, heads);
  blk.cross_attn = make_mha(store, prefix + ".cross", dim, heads);
  blk.ffn1 = make_linear(store, prefix + ".ffn1", dim, dim * ffn_mult);
  blk.ffn2 = make_linear(store, prefix + ".ffn2", dim * ffn_mult, dim);
  return blk;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(kModule, "cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError(kModule, "not a checkpoint file");
  std::size_t off = 4;
  CheckpointInfo info;
  info.version = take<std::uint32_t>(bytes, off);
  info.config_hash = take<std::uint64_t>(bytes, off);
  const auto count = take<std::uint32_t>(bytes, off);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = take<std::uint32_t>(bytes, off);
    if (off + name_len > bytes.size()) throw FormatError(kModule, "checkpoint truncated");
    std::string name(reinterpret_cast<const char*>(bytes.data() + off), name_len);
    off += name_len;
    const auto rows = take<std::uint32_t>(bytes, off);
    const auto cols = take<std::uint32_t>(bytes, off);
    if (off + static_cast<std::size_t>(rows) * cols * sizeof(double) > bytes.size())
      throw FormatError(kModule, "checkpoint truncated");
    off += static_cast<std::size_t>(rows) * cols * sizeof(double);
    info.params.emplace_back(std::move(name), std::make_pair<int, int>(rows, cols));
  }
  return info;
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cli", "cannot open '" + path.string() + "' for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (f) {
    f.read(buf, sizeof(buf));
    const std::streamsize got = f.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over the pair; decorrelates per-scenario / per-restart streams.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace dualplan
