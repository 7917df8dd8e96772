#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "dualplan/errors.hpp"

namespace dualplan {

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

struct TensorNode {
  int rows = 0;
  int cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool frozen = false;  // set on parameters; any gradient write then throws
  std::string name;     // non-empty for parameters
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad();
  void accumulate(const std::vector<double>& g);
};

// Lightweight value handle onto a reverse-mode graph node. Ops record the
// backward closure only when some input requires a gradient.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor zeros(int rows, int cols, bool requires_grad = false);
  static Tensor full(int rows, int cols, double v);
  static Tensor from_data(int rows, int cols, std::vector<double> data, bool requires_grad = false);
  static Tensor identity(int n);

  bool valid() const { return node_ != nullptr; }
  int rows() const { return node_->rows; }
  int cols() const { return node_->cols; }
  std::size_t numel() const { return node_->numel(); }
  double at(int r, int c) const { return node_->value[static_cast<std::size_t>(r) * node_->cols + c]; }
  double& mut(int r, int c) { return node_->value[static_cast<std::size_t>(r) * node_->cols + c]; }
  double scalar() const;
  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& mutable_data() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  NodePtr node() const { return node_; }

  Tensor detach() const;

 private:
  NodePtr node_;
};

// Dense kernels (also used by op backward passes).
void mm_nn(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
           int m, int k, int n);  // c += a(m,k) * b(k,n)
void mm_nt(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
           int m, int k, int n);  // c += a(m,k) * b(n,k)^T
void mm_tn(std::vector<double>& c, const std::vector<double>& a, const std::vector<double>& b,
           int m, int k, int n);  // c += a(k,m)^T * b(k,n)

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_rowvec(const Tensor& a, const Tensor& row);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-12);
Tensor gelu(const Tensor& a);
// Additive attention mask; -inf entries are allowed and zero out weights exactly.
Tensor add_mask(const Tensor& scores, const Tensor& mask);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor mean_rows(const Tensor& a);  // [m x n] -> [1 x n]
Tensor l1_loss(const Tensor& pred, const Tensor& target);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

// Reverse pass from a scalar root; accumulates into .grad of reachable nodes.
void backward(const Tensor& root);

// Disables graph recording on the current thread for its lifetime. Forward
// values are unchanged; only gradient bookkeeping is skipped.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool autograd_enabled();

// Deterministic init helpers.
Tensor xavier_uniform(int rows, int cols, std::mt19937_64& rng);
Tensor randn(int rows, int cols, std::mt19937_64& rng, double stddev = 1.0);

}  // namespace dualplan
