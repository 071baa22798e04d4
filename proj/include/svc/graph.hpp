#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "svc/params.hpp"
#include "svc/tensor.hpp"

namespace svc {

enum class AttnMask {
  Causal,       // key j visible to query i iff j <= i
  Full,         // all keys visible
  BlockCausal,  // causal within fixed-size blocks, no cross-block attention
};

// Eager tape-based reverse-mode autodiff over Tensors.
//
// Values are computed at op-creation time; backward() replays the tape in
// reverse. A Graph is built per forward pass and thrown away. Parameter
// gradients accumulate into the flat buffer passed at construction; pass
// nullptr for inference-only passes (backward closures are then skipped
// entirely).
class Graph {
 public:
  explicit Graph(const ParamStore* store, std::vector<Real>* grad_out = nullptr)
      : store_(store), grad_out_(grad_out) {}

  int constant(Tensor t);
  // Leaf bound to a named parameter; value snapshot is cached per graph.
  int param(const std::string& name);
  // Row lookup straight from the parameter store: cheaper than param +
  // gather_rows for large embedding tables (no full-table copy, and backward
  // scatters only the touched rows).
  int gather_param_rows(const std::string& name, std::vector<int> idx);

  int add(int a, int b);
  int scale(int a, Real s);
  int mul(int a, int b);
  int silu_op(int a);
  int matmul(int a, int b);     // (m,k) x (k,n)
  int matmul_nt(int a, int b);  // (m,k) x (n,k)^T
  int rmsnorm(int a, int gain);
  int softmax_rows(int a);
  int attn_softmax_rows(int a, AttnMask mode, int block = 0);
  int gather_rows(int a, std::vector<int> idx);
  int slice_cols(int a, int c0, int c1);
  int concat_cols(const std::vector<int>& parts);
  int concat_rows(const std::vector<int>& parts);
  int mean_pool2_rows(int a);
  // Rows listed in idx are replaced by the (1,n) row vector node.
  int replace_rows(int a, std::vector<int> idx, int rowvec);

  // Scalar (1,1) nodes.
  int ce_mean(int logits, std::vector<int> targets);  // target -1 = ignored row
  int mse_mean(int a, Tensor target);
  int add_scalars(const std::vector<int>& terms);

  const Tensor& value(int id) const { return nodes_[id].val; }
  Real scalar(int id) const { return nodes_[id].val.v[0]; }
  size_t num_nodes() const { return nodes_.size(); }

  void backward(int scalar_node);

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Graph&)> back;
  };

  int push(Tensor val, bool needs_grad, std::function<void(Graph&)> back);
  bool track() const { return grad_out_ != nullptr; }
  Tensor& grad(int id) { return nodes_[id].grad; }

  const ParamStore* store_;
  std::vector<Real>* grad_out_;
  std::vector<Node> nodes_;
  std::map<std::string, int> param_cache_;
};

}  // namespace svc
