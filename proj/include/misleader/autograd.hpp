#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "misleader/core.hpp"

namespace misleader::ag {

// Reverse-mode tape over Tensor values. Nodes are created by the op helpers
// below; backward(root) walks the graph once in reverse topological order.
// Gradient accumulation order is fixed by graph construction order, so
// repeated runs are bit-identical.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // pushes node.grad into parents

  void ensure_grad() {
    if (!grad_ready) {
      grad = Tensor(value.shape);
      grad_ready = true;
    }
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  double scalar() const { return node_->value.data.at(0); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value);  // requires_grad = true

// y = x . w^T           x: b x in, w: out x in  ->  b x out
Var matmul(const Var& x, const Var& w);
// y = x + bias per row  x: b x k, bias: k
Var add_row(const Var& x, const Var& bias);
Var relu(const Var& x);
Var tanh_op(const Var& x);
// stride-1 cross correlation with zero padding; k: oc x c x kh x kw
Var conv2d(const Var& x, const Var& k, int pad);
Var add_channel_bias(const Var& x, const Var& bias);
// 2x2 max pooling, stride 2, floor mode; ties go to the first cell scanned
Var maxpool2(const Var& x);
Var reshape(const Var& x, std::vector<std::size_t> shape);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var sum(const Var& x);  // scalar
// rows of softmax(x / temp), numerically stabilised by max subtraction
Var softmax_rows(const Var& x, double temp);
// mean over rows of -log softmax(logits)[label]
Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels);
// mean over rows of sum_j p log(p / max(q, 1e-12)), 0 log 0 := 0
Var kl_rows_mean(const Var& p_rows, const Var& q_rows);
// scalar sum_i w_i * x_i for a constant w; gradient w.r.t. x is w.
// The hook for injecting externally computed input gradients into a tape.
Var inner_const(const Var& x, Tensor w);

// Runs reverse-mode accumulation from a scalar root. Returns every node
// reached while walking the graph (used to detect unreachable parameters).
std::unordered_set<const Node*> backward(const Var& root);

// --- raw kernels shared with the no-graph forward paths ---------------------
namespace kern {
void matmul_xwT(const Tensor& x, const Tensor& w, Tensor& y);
void add_row_inplace(Tensor& y, const Tensor& bias);
void conv2d_fwd(const Tensor& x, const Tensor& k, int pad, Tensor& y);
// adjoint of conv2d_fwd w.r.t. its input (used by backward and by operator
// power iteration for spectral norms)
void conv2d_input_grad(const Tensor& gy, const Tensor& k, int pad, Tensor& gx);
void add_channel_bias_inplace(Tensor& y, const Tensor& bias);
void maxpool2_fwd(const Tensor& x, Tensor& y, std::vector<std::size_t>& argmax);
void relu_inplace(Tensor& x);
void tanh_inplace(Tensor& x);
void softmax_rows_inplace(Tensor& x, double temp);
std::vector<std::size_t> conv2d_out_shape(const std::vector<std::size_t>& x_shape,
                                          const std::vector<std::size_t>& k_shape, int pad);
}  // namespace kern

constexpr double kKlClamp = 1e-12;

}  // namespace misleader::ag
