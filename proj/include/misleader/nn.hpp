#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "misleader/autograd.hpp"
#include "misleader/core.hpp"
#include "misleader/dataset.hpp"

namespace misleader {

enum class ArchKind { mlp, cnn_small, generator_mlp };
enum class Activation { relu, tanh };

std::string to_string(ArchKind k);
std::string to_string(Activation a);
ArchKind arch_kind_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

/// Architecture descriptor. For mlp/generator_mlp, layer_sizes are the
/// hidden widths followed by the output width. cnn_small is a fixed stack
/// (conv 3x3x8 / relu / pool2 / conv 3x3x16 / relu / pool2 / flatten /
/// linear, 'same' padding) and layer_sizes holds just the output width.
/// generator_mlp ends in a tanh head.
struct ArchitectureSpec {
  ArchKind kind = ArchKind::mlp;
  std::vector<std::size_t> layer_sizes;
  Activation activation = Activation::relu;
  std::vector<std::size_t> input_shape;
  std::size_t output_dim = 0;

  void validate() const;
  std::size_t input_dim() const { return Tensor::numel(input_shape); }
  std::string id() const;  // compact identifier, e.g. "mlp[64,64,4]-relu"
  bool operator==(const ArchitectureSpec&) const = default;
};

using ParamMap = std::map<std::string, Tensor>;  // name order is the canonical order

struct Model {
  ArchitectureSpec spec;
  ParamMap params;
  std::uint64_t rng_seed = 0;
};

/// Kaiming-normal (fan-in, gain matched to activation) weights, zero biases.
Model build(const ArchitectureSpec& spec, std::uint64_t seed);

/// Logits for a batch shaped b x input_shape. No graph is recorded.
Tensor forward(const Model& model, const Tensor& batch);

/// softmax_1 of forward
Tensor forward_probs(const Model& model, const Tensor& batch);

/// Parameter leaves for one differentiable pass.
struct ParamVars {
  std::map<std::string, ag::Var> vars;
};
ParamVars make_param_vars(const Model& model);

/// Parameters as tape constants: forward_graph over these lets gradients
/// reach the batch leaf while the model stays frozen.
ParamVars make_param_constants(const Model& model);

/// Same computation as forward(), but recorded on the tape through the given
/// parameter leaves. Pass a leaf as `batch_var` instead to also get input
/// gradients (used by the data-free attacker).
ag::Var forward_graph(const ArchitectureSpec& spec, const ParamVars& pv,
                      const ag::Var& batch_var);
ag::Var forward_graph(const Model& model, const ParamVars& pv, const Tensor& batch);

/// Reverse-mode gradients of a scalar loss for every model parameter.
/// Throws GraphError when the loss does not depend on any of them.
ParamMap gradients(const ParamVars& pv, const ag::Var& scalar_loss);

struct OptimizerState {
  ParamMap momentum_buffers;
  double base_lr = 0.0;
  double momentum = 0.0;
  std::size_t step = 0;
  std::size_t total_steps = 0;
  double min_lr = 0.0;
};

OptimizerState make_optimizer(const Model& model, double base_lr, double momentum,
                              std::size_t total_steps, double min_lr = 0.0);

/// Cosine-annealed rate at the state's current step:
/// min_lr + (base_lr - min_lr) * (1 + cos(pi * t / total_steps)) / 2.
double cosine_lr(const OptimizerState& state);

/// v <- momentum * v + g; theta <- theta - lr(t) * v; t <- t + 1.
std::pair<Model, OptimizerState> sgd_step(Model model, const ParamMap& grads,
                                          OptimizerState state);
void sgd_step_inplace(Model& model, const ParamMap& grads, OptimizerState& state);

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_global_norm(ParamMap& grads, double max_norm);

/// Product of per-layer spectral norms (power iteration); relu/tanh/maxpool
/// contribute 1. A certified upper bound on the end-to-end Euclidean
/// Lipschitz constant. power_iters below 50 is raised to 50.
double lipschitz_upper_bound(const Model& model, std::size_t power_iters);

/// Fraction of argmax-correct predictions; ties resolve to the smallest index.
double accuracy(const Model& model, const Dataset& data);

int argmax_row(const double* row, std::size_t k);

}  // namespace misleader
