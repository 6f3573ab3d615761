#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vaedef/tensor.hpp"

namespace vaedef::ad {

using NodeId = std::size_t;

enum class Op {
    kInput,
    kConst,
    kAdd,
    kSub,
    kMul,      // elementwise
    kMatMul,   // (m x k) * (k x n)
    kSigmoid,
    kTanh,
    kSoftplus,
    kExp,
    kLog,
    kSum,      // reduce to scalar
    kSquare,
    kBiasAdd,  // (m x n) + row vector (n)
    kClamp,    // componentwise clamp to [lo, hi]; gradient zero where clamped
};

// Reverse-mode tape. Building an op evaluates it eagerly and caches the
// value; forward() re-evaluates the whole tape after inputs change (the tape
// is reused across many gradient evaluations, e.g. inside HMC), and
// backward() accumulates exact gradients into every differentiable input.
class Graph {
  public:
    NodeId input(Tensor value, bool requires_grad = true, std::string name = {});
    NodeId constant(Tensor value, std::string name = {});

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId matmul(NodeId a, NodeId b);
    NodeId sigmoid(NodeId a);
    NodeId tanh(NodeId a);
    NodeId softplus(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId sum(NodeId a);
    NodeId square(NodeId a);
    NodeId bias_add(NodeId a, NodeId bias);
    NodeId clamp(NodeId a, double lo, double hi);

    // Convenience compositions (no new primitives).
    NodeId scale(NodeId a, double s);      // mul by constant tensor
    NodeId add_scalar(NodeId a, double s); // add constant tensor

    void set_input(NodeId id, const Tensor& value);
    void forward();                 // recompute all non-input nodes in order
    void backward(NodeId output, const Tensor& seed);
    void backward_scalar(NodeId output) { backward(output, Tensor::scalar(1.0)); }

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    const Tensor& grad(NodeId id) const;
    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Op op;
        NodeId a = 0, b = 0;
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        double lo = 0.0, hi = 0.0;  // clamp bounds
        std::string name;
    };

    NodeId emit(Op op, NodeId a, NodeId b, Tensor value, bool rg);
    void eval(Node& n);
    const Node& checked(NodeId id, const char* what) const;

    std::vector<Node> nodes_;
    bool backward_run_ = false;
};

// Central-difference gradient, the independent oracle for backward().
Tensor numerical_gradient(const std::function<double(const Tensor&)>& f,
                          const Tensor& point, double h = 1e-5);

// Sum of elementwise diagonal-Gaussian log densities:
//   sum_i [ -1/2 log 2pi - 1/2 log_var_i - (x_i - mean_i)^2 / (2 exp(log_var_i)) ]
double gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& log_var);

// Same quantity on the tape (used inside potentials and attack objectives).
NodeId gaussian_log_density_node(Graph& g, NodeId x, NodeId mean, NodeId log_var);

}  // namespace vaedef::ad
