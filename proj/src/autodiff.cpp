#include "vaedef/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vaedef/kernels.hpp"

namespace vaedef::ad {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

double softplus1(double x) {
    // log(1 + e^x), overflow safe
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid1(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

NodeId Graph::input(Tensor value, bool requires_grad, std::string name) {
    Node n;
    n.op = Op::kInput;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

NodeId Graph::constant(Tensor value, std::string name) {
    return input(std::move(value), false, std::move(name));
}

NodeId Graph::emit(Op op, NodeId a, NodeId b, Tensor value, bool rg) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = std::move(value);
    n.requires_grad = rg;
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
}

const Graph::Node& Graph::checked(NodeId id, const char* what) const {
    require(id < nodes_.size(), std::string("invalid node id in ") + what);
    return nodes_[id];
}

NodeId Graph::add(NodeId a, NodeId b) {
    auto& na = checked(a, "add");
    auto& nb = checked(b, "add");
    require(na.value.same_shape(nb.value),
            "add: shape mismatch " + na.value.shape_str() + " vs " + nb.value.shape_str());
    Tensor out(na.value.shape());
    kernels::active().add(na.value.data(), nb.value.data(), out.data(), out.size());
    return emit(Op::kAdd, a, b, std::move(out), na.requires_grad || nb.requires_grad);
}

NodeId Graph::sub(NodeId a, NodeId b) {
    auto& na = checked(a, "sub");
    auto& nb = checked(b, "sub");
    require(na.value.same_shape(nb.value),
            "sub: shape mismatch " + na.value.shape_str() + " vs " + nb.value.shape_str());
    Tensor out(na.value.shape());
    kernels::active().sub(na.value.data(), nb.value.data(), out.data(), out.size());
    return emit(Op::kSub, a, b, std::move(out), na.requires_grad || nb.requires_grad);
}

NodeId Graph::mul(NodeId a, NodeId b) {
    auto& na = checked(a, "mul");
    auto& nb = checked(b, "mul");
    require(na.value.same_shape(nb.value),
            "mul: shape mismatch " + na.value.shape_str() + " vs " + nb.value.shape_str());
    Tensor out(na.value.shape());
    kernels::active().mul(na.value.data(), nb.value.data(), out.data(), out.size());
    return emit(Op::kMul, a, b, std::move(out), na.requires_grad || nb.requires_grad);
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    auto& na = checked(a, "matmul");
    auto& nb = checked(b, "matmul");
    require(na.value.rank() == 2 && nb.value.rank() == 2 &&
                na.value.dim(1) == nb.value.dim(0),
            "matmul: incompatible shapes " + na.value.shape_str() + " * " +
                nb.value.shape_str());
    Tensor out({na.value.dim(0), nb.value.dim(1)});
    kernels::active().matmul_nn(na.value.data(), nb.value.data(), out.data(),
                                na.value.dim(0), na.value.dim(1), nb.value.dim(1));
    return emit(Op::kMatMul, a, b, std::move(out), na.requires_grad || nb.requires_grad);
}

NodeId Graph::sigmoid(NodeId a) {
    auto& na = checked(a, "sigmoid");
    Tensor out(na.value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid1(na.value[i]);
    return emit(Op::kSigmoid, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::tanh(NodeId a) {
    auto& na = checked(a, "tanh");
    Tensor out(na.value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(na.value[i]);
    return emit(Op::kTanh, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::softplus(NodeId a) {
    auto& na = checked(a, "softplus");
    Tensor out(na.value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus1(na.value[i]);
    return emit(Op::kSoftplus, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::exp(NodeId a) {
    auto& na = checked(a, "exp");
    Tensor out(na.value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(na.value[i]);
    return emit(Op::kExp, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::log(NodeId a) {
    auto& na = checked(a, "log");
    Tensor out(na.value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(na.value[i]);
    return emit(Op::kLog, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::sum(NodeId a) {
    auto& na = checked(a, "sum");
    Tensor out = Tensor::scalar(kernels::active().sum(na.value.data(), na.value.size()));
    return emit(Op::kSum, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::square(NodeId a) {
    auto& na = checked(a, "square");
    Tensor out(na.value.shape());
    kernels::active().mul(na.value.data(), na.value.data(), out.data(), out.size());
    return emit(Op::kSquare, a, a, std::move(out), na.requires_grad);
}

NodeId Graph::bias_add(NodeId a, NodeId bias) {
    auto& na = checked(a, "bias_add");
    auto& nb = checked(bias, "bias_add");
    require(na.value.rank() == 2 && nb.value.rank() == 1 &&
                na.value.dim(1) == nb.value.dim(0),
            "bias_add: incompatible shapes " + na.value.shape_str() + " + " +
                nb.value.shape_str());
    Tensor out(na.value.shape());
    const std::size_t rows = na.value.dim(0), cols = na.value.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
        kernels::active().add(na.value.data() + r * cols, nb.value.data(),
                              out.data() + r * cols, cols);
    return emit(Op::kBiasAdd, a, bias, std::move(out), na.requires_grad || nb.requires_grad);
}

NodeId Graph::clamp(NodeId a, double lo, double hi) {
    auto& na = checked(a, "clamp");
    Tensor out(na.value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double v = na.value[i];
        out[i] = v < lo ? lo : (v > hi ? hi : v);
    }
    NodeId id = emit(Op::kClamp, a, a, std::move(out), na.requires_grad);
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    return id;
}

NodeId Graph::scale(NodeId a, double s) {
    return mul(a, constant(Tensor::full(nodes_[a].value.shape(), s)));
}

NodeId Graph::add_scalar(NodeId a, double s) {
    return add(a, constant(Tensor::full(nodes_[a].value.shape(), s)));
}

void Graph::set_input(NodeId id, const Tensor& value) {
    auto& n = nodes_.at(id);
    require(n.op == Op::kInput || n.op == Op::kConst,
            "set_input on non-input node");
    require(n.value.same_shape(value), "set_input: shape mismatch for node '" +
                                           n.name + "' " + n.value.shape_str() +
                                           " vs " + value.shape_str());
    n.value = value;
}

void Graph::eval(Node& n) {
    const auto& k = kernels::active();
    const Tensor& a = nodes_[n.a].value;
    const Tensor& b = nodes_[n.b].value;
    switch (n.op) {
        case Op::kInput:
        case Op::kConst:
            return;
        case Op::kAdd: k.add(a.data(), b.data(), n.value.data(), a.size()); return;
        case Op::kSub: k.sub(a.data(), b.data(), n.value.data(), a.size()); return;
        case Op::kMul: k.mul(a.data(), b.data(), n.value.data(), a.size()); return;
        case Op::kMatMul:
            k.matmul_nn(a.data(), b.data(), n.value.data(), a.dim(0), a.dim(1), b.dim(1));
            return;
        case Op::kSigmoid:
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = sigmoid1(a[i]);
            return;
        case Op::kTanh:
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::tanh(a[i]);
            return;
        case Op::kSoftplus:
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = softplus1(a[i]);
            return;
        case Op::kExp:
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::exp(a[i]);
            return;
        case Op::kLog:
            for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = std::log(a[i]);
            return;
        case Op::kSum:
            n.value[0] = k.sum(a.data(), a.size());
            return;
        case Op::kSquare: k.mul(a.data(), a.data(), n.value.data(), a.size()); return;
        case Op::kBiasAdd: {
            const std::size_t rows = a.dim(0), cols = a.dim(1);
            for (std::size_t r = 0; r < rows; ++r)
                k.add(a.data() + r * cols, b.data(), n.value.data() + r * cols, cols);
            return;
        }
        case Op::kClamp:
            for (std::size_t i = 0; i < a.size(); ++i) {
                double v = a[i];
                n.value[i] = v < n.lo ? n.lo : (v > n.hi ? n.hi : v);
            }
            return;
    }
}

void Graph::forward() {
    for (auto& n : nodes_) eval(n);
    backward_run_ = false;
}

void Graph::backward(NodeId output, const Tensor& seed) {
    auto& out = nodes_.at(output);
    require(out.value.same_shape(seed), "backward: seed shape " + seed.shape_str() +
                                            " does not match output " +
                                            out.value.shape_str());
    const auto& k = kernels::active();
    for (auto& n : nodes_) {
        if (n.grad.size() != n.value.size())
            n.grad = Tensor(n.value.shape());
        else
            for (auto& g : n.grad.vec()) g = 0.0;
    }
    out.grad = seed;
    for (std::size_t idx = nodes_.size(); idx-- > 0;) {
        Node& n = nodes_[idx];
        if (!n.requires_grad || n.op == Op::kInput || n.op == Op::kConst) continue;
        const Tensor& g = n.grad;
        Node& na = nodes_[n.a];
        Node& nb = nodes_[n.b];
        switch (n.op) {
            case Op::kAdd:
                if (na.requires_grad) k.axpy(1.0, g.data(), na.grad.data(), g.size());
                if (nb.requires_grad) k.axpy(1.0, g.data(), nb.grad.data(), g.size());
                break;
            case Op::kSub:
                if (na.requires_grad) k.axpy(1.0, g.data(), na.grad.data(), g.size());
                if (nb.requires_grad) k.axpy(-1.0, g.data(), nb.grad.data(), g.size());
                break;
            case Op::kMul:
                if (na.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        na.grad[i] += g[i] * nb.value[i];
                if (nb.requires_grad)
                    for (std::size_t i = 0; i < g.size(); ++i)
                        nb.grad[i] += g[i] * na.value[i];
                break;
            case Op::kMatMul: {
                const std::size_t m = na.value.dim(0), kk = na.value.dim(1),
                                  nn = nb.value.dim(1);
                if (na.requires_grad) {
                    Tensor tmp({m, kk});
                    k.matmul_nt(g.data(), nb.value.data(), tmp.data(), m, nn, kk);
                    k.axpy(1.0, tmp.data(), na.grad.data(), tmp.size());
                }
                if (nb.requires_grad) {
                    Tensor tmp({kk, nn});
                    k.matmul_tn(na.value.data(), g.data(), tmp.data(), kk, m, nn);
                    k.axpy(1.0, tmp.data(), nb.grad.data(), tmp.size());
                }
                break;
            }
            case Op::kSigmoid:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
                break;
            case Op::kTanh:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
                break;
            case Op::kSoftplus:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += g[i] * sigmoid1(na.value[i]);
                break;
            case Op::kExp:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += g[i] * n.value[i];
                break;
            case Op::kLog:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += g[i] / na.value[i];
                break;
            case Op::kSum:
                for (std::size_t i = 0; i < na.grad.size(); ++i) na.grad[i] += g[0];
                break;
            case Op::kSquare:
                for (std::size_t i = 0; i < g.size(); ++i)
                    na.grad[i] += 2.0 * g[i] * na.value[i];
                break;
            case Op::kBiasAdd: {
                const std::size_t rows = n.value.dim(0), cols = n.value.dim(1);
                if (na.requires_grad) k.axpy(1.0, g.data(), na.grad.data(), g.size());
                if (nb.requires_grad)
                    for (std::size_t r = 0; r < rows; ++r)
                        k.axpy(1.0, g.data() + r * cols, nb.grad.data(), cols);
                break;
            }
            case Op::kClamp:
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (na.value[i] >= n.lo && na.value[i] <= n.hi) na.grad[i] += g[i];
                break;
            default:
                break;
        }
    }
    backward_run_ = true;
}

const Tensor& Graph::grad(NodeId id) const {
    require(backward_run_, "gradient requested before backward()");
    return checked(id, "grad").grad;
}

Tensor numerical_gradient(const std::function<double(const Tensor&)>& f,
                          const Tensor& point, double h) {
    if (h <= 0) throw std::invalid_argument("numerical_gradient: h must be > 0");
    Tensor g(point.shape());
    Tensor x = point;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
        if (!std::isfinite(g[i]))
            throw std::runtime_error("numerical_gradient: non-finite value at component " +
                                     std::to_string(i));
    }
    return g;
}

double gaussian_log_density(const Tensor& x, const Tensor& mean, const Tensor& log_var) {
    if (!x.same_shape(mean) || !x.same_shape(log_var))
        throw std::invalid_argument("gaussian_log_density: shape mismatch");
    constexpr double half_log_2pi = 0.9189385332046727;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean[i];
        s += -half_log_2pi - 0.5 * log_var[i] - d * d / (2.0 * std::exp(log_var[i]));
    }
    return s;
}

NodeId gaussian_log_density_node(Graph& g, NodeId x, NodeId mean, NodeId log_var) {
    constexpr double half_log_2pi = 0.9189385332046727;
    NodeId diff2 = g.square(g.sub(x, mean));
    // (x-m)^2 * exp(-log_var) / 2
    NodeId inv_var = g.exp(g.scale(log_var, -1.0));
    NodeId quad = g.scale(g.mul(diff2, inv_var), 0.5);
    NodeId half_lv = g.scale(log_var, 0.5);
    NodeId per_dim = g.add_scalar(g.add(quad, half_lv), half_log_2pi);
    return g.scale(g.sum(per_dim), -1.0);
}

}  // namespace vaedef::ad
