#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "janus/tensor.hpp"

namespace janus {

enum class ParamKind : uint8_t { weight = 0, bias = 1, gain = 2, embedding = 3 };

/// A named trainable leaf. Lives outside any tape; gradients accumulate here
/// when a tape that used it runs backward.
template <class Real>
struct Parameter {
    std::string name;
    ParamKind kind = ParamKind::weight;
    Tensor<Real> value;
    Tensor<Real> grad;

    Parameter() = default;
    Parameter(std::string n, ParamKind k, Tensor<Real> v)
        : name(std::move(n)), kind(k), value(std::move(v)), grad(Tensor<Real>::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), Real(0)); }
};

using Var = long;

/// Record of one forward pass: a topologically ordered list of primitive
/// applications. Every op appends exactly one node whose closure knows how to
/// push the node's gradient back into its inputs.
template <class Real>
class Tape {
public:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;  // allocated lazily on first accumulation
        std::function<void(Tape&)> back;
        bool needs_grad = false;
        Parameter<Real>* leaf = nullptr;
    };

    Var emplace(Tensor<Real> value, bool needs_grad, std::function<void(Tape&)> back,
                const char* opname = "op") {
        if (!value.all_finite())
            throw std::runtime_error(std::string("non-finite value produced by ") + opname);
        nodes_.push_back(Node{std::move(value), Tensor<Real>(), std::move(back), needs_grad, nullptr});
        return static_cast<Var>(nodes_.size()) - 1;
    }

    Var constant(Tensor<Real> value) { return emplace(std::move(value), false, nullptr, "constant"); }

    /// Registers a trainable parameter for this pass. backward() accumulates
    /// d(loss)/d(param) into param.grad.
    Var use(Parameter<Real>& p) {
        Var v = emplace(p.value, true, nullptr, "leaf");
        nodes_[static_cast<size_t>(v)].leaf = &p;
        return v;
    }

    /// Attaches the backward closure after the node exists, so the closure can
    /// capture its own index.
    void set_back(Var v, std::function<void(Tape&)> back) {
        nodes_[static_cast<size_t>(v)].back = std::move(back);
    }

    const Tensor<Real>& val(Var v) const { return nodes_[static_cast<size_t>(v)].value; }
    bool needs_grad(Var v) const { return nodes_[static_cast<size_t>(v)].needs_grad; }
    long size() const { return static_cast<long>(nodes_.size()); }

    /// Gradient accumulator for node v, allocated on demand.
    Tensor<Real>& grad_ref(Var v) {
        Node& n = nodes_[static_cast<size_t>(v)];
        if (n.grad.data.empty()) n.grad = Tensor<Real>::zeros(n.value.shape);
        return n.grad;
    }
    /// Gradient if any accumulation happened, else nullptr.
    const Tensor<Real>* maybe_grad(Var v) const {
        const Node& n = nodes_[static_cast<size_t>(v)];
        return n.grad.data.empty() ? nullptr : &n.grad;
    }

    /// Reverse sweep from a scalar loss. Visits each node exactly once; leaf
    /// gradients land in their Parameter's grad slot. The tape counts as
    /// consumed afterwards: a second sweep would re-accumulate.
    void backward(Var loss) {
        if (consumed_) throw std::runtime_error("backward: tape already consumed");
        consumed_ = true;
        Node& top = nodes_[static_cast<size_t>(loss)];
        if (top.value.numel() != 1) throw std::runtime_error("backward: loss must be a scalar");
        if (!top.needs_grad) throw std::runtime_error("backward: loss does not depend on any parameter");
        grad_ref(loss)[0] = Real(1);
        for (Var v = loss; v >= 0; --v) {
            Node& n = nodes_[static_cast<size_t>(v)];
            if (!n.needs_grad || n.grad.data.empty()) continue;
            if (!n.grad.all_finite())
                throw std::runtime_error("non-finite gradient at tape node " + std::to_string(v));
            if (n.back) n.back(*this);
            if (n.leaf) {
                Tensor<Real>& g = n.leaf->grad;
                for (long i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
            }
        }
    }

private:
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

}  // namespace janus
