#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "glandseg/autodiff/tensor.hpp"
#include "glandseg/error.hpp"

namespace glandseg::ad {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    /// Buffers (e.g. batch-norm running statistics) are stored and
    /// checkpointed with the parameters but never receive gradients.
    bool trainable = true;
};

/// Named tensors in insertion order. Insertion order is the checkpoint order
/// and the order optimisers visit parameters in.
template <typename T>
class ParameterSet {
public:
    ParameterSet() = default;
    // Parameters are referenced by address from live graphs.
    ParameterSet(const ParameterSet& o) { *this = o; }
    ParameterSet& operator=(const ParameterSet& o) {
        if (this == &o) return *this;
        items_.clear();
        index_.clear();
        for (const auto& p : o.items_) add(p->name, p->value, p->trainable);
        return *this;
    }
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value, bool trainable = true) {
        require(!index_.contains(name), "duplicate parameter '" + name + "'");
        index_[name] = items_.size();
        items_.push_back(std::make_unique<Parameter<T>>(Parameter<T>{name, std::move(value), trainable}));
        return *items_.back();
    }

    bool contains(const std::string& name) const { return index_.contains(name); }

    Parameter<T>& get(const std::string& name) {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter '" + name + "'");
        return *items_[it->second];
    }
    const Parameter<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        require(it != index_.end(), "unknown parameter '" + name + "'");
        return *items_[it->second];
    }

    std::size_t size() const noexcept { return items_.size(); }
    Parameter<T>& operator[](std::size_t i) { return *items_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return *items_[i]; }

    /// Scalar count over trainable tensors only.
    std::size_t trainable_scalars() const {
        std::size_t n = 0;
        for (const auto& p : items_)
            if (p->trainable) n += p->value.size();
        return n;
    }

    template <typename U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& p : items_) out.add(p->name, p->value.template cast<U>(), p->trainable);
        return out;
    }

    bool operator==(const ParameterSet& o) const {
        if (size() != o.size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& a = (*this)[i];
            const auto& b = o[i];
            if (a.name != b.name || a.trainable != b.trainable || !(a.value == b.value)) return false;
        }
        return true;
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> items_;
    std::map<std::string, std::size_t> index_;
};

/// Parameter gradients by name; each has its parameter's shape.
template <typename T>
using Gradients = std::map<std::string, Tensor<T>>;

/// Handle to a node of a Graph. id < 0 denotes "absent" (e.g. no bias).
struct Var {
    int id = -1;
    explicit operator bool() const noexcept { return id >= 0; }
};

/// Tape of operations recorded in execution order, which is a topological
/// order by construction. Built fresh for every forward pass.
template <typename T>
class Graph {
public:
    struct Node {
        std::string op;
        Tensor<T> value;
        Tensor<T> grad;
        std::vector<int> inputs;
        std::function<void(Graph&, const Node&)> backward;
        Parameter<T>* param = nullptr;
        bool requires_grad = false;
    };

    explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor<T> value, std::string op = "constant") {
        return push(std::move(op), std::move(value), {}, nullptr, false, nullptr);
    }

    Var parameter(Parameter<T>& p) {
        return push("parameter:" + p.name, p.value, {}, nullptr, p.trainable, &p);
    }

    /// Records an op. The node requires a gradient if any input does.
    Var record(std::string op, Tensor<T> value, std::vector<int> inputs,
               std::function<void(Graph&, const Node&)> backward) {
        bool rg = false;
        for (int i : inputs) rg = rg || nodes_.at(static_cast<std::size_t>(i)).requires_grad;
        return push(std::move(op), std::move(value), std::move(inputs), std::move(backward), rg, nullptr);
    }

    const Tensor<T>& value(Var v) const { return node(v).value; }
    const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)); }
    const Node& node(std::size_t i) const { return nodes_.at(i); }
    std::size_t size() const noexcept { return nodes_.size(); }

    bool needs_grad(int id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad; }

    /// Gradient buffer of a node, allocated on first use.
    Tensor<T>& grad(int id) {
        auto& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape(), T{0});
        return n.grad;
    }

    /// Reverse-mode sweep from a scalar node. Returns the gradient of every
    /// trainable parameter that was bound into this graph (zeros when the
    /// loss does not depend on it).
    Gradients<T> backward(Var loss) {
        const auto& ln = node(loss);
        if (ln.value.size() != 1)
            throw ShapeError("backward requires a scalar loss, got shape " + to_string(ln.value.shape()));
        for (auto& n : nodes_) n.grad = Tensor<T>();
        grad(loss.id).fill(T{1});
        for (int i = loss.id; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, n);
            if (check_finite_ && !n.grad.all_finite())
                throw NumericError("non-finite gradient flowing out of '" + n.op + "'");
        }
        Gradients<T> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto& n = nodes_[i];
            if (!n.param || !n.param->trainable) continue;
            auto [it, inserted] = out.try_emplace(n.param->name, Tensor<T>(n.value.shape(), T{0}));
            if (!n.grad.empty())
                for (std::size_t k = 0; k < n.grad.size(); ++k) it->second[k] += n.grad[k];
        }
        return out;
    }

private:
    Var push(std::string op, Tensor<T> value, std::vector<int> inputs,
             std::function<void(Graph&, const Node&)> backward, bool requires_grad, Parameter<T>* param) {
        if (check_finite_ && !value.all_finite())
            throw NumericError("non-finite value produced by '" + op + "'");
        nodes_.push_back(Node{std::move(op), std::move(value), {}, std::move(inputs), std::move(backward), param,
                              requires_grad});
        return Var{static_cast<int>(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
    bool check_finite_;
};

}  // namespace glandseg::ad
