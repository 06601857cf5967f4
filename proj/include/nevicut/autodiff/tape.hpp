#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "nevicut/autodiff/tensor.hpp"
#include "nevicut/error.hpp"

namespace nevicut::ad {

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

enum class LeafKind { constant, input, param };

/// Append-only record of primitive operations. Parents always precede their
/// children, so a single reverse sweep visits every node once.
///
/// Tapes are single-use: backward() may be called once, after which the tape
/// is marked consumed. A tape built with `record = false` keeps values only
/// and can be used for inference.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        const char* op = "";
        bool requires_grad = false;
        LeafKind leaf = LeafKind::constant;
        std::string name;
    };

    explicit Tape(bool record = true) : record_(record) {}

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = default;
    Tape& operator=(Tape&&) = default;

    bool recording() const { return record_; }
    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }
    std::size_t next_id() const { return nodes_.size(); }

    /// Drops every node recorded after `mark` (non-recording tapes only), so
    /// iterative value-only evaluations do not accumulate memory.
    void truncate(std::size_t mark) {
        if (record_) throw InvalidArgument("Tape::truncate: only valid on a non-recording tape");
        if (mark < nodes_.size()) nodes_.resize(mark);
    }

    Var constant(Tensor value) { return add_leaf(std::move(value), LeafKind::constant, {}); }

    Var input(Tensor value, std::string name) {
        return add_leaf(std::move(value), LeafKind::input, std::move(name));
    }

    Var param(Tensor value, std::string name) {
        return add_leaf(std::move(value), LeafKind::param, std::move(name));
    }

    /// Records an operation. `backward` may be empty for non-differentiable ops.
    Var record(const char* op, Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
        std::size_t id = nodes_.size();
        if (!value.all_finite()) throw NonFiniteError(id, op);
        bool rg = false;
        if (record_) {
            for (auto p : parents) rg = rg || nodes_[p].requires_grad;
        }
        Node n;
        n.value = std::move(value);
        n.op = op;
        n.requires_grad = rg;
        if (rg) {
            n.parents = std::move(parents);
            n.backward = std::move(backward);
        }
        nodes_.push_back(std::move(n));
        return Var{this, id};
    }

    const Node& node(std::size_t id) const { return nodes_[id]; }
    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Gradient accumulator of a node, allocated to zeros on first access.
    Tensor& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() != n.value.size() || n.grad.rows() != n.value.rows()) {
            n.grad = Tensor(n.value.rows(), n.value.cols(), 0.0);
        }
        return n.grad;
    }

    /// Reverse sweep seeded with d(output) = seed. Marks the tape consumed.
    void backward(Var output, const Tensor& seed) {
        if (consumed_) throw Error("Tape::backward: tape already consumed");
        if (!record_) throw Error("Tape::backward: tape was built without recording");
        if (output.tape != this) throw Error("Tape::backward: variable belongs to another tape");
        if (!seed.same_shape(nodes_[output.id].value)) {
            throw ShapeError(output.id, "backward", "seed " + seed.shape_string() + " vs output " +
                                                        nodes_[output.id].value.shape_string());
        }
        consumed_ = true;
        if (!nodes_[output.id].requires_grad) return;
        grad(output.id) = seed;
        for (std::size_t i = output.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
            n.backward(*this, i);
        }
    }

    /// Gradients of named leaves of one kind after backward(). Leaves that
    /// received no gradient report zeros.
    std::map<std::string, Tensor> leaf_grads(LeafKind kind) const {
        std::map<std::string, Tensor> out;
        for (const auto& n : nodes_) {
            if (n.leaf != kind || n.name.empty()) continue;
            if (n.grad.empty()) {
                out[n.name] = Tensor(n.value.rows(), n.value.cols(), 0.0);
            } else {
                out[n.name] = n.grad;
            }
        }
        return out;
    }

private:
    Var add_leaf(Tensor value, LeafKind kind, std::string name) {
        std::size_t id = nodes_.size();
        if (!value.all_finite()) throw NonFiniteError(id, "leaf:" + name);
        Node n;
        n.value = std::move(value);
        n.op = "leaf";
        n.leaf = kind;
        n.name = std::move(name);
        n.requires_grad = record_ && kind != LeafKind::constant;
        nodes_.push_back(std::move(n));
        return Var{this, id};
    }

    std::vector<Node> nodes_;
    bool record_ = true;
    bool consumed_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace nevicut::ad
