#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "motiondiff/errors.hpp"

namespace motiondiff {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

template <typename Real>
struct Node;

// Dense row-major array of real values. Copies are shallow (shared storage);
// ops never mutate their inputs. A non-null `node` ties the tensor into the
// reverse-mode graph of the evaluation that produced it.
template <typename Real>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        check_shape(shape_);
        data_ = std::make_shared<std::vector<Real>>(shape_numel(shape_), Real(0));
    }

    Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)) {
        check_shape(shape_);
        if (static_cast<int64_t>(values.size()) != shape_numel(shape_)) {
            throw ShapeError("tensor init: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape_));
        }
        data_ = std::make_shared<std::vector<Real>>(std::move(values));
    }

    static Tensor full(Shape shape, Real v) {
        Tensor t(std::move(shape));
        for (Real& x : *t.data_) x = v;
        return t;
    }

    bool empty() const { return data_ == nullptr; }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }

    Real* data() { return data_->data(); }
    const Real* data() const { return data_->data(); }
    std::vector<Real>& vec() { return *data_; }
    const std::vector<Real>& vec() const { return *data_; }

    Real item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape_));
        return (*data_)[0];
    }

    // Deep copy of the storage (drops any graph linkage).
    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<Real>>(*data_);
        return t;
    }

    bool all_finite() const {
        for (Real v : *data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    // Mark this tensor as a differentiation leaf. Gradients can then be
    // requested for it from backward().
    Tensor& set_variable() {
        if (!node) node = std::make_shared<Node<Real>>();
        return *this;
    }

    bool traced() const { return node != nullptr; }

    std::shared_ptr<Node<Real>> node;

private:
    static void check_shape(const Shape& s) {
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
        }
    }

    Shape shape_;
    std::shared_ptr<std::vector<Real>> data_;
};

// One recorded primitive evaluation. `inputs` keeps the operands alive for
// the backward closure; a leaf has no inputs and no backward.
template <typename Real>
struct Node {
    struct BackwardCtx {
        const std::vector<Real>& gout;
        Node* self;
        std::unordered_map<Node*, std::vector<Real>>* grads;

        bool needs(size_t i) const { return self->inputs[i].node != nullptr; }

        std::vector<Real>& grad(size_t i) const {
            const Tensor<Real>& in = self->inputs[i];
            auto& buf = (*grads)[in.node.get()];
            if (buf.empty()) buf.assign(static_cast<size_t>(in.numel()), Real(0));
            return buf;
        }
    };

    const char* op = "leaf";
    std::vector<Tensor<Real>> inputs;
    std::function<void(const BackwardCtx&)> backward;
};

namespace detail {
inline thread_local int notrace_depth = 0;
}

// Scoped tracing switch. Evaluations inside a NoTrace scope never extend the
// graph, regardless of whether their inputs are traced.
struct NoTrace {
    NoTrace() { ++detail::notrace_depth; }
    ~NoTrace() { --detail::notrace_depth; }
    NoTrace(const NoTrace&) = delete;
    NoTrace& operator=(const NoTrace&) = delete;
};

inline bool tracing_enabled() { return detail::notrace_depth == 0; }

template <typename Real>
bool any_traced(const std::vector<Tensor<Real>>& ts) {
    for (const auto& t : ts) {
        if (t.traced()) return true;
    }
    return false;
}

// Attach a graph node to `out` when tracing applies.
template <typename Real, typename Fn>
void record(Tensor<Real>& out, const char* op, std::vector<Tensor<Real>> inputs, Fn&& fn) {
    if (!tracing_enabled() || !any_traced(inputs)) return;
    out.node = std::make_shared<Node<Real>>();
    out.node->op = op;
    out.node->inputs = std::move(inputs);
    out.node->backward = std::forward<Fn>(fn);
}

// Reverse-mode gradients of a scalar objective with respect to the requested
// leaves. Each reachable node is visited exactly once; gradients live in a
// local map, so the graph itself is never mutated and stays reusable.
template <typename Real>
std::vector<Tensor<Real>> backward(const Tensor<Real>& objective,
                                   const std::vector<Tensor<Real>>& wrt) {
    if (objective.numel() != 1) {
        throw ContractError("backward: objective must be scalar, got " +
                            shape_str(objective.shape()));
    }
    for (const auto& w : wrt) {
        if (!w.traced()) {
            throw ContractError("backward: requested input was not marked as a variable");
        }
    }

    std::vector<Tensor<Real>> result;
    result.reserve(wrt.size());

    std::unordered_map<Node<Real>*, std::vector<Real>> grads;
    if (objective.traced()) {
        // Iterative post-order DFS.
        std::vector<Node<Real>*> topo;
        std::unordered_set<Node<Real>*> seen;
        struct Frame {
            Node<Real>* node;
            size_t next_child;
        };
        std::vector<Frame> stack;
        stack.push_back({objective.node.get(), 0});
        seen.insert(objective.node.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_child < f.node->inputs.size()) {
                Node<Real>* child = f.node->inputs[f.next_child++].node.get();
                if (child && !seen.count(child)) {
                    seen.insert(child);
                    stack.push_back({child, 0});
                }
            } else {
                topo.push_back(f.node);
                stack.pop_back();
            }
        }

        grads[objective.node.get()] = {Real(1)};
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            Node<Real>* n = *it;
            if (!n->backward) continue;
            auto git = grads.find(n);
            if (git == grads.end()) continue;
            typename Node<Real>::BackwardCtx ctx{git->second, n, &grads};
            n->backward(ctx);
        }
    }

    for (const auto& w : wrt) {
        Tensor<Real> g(w.shape());
        auto it = grads.find(w.node.get());
        if (it != grads.end()) {
            std::copy(it->second.begin(), it->second.end(), g.data());
        }
        result.push_back(std::move(g));
    }
    return result;
}

}  // namespace motiondiff
