#include "ppon/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "ppon/error.hpp"

namespace ppon {

namespace {
thread_local bool g_grad_mode = true;

void check_shape_valid(const Shape& s)
{
    if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1)
        throw ShapeError("tensor dimensions must be >= 1, got " + s.str());
}
} // namespace

std::string Shape::str() const
{
    std::ostringstream os;
    os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
    return os.str();
}

float* detail::Node::grad_buffer()
{
    if (grad.empty())
        grad.assign(data.size(), 0.0f);
    return grad.data();
}

Tensor::Tensor(Shape shape, float fill)
{
    check_shape_valid(shape);
    node_ = std::make_shared<detail::Node>();
    node_->shape = shape;
    node_->data.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> values)
{
    check_shape_valid(shape);
    if (values.size() != shape.numel())
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape.str());
    node_ = std::make_shared<detail::Node>();
    node_->shape = shape;
    node_->data = std::move(values);
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n)
{
    Tensor t;
    t.node_ = std::move(n);
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::span<const float> Tensor::data() const { return node_->data; }
std::span<float> Tensor::mutable_data() { return node_->data; }

float Tensor::item() const
{
    if (numel() != 1)
        throw ShapeError("item() needs a one-element tensor, got " + shape().str());
    return node_->data[0];
}

float Tensor::at(int n, int c, int h, int w) const
{
    const Shape& s = shape();
    return node_->data[((std::size_t(n) * s.c + c) * s.h + h) * s.w + w];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on)
{
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const float> Tensor::grad() const { return node_->grad; }
std::span<float> Tensor::mutable_grad() { return {node_->grad_buffer(), node_->data.size()}; }

void Tensor::zero_grad()
{
    if (node_)
        node_->grad.clear();
}

std::uint64_t Tensor::grad_writes() const { return node_->grad_writes; }

Tensor Tensor::detach() const
{
    auto n = std::make_shared<detail::Node>();
    n->shape = node_->shape;
    n->data = node_->data;
    return wrap(std::move(n));
}

Tensor Tensor::clone() const { return detach(); }

Tape Tape::record(const Tensor& root)
{
    Tape tape;
    std::unordered_set<detail::Node*> visited;
    // Iterative post-order DFS over nodes that carry gradient.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            tape.entries_.push_back(node);
            stack.pop_back();
        }
    }
    return tape;
}

void backward(const Tensor& loss)
{
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward needs a one-element loss, got " +
                         (loss.defined() ? loss.shape().str() : std::string("undefined")));
    if (!loss.requires_grad())
        throw std::logic_error("backward: loss is not connected to any tensor requiring grad");
    if (loss.node()->is_leaf())
        throw std::logic_error("backward: empty tape (the loss is a leaf or its graph was already consumed)");

    Tape tape = Tape::record(loss);
    loss.node()->grad_buffer()[0] += 1.0f;
    const auto& entries = tape.entries();
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        detail::Node* node = *it;
        if (node->is_leaf())
            continue;
        if (!node->grad.empty())
            node->backward(*node);
    }
    for (detail::Node* node : entries) {
        if (node->is_leaf())
            continue;
        node->backward = nullptr;
        node->inputs.clear();
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = previous_; }
bool grad_mode_enabled() { return g_grad_mode; }

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   detail::BackwardFn fn)
{
    auto node = std::make_shared<detail::Node>();
    node->shape = shape;
    node->data = std::move(values);
    if (g_grad_mode) {
        bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->inputs.reserve(inputs.size());
            for (auto& t : inputs)
                node->inputs.push_back(t.node_ptr());
            node->backward = std::move(fn);
        }
    }
    return Tensor::wrap(std::move(node));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
    const Shape& x = a.shape();
    const Shape& y = b.shape();
    auto fail = [&](const char* dim, int u, int v) {
        throw ShapeError(std::string(op) + ": dimension " + dim + " mismatch (" + std::to_string(u) +
                         " vs " + std::to_string(v) + "), shapes " + x.str() + " and " + y.str());
    };
    if (x.n != y.n) fail("N", x.n, y.n);
    if (x.c != y.c) fail("C", x.c, y.c);
    if (x.h != y.h) fail("H", x.h, y.h);
    if (x.w != y.w) fail("W", x.w, y.w);
}

} // namespace ppon
