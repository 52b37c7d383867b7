#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ppon {

/// NCHW extent of a rank-4 tensor. Every dimension is at least 1.
struct Shape {
    int n = 1;
    int c = 1;
    int h = 1;
    int w = 1;

    std::size_t numel() const { return std::size_t(n) * c * h * w; }
    std::size_t plane() const { return std::size_t(h) * w; }
    std::string str() const;

    friend bool operator==(const Shape&, const Shape&) = default;
};

namespace detail {

struct Node;
using BackwardFn = std::function<void(Node& self)>;

/// One value in the compute graph. Leaves have no backward function.
struct Node {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until something accumulates into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    BackwardFn backward;
    std::uint64_t grad_writes = 0;  // accumulations received while a leaf

    bool is_leaf() const { return !backward; }
    /// Grad buffer, zero-initialised on first use.
    float* grad_buffer();
    /// Grad buffer for an op's backward to accumulate into; counts leaf writes.
    float* accumulate_target()
    {
        if (is_leaf())
            ++grad_writes;
        return grad_buffer();
    }
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor(Shape{}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const { return shape().numel(); }

    std::span<const float> data() const;
    /// Raw write access. Only for leaves outside any recorded graph
    /// (initialisation, optimizer updates, image decoding).
    std::span<float> mutable_data();
    float item() const;
    float at(int n, int c, int h, int w) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool has_grad() const;
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();
    std::uint64_t grad_writes() const;

    /// Same storage copy cut from the graph.
    Tensor detach() const;
    Tensor clone() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> n);

private:
    std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the primitive applications reachable from a
/// root. Every entry's inputs appear earlier or are leaves.
class Tape {
public:
    static Tape record(const Tensor& root);
    const std::vector<detail::Node*>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<detail::Node*> entries_;
};

/// Reverse pass from a one-element loss. Grads accumulate (+=) into leaves;
/// intermediate nodes drop their saved state afterwards.
void backward(const Tensor& loss);

/// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Builds an op result. Records `fn` only when grad mode is on and some input
/// requires grad.
Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   detail::BackwardFn fn);

void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

} // namespace ppon
