#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "macl/tensor.hpp"

namespace macl {

/// Handle to a node recorded on a Tape. Only meaningful for the tape that
/// produced it.
struct Var {
    std::uint32_t id = 0;
};

/// Gradients keyed by parameter name. Holds exactly the parameters that were
/// registered as trainable on the tape.
template <typename T>
using GradientSet = std::map<std::string, Tensor<T>>;

enum class Activation { relu, leaky_relu, tanh, sigmoid, identity };

/// Define-by-run reverse-mode autodiff over rank-2 tensors.
///
/// Binary ops accept a right operand that either matches the left shape,
/// is a single row (broadcast down the rows), or is 1x1 (broadcast
/// everywhere). Nothing else is reshaped.
template <typename T>
class Tape {
public:
    static constexpr T kDefaultLeakySlope = T(0.2);

    /// Untracked input; gradients stop here.
    Var constant(Tensor<T> value);
    /// Tracked leaf; backward() reports its gradient under `name`.
    Var parameter(std::string name, Tensor<T> value);

    const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, T factor);
    Var relu(Var a);
    Var leaky_relu(Var a, T slope = kDefaultLeakySlope);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var activate(Var a, Activation act, T slope = kDefaultLeakySlope);
    Var concat_cols(Var a, Var b);
    Var stack_rows(std::span<const Var> parts);
    Var gather_rows(Var table, std::span<const std::size_t> index);
    Var sum(Var a);
    Var mean(Var a);
    /// Mean binary cross-entropy computed from logits; targets must be 0 or 1.
    Var bce_with_logits(Var logits, const Tensor<T>& targets);

    /// Gradients of a 1x1 root with respect to every parameter on the tape.
    GradientSet<T> backward(Var root) const;

private:
    enum class Op : std::uint8_t {
        leaf, matmul, add, sub, mul, scale, relu, leaky_relu, tanh, sigmoid,
        concat_cols, stack_rows, gather_rows, sum, mean, bce_logits
    };

    struct Node {
        Op op = Op::leaf;
        std::vector<std::uint32_t> inputs;
        Tensor<T> value;
        T coef = T(0);
        std::vector<std::size_t> index;
        Tensor<T> aux;
        int param = -1;
    };

    Var push(Node node);
    const Node& node(Var v) const;
    Var unary(Op op, Var a, T coef);

    std::vector<Node> nodes_;
    std::vector<std::string> param_names_;
};

/// Plain forward helpers shared by tape ops and eager code paths.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
T activation_value(Activation act, T x, T slope = Tape<T>::kDefaultLeakySlope);

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace macl
