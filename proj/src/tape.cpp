#include "macl/tape.hpp"

#include <algorithm>
#include <cmath>

namespace macl {
namespace {

enum class Broadcast { same, row, scalar };

template <typename T>
Broadcast broadcast_kind(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError(std::string(op) + ": operands must be rank 2");
    if (a.shape() == b.shape()) return Broadcast::same;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::scalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(b.shape()) +
                         " onto " + shape_str(a.shape()));
}

template <typename T>
T rhs_at(const Tensor<T>& b, Broadcast kind, std::size_t flat, std::size_t cols) {
    switch (kind) {
        case Broadcast::same: return b[flat];
        case Broadcast::row: return b[flat % cols];
        case Broadcast::scalar: return b[0];
    }
    return T(0);
}

/// Reduces a full-shape gradient onto the right operand's (possibly broadcast) shape.
template <typename T>
Tensor<T> reduce_to(const Tensor<T>& g, const Shape& target, Broadcast kind) {
    if (kind == Broadcast::same) return g;
    Tensor<T> out(target);
    const std::size_t cols = g.cols();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (kind == Broadcast::row)
            out[i % cols] += g[i];
        else
            out[0] += g[i];
    }
    return out;
}

// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[m x k] = g[m x n] * b[k x n]^T
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T* brow = b + p * n;
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            c[i * k + p] = acc;
        }
    }
}

// c[k x n] = a[m x k]^T * g[m x n]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + k * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        const T* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            if (av == T(0)) continue;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
        }
    }
}

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
void accumulate(Tensor<T>& slot, const Tensor<T>& g) {
    if (slot.empty() && slot.shape().empty()) {
        slot = g;
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor<T> out = Tensor<T>::matrix(a.rows(), b.cols());
    gemm_nn(a.data(), b.data(), out.data(), a.rows(), a.cols(), b.cols());
    return out;
}

template <typename T>
T activation_value(Activation act, T x, T slope) {
    switch (act) {
        case Activation::relu: return x > T(0) ? x : T(0);
        case Activation::leaky_relu: return x > T(0) ? x : slope * x;
        case Activation::tanh: return std::tanh(x);
        case Activation::sigmoid: return stable_sigmoid(x);
        case Activation::identity: return x;
    }
    return x;
}

template <typename T>
Var Tape<T>::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
auto Tape<T>::node(Var v) const -> const Node& {
    if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
    return nodes_[v.id];
}

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::parameter(std::string name, Tensor<T> value) {
    Node n;
    n.value = std::move(value);
    n.param = static_cast<int>(param_names_.size());
    param_names_.push_back(std::move(name));
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b) {
    Node n;
    n.op = Op::matmul;
    n.inputs = {a.id, b.id};
    n.value = macl::matmul(node(a).value, node(b).value);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
    const auto& av = node(a).value;
    const auto& bv = node(b).value;
    const Broadcast kind = broadcast_kind(av, bv, "add");
    Node n;
    n.op = Op::add;
    n.inputs = {a.id, b.id};
    n.value = av;
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] += rhs_at(bv, kind, i, av.cols());
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::sub(Var a, Var b) {
    const auto& av = node(a).value;
    const auto& bv = node(b).value;
    const Broadcast kind = broadcast_kind(av, bv, "sub");
    Node n;
    n.op = Op::sub;
    n.inputs = {a.id, b.id};
    n.value = av;
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] -= rhs_at(bv, kind, i, av.cols());
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::mul(Var a, Var b) {
    const auto& av = node(a).value;
    const auto& bv = node(b).value;
    const Broadcast kind = broadcast_kind(av, bv, "mul");
    Node n;
    n.op = Op::mul;
    n.inputs = {a.id, b.id};
    n.value = av;
    for (std::size_t i = 0; i < av.size(); ++i) n.value[i] *= rhs_at(bv, kind, i, av.cols());
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::unary(Op op, Var a, T coef) {
    Node n;
    n.op = op;
    n.inputs = {a.id};
    n.coef = coef;
    n.value = node(a).value;
    for (auto& x : n.value.values()) {
        switch (op) {
            case Op::scale: x *= coef; break;
            case Op::relu: x = activation_value(Activation::relu, x); break;
            case Op::leaky_relu: x = activation_value(Activation::leaky_relu, x, coef); break;
            case Op::tanh: x = std::tanh(x); break;
            case Op::sigmoid: x = stable_sigmoid(x); break;
            default: break;
        }
    }
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::scale(Var a, T factor) { return unary(Op::scale, a, factor); }
template <typename T>
Var Tape<T>::relu(Var a) { return unary(Op::relu, a, T(0)); }
template <typename T>
Var Tape<T>::leaky_relu(Var a, T slope) { return unary(Op::leaky_relu, a, slope); }
template <typename T>
Var Tape<T>::tanh(Var a) { return unary(Op::tanh, a, T(0)); }
template <typename T>
Var Tape<T>::sigmoid(Var a) { return unary(Op::sigmoid, a, T(0)); }

template <typename T>
Var Tape<T>::activate(Var a, Activation act, T slope) {
    switch (act) {
        case Activation::relu: return relu(a);
        case Activation::leaky_relu: return leaky_relu(a, slope);
        case Activation::tanh: return tanh(a);
        case Activation::sigmoid: return sigmoid(a);
        case Activation::identity: return a;
    }
    return a;
}

template <typename T>
Var Tape<T>::concat_cols(Var a, Var b) {
    const auto& av = node(a).value;
    const auto& bv = node(b).value;
    if (av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows())
        throw DimensionError("concat_cols: " + shape_str(av.shape()) + " | " + shape_str(bv.shape()));
    const std::size_t p = av.cols(), q = bv.cols();
    Node n;
    n.op = Op::concat_cols;
    n.inputs = {a.id, b.id};
    n.value = Tensor<T>::matrix(av.rows(), p + q);
    for (std::size_t r = 0; r < av.rows(); ++r) {
        std::copy_n(av.data() + r * p, p, n.value.data() + r * (p + q));
        std::copy_n(bv.data() + r * q, q, n.value.data() + r * (p + q) + p);
    }
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::stack_rows(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("stack_rows: no inputs");
    std::vector<Tensor<T>> values;
    Node n;
    n.op = Op::stack_rows;
    for (const Var v : parts) {
        values.push_back(node(v).value);
        n.inputs.push_back(v.id);
    }
    n.value = vstack<T>(values);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::gather_rows(Var table, std::span<const std::size_t> index) {
    Node n;
    n.op = Op::gather_rows;
    n.inputs = {table.id};
    n.index.assign(index.begin(), index.end());
    n.value = node(table).value.gather_rows(index);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::sum(Var a) {
    Node n;
    n.op = Op::sum;
    n.inputs = {a.id};
    T acc = T(0);
    for (T x : node(a).value.values()) acc += x;
    n.value = Tensor<T>::scalar(acc);
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::mean(Var a) {
    const auto& av = node(a).value;
    if (av.size() == 0) throw DimensionError("mean of empty tensor");
    Node n;
    n.op = Op::mean;
    n.inputs = {a.id};
    T acc = T(0);
    for (T x : av.values()) acc += x;
    n.value = Tensor<T>::scalar(acc / static_cast<T>(av.size()));
    return push(std::move(n));
}

template <typename T>
Var Tape<T>::bce_with_logits(Var logits, const Tensor<T>& targets) {
    const auto& lv = node(logits).value;
    if (lv.shape() != targets.shape())
        throw DimensionError("bce_with_logits: logits " + shape_str(lv.shape()) + " vs targets " +
                             shape_str(targets.shape()));
    if (lv.size() == 0) throw DimensionError("bce_with_logits: empty batch");
    for (T t : targets.values())
        if (t != T(0) && t != T(1)) throw ContractError("bce_with_logits: targets must be 0 or 1");
    // max(l, 0) - l*t + log(1 + exp(-|l|))
    T acc = T(0);
    for (std::size_t i = 0; i < lv.size(); ++i) {
        const T l = lv[i];
        acc += std::max(l, T(0)) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
    }
    Node n;
    n.op = Op::bce_logits;
    n.inputs = {logits.id};
    n.aux = targets;
    n.value = Tensor<T>::scalar(acc / static_cast<T>(lv.size()));
    return push(std::move(n));
}

template <typename T>
GradientSet<T> Tape<T>::backward(Var root) const {
    const Node& r = node(root);
    if (r.value.size() != 1)
        throw DimensionError("backward: root must be scalar, got " + shape_str(r.value.shape()));

    std::vector<Tensor<T>> grads(root.id + 1);
    grads[root.id] = Tensor<T>(r.value.shape(), T(1));

    for (std::size_t i = root.id + 1; i-- > 0;) {
        const Node& n = nodes_[i];
        Tensor<T>& g = grads[i];
        if (g.shape().empty()) continue;
        const auto in = [&](std::size_t k) -> const Tensor<T>& { return nodes_[n.inputs[k]].value; };
        const auto slot = [&](std::size_t k) -> Tensor<T>& { return grads[n.inputs[k]]; };

        switch (n.op) {
            case Op::leaf: break;
            case Op::matmul: {
                const auto& a = in(0);
                const auto& b = in(1);
                Tensor<T> ga = Tensor<T>::matrix(a.rows(), a.cols());
                Tensor<T> gb = Tensor<T>::matrix(b.rows(), b.cols());
                gemm_nt(g.data(), b.data(), ga.data(), a.rows(), b.cols(), a.cols());
                gemm_tn(a.data(), g.data(), gb.data(), a.rows(), a.cols(), b.cols());
                accumulate(slot(0), ga);
                accumulate(slot(1), gb);
                break;
            }
            case Op::add:
            case Op::sub: {
                const Broadcast kind = broadcast_kind(in(0), in(1), "add");
                accumulate(slot(0), g);
                Tensor<T> gb = reduce_to(g, in(1).shape(), kind);
                if (n.op == Op::sub)
                    for (auto& x : gb.values()) x = -x;
                accumulate(slot(1), gb);
                break;
            }
            case Op::mul: {
                const auto& a = in(0);
                const auto& b = in(1);
                const Broadcast kind = broadcast_kind(a, b, "mul");
                Tensor<T> ga = g;
                Tensor<T> gab = g;
                for (std::size_t j = 0; j < g.size(); ++j) {
                    ga[j] *= rhs_at(b, kind, j, a.cols());
                    gab[j] *= a[j];
                }
                accumulate(slot(0), ga);
                accumulate(slot(1), reduce_to(gab, b.shape(), kind));
                break;
            }
            case Op::scale: {
                Tensor<T> ga = g;
                for (auto& x : ga.values()) x *= n.coef;
                accumulate(slot(0), ga);
                break;
            }
            case Op::relu:
            case Op::leaky_relu: {
                const auto& x = in(0);
                Tensor<T> ga = g;
                const T neg = n.op == Op::relu ? T(0) : n.coef;
                for (std::size_t j = 0; j < ga.size(); ++j)
                    if (!(x[j] > T(0))) ga[j] *= neg;
                accumulate(slot(0), ga);
                break;
            }
            case Op::tanh: {
                Tensor<T> ga = g;
                for (std::size_t j = 0; j < ga.size(); ++j) ga[j] *= T(1) - n.value[j] * n.value[j];
                accumulate(slot(0), ga);
                break;
            }
            case Op::sigmoid: {
                Tensor<T> ga = g;
                for (std::size_t j = 0; j < ga.size(); ++j) ga[j] *= n.value[j] * (T(1) - n.value[j]);
                accumulate(slot(0), ga);
                break;
            }
            case Op::concat_cols: {
                const std::size_t p = in(0).cols(), q = in(1).cols(), rows = in(0).rows();
                Tensor<T> ga = Tensor<T>::matrix(rows, p);
                Tensor<T> gb = Tensor<T>::matrix(rows, q);
                for (std::size_t row = 0; row < rows; ++row) {
                    std::copy_n(g.data() + row * (p + q), p, ga.data() + row * p);
                    std::copy_n(g.data() + row * (p + q) + p, q, gb.data() + row * q);
                }
                accumulate(slot(0), ga);
                accumulate(slot(1), gb);
                break;
            }
            case Op::stack_rows: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                    const auto& part = in(k);
                    std::vector<T> chunk(g.data() + offset, g.data() + offset + part.size());
                    offset += part.size();
                    accumulate(slot(k), Tensor<T>(part.shape(), std::move(chunk)));
                }
                break;
            }
            case Op::gather_rows: {
                const auto& table = in(0);
                Tensor<T> gt(table.shape());
                const std::size_t c = table.cols();
                for (std::size_t k = 0; k < n.index.size(); ++k)
                    for (std::size_t j = 0; j < c; ++j) gt[n.index[k] * c + j] += g[k * c + j];
                accumulate(slot(0), gt);
                break;
            }
            case Op::sum:
            case Op::mean: {
                const auto& a = in(0);
                T v = g[0];
                if (n.op == Op::mean) v /= static_cast<T>(a.size());
                accumulate(slot(0), Tensor<T>(a.shape(), v));
                break;
            }
            case Op::bce_logits: {
                const auto& l = in(0);
                Tensor<T> gl(l.shape());
                const T scale = g[0] / static_cast<T>(l.size());
                for (std::size_t j = 0; j < l.size(); ++j)
                    gl[j] = (stable_sigmoid(l[j]) - n.aux[j]) * scale;
                accumulate(slot(0), gl);
                break;
            }
        }
    }

    GradientSet<T> out;
    for (std::size_t i = 0; i <= root.id; ++i) {
        const Node& n = nodes_[i];
        if (n.param < 0) continue;
        Tensor<T> g = grads[i].shape().empty() ? Tensor<T>(n.value.shape()) : std::move(grads[i]);
        auto [it, inserted] = out.emplace(param_names_[static_cast<std::size_t>(n.param)], std::move(g));
        if (!inserted) throw ContractError("parameter registered twice: " + it->first);
    }
    // Parameters recorded after the root cannot influence it.
    for (std::size_t i = root.id + 1; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.param >= 0)
            out.emplace(param_names_[static_cast<std::size_t>(n.param)], Tensor<T>(n.value.shape()));
    }
    return out;
}

template class Tape<float>;
template class Tape<double>;
template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template float activation_value(Activation, float, float);
template double activation_value(Activation, double, double);

}  // namespace macl
