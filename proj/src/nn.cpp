#include "macl/nn.hpp"

#include <cmath>

namespace macl::nn {

template <typename T>
std::size_t ParamStore<T>::add(std::string name, Tensor<T> value, bool trainable) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value), trainable});
    return params_.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParamStore<T>::find(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

template <typename T>
const Parameter<T>& ParamStore<T>::get(std::string_view name) const {
    auto idx = find(name);
    if (!idx) throw ContractError("unknown parameter: " + std::string(name));
    return params_[*idx];
}

template <typename T>
std::size_t ParamStore<T>::trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_)
        if (p.trainable) n += p.value.size();
    return n;
}

template <typename T>
std::vector<T> ParamStore<T>::flat_view() const {
    std::vector<T> out;
    out.reserve(trainable_scalars());
    for (const auto& p : params_)
        if (p.trainable) out.insert(out.end(), p.value.values().begin(), p.value.values().end());
    return out;
}

template <typename T>
void ParamStore<T>::scatter(std::span<const T> flat) {
    if (flat.size() != trainable_scalars())
        throw DimensionError("scatter: expected " + std::to_string(trainable_scalars()) + " values, got " +
                             std::to_string(flat.size()));
    std::size_t offset = 0;
    for (auto& p : params_) {
        if (!p.trainable) continue;
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), p.value.size(), p.value.data());
        offset += p.value.size();
    }
}

template <typename T>
std::vector<Var> ParamStore<T>::bind(Tape<T>& tape, bool track) const {
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_)
        vars.push_back(track && p.trainable ? tape.parameter(p.name, p.value) : tape.constant(p.value));
    return vars;
}

double init_stddev(Activation act, std::size_t fan_in, std::size_t fan_out) {
    switch (act) {
        case Activation::relu:
        case Activation::leaky_relu: return std::sqrt(2.0 / static_cast<double>(fan_in));
        default: return std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    }
}

template <typename T>
Mlp Mlp::create(ParamStore<T>& store, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
    if (spec.sizes.size() < 2) throw ContractError("mlp needs at least input and output sizes");
    for (std::size_t s : spec.sizes)
        if (s == 0) throw ContractError("mlp layer of zero width in " + prefix);
    Mlp mlp;
    mlp.spec_ = spec;
    for (std::size_t l = 0; l + 1 < spec.sizes.size(); ++l) {
        const std::size_t in = spec.sizes[l], out = spec.sizes[l + 1];
        const double sd = init_stddev(spec.activation, in, out);
        Tensor<T> w = Tensor<T>::matrix(in, out);
        for (auto& x : w.values()) x = static_cast<T>(rng.normal(0.0, sd));
        const std::string layer = prefix + ".fc" + std::to_string(l);
        mlp.weights_.push_back(store.add(layer + ".weight", std::move(w)));
        mlp.biases_.push_back(store.add(layer + ".bias", Tensor<T>::matrix(1, out)));
    }
    return mlp;
}

template <typename T>
Var Mlp::forward(Tape<T>& tape, std::span<const Var> bound, Var x) const {
    Var h = x;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        h = tape.add(tape.matmul(h, bound[weights_[l]]), bound[biases_[l]]);
        if (l + 1 < weights_.size()) h = tape.activate(h, spec_.activation);
    }
    return h;
}

template <typename T>
EmbeddingTable EmbeddingTable::create(ParamStore<T>& store, const std::string& prefix, std::size_t num_labels,
                                      std::size_t emb_dim, Rng& rng) {
    if (emb_dim == 0) throw ContractError("embedding of zero width");
    EmbeddingTable table;
    table.prefix_ = prefix;
    table.emb_dim_ = emb_dim;
    for (std::size_t i = 0; i < num_labels; ++i) {
        std::vector<T> row(emb_dim);
        for (auto& x : row) x = static_cast<T>(rng.normal(0.0, kEmbeddingInitStd));
        table.append_row(store, std::move(row), true);
    }
    return table;
}

template <typename T>
std::size_t EmbeddingTable::append_row(ParamStore<T>& store, std::vector<T> values, bool trainable) {
    if (values.size() != emb_dim_) throw DimensionError("embedding row width mismatch");
    const std::string name = prefix_ + ".embedding." + std::to_string(rows_.size());
    rows_.push_back(store.add(name, Tensor<T>::matrix(1, emb_dim_, std::move(values)), trainable));
    return rows_.size() - 1;
}

template <typename T>
Var EmbeddingTable::lookup(Tape<T>& tape, std::span<const Var> bound, std::span<const std::size_t> labels) const {
    for (std::size_t l : labels)
        if (l >= rows_.size())
            throw ContractError("label " + std::to_string(l) + " out of range [0, " + std::to_string(rows_.size()) +
                                ")");
    std::vector<Var> rows;
    rows.reserve(rows_.size());
    for (std::size_t idx : rows_) rows.push_back(bound[idx]);
    return tape.gather_rows(tape.stack_rows(rows), labels);
}

template <typename T>
void adam_step(ParamStore<T>& store, const GradientSet<T>& grads, AdamState<T>& state) {
    const auto& cfg = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
    const T lr = static_cast<T>(cfg.lr), b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T eps = static_cast<T>(cfg.eps);

    for (std::size_t i = 0; i < store.size(); ++i) {
        auto& p = store[i];
        if (!p.trainable) continue;
        auto git = grads.find(p.name);
        if (git == grads.end()) throw ContractError("adam_step: missing gradient for " + p.name);
        const Tensor<T>& g = git->second;
        if (g.shape() != p.value.shape()) throw DimensionError("adam_step: gradient shape mismatch for " + p.name);
        auto [mit, m_new] = state.m.try_emplace(p.name, p.value.shape());
        auto [vit, v_new] = state.v.try_emplace(p.name, p.value.shape());
        Tensor<T>& m = mit->second;
        Tensor<T>& v = vit->second;
        for (std::size_t j = 0; j < g.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / bc1;
            const T vhat = v[j] / bc2;
            p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

#define MACL_NN_INSTANTIATE(T)                                                                                  \
    template class ParamStore<T>;                                                                               \
    template Mlp Mlp::create<T>(ParamStore<T>&, const std::string&, const MlpSpec&, Rng&);                     \
    template Var Mlp::forward<T>(Tape<T>&, std::span<const Var>, Var) const;                                    \
    template EmbeddingTable EmbeddingTable::create<T>(ParamStore<T>&, const std::string&, std::size_t,           \
                                                      std::size_t, Rng&);                                       \
    template std::size_t EmbeddingTable::append_row<T>(ParamStore<T>&, std::vector<T>, bool);                   \
    template Var EmbeddingTable::lookup<T>(Tape<T>&, std::span<const Var>, std::span<const std::size_t>) const; \
    template void adam_step<T>(ParamStore<T>&, const GradientSet<T>&, AdamState<T>&);

MACL_NN_INSTANTIATE(float)
MACL_NN_INSTANTIATE(double)

}  // namespace macl::nn
