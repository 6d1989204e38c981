#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "macl/rng.hpp"
#include "macl/tape.hpp"
#include "macl/tensor.hpp"

namespace macl::nn {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    bool trainable = true;

    friend bool operator==(const Parameter&, const Parameter&) = default;
};

/// Ordered, named parameters. The flat index enumerates the scalars of the
/// trainable parameters in insertion order, row-major within each tensor;
/// checkpoints use the same order.
template <typename T>
class ParamStore {
public:
    std::size_t add(std::string name, Tensor<T> value, bool trainable = true);

    std::size_t size() const { return params_.size(); }
    Parameter<T>& operator[](std::size_t i) { return params_[i]; }
    const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
    std::span<const Parameter<T>> params() const { return params_; }

    std::optional<std::size_t> find(std::string_view name) const;
    const Parameter<T>& get(std::string_view name) const;

    std::size_t trainable_scalars() const;
    std::vector<T> flat_view() const;
    void scatter(std::span<const T> flat);

    /// Puts every parameter on the tape: trainable ones as tracked leaves
    /// when `track` is set, everything else as constants.
    std::vector<Var> bind(Tape<T>& tape, bool track) const;

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& p : params_) out.add(p.name, p.value.template cast<U>(), p.trainable);
        return out;
    }

    friend bool operator==(const ParamStore&, const ParamStore&) = default;

private:
    std::vector<Parameter<T>> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// He-normal for the relu family, Xavier-normal otherwise.
double init_stddev(Activation act, std::size_t fan_in, std::size_t fan_out);

inline constexpr double kEmbeddingInitStd = 0.02;

struct MlpSpec {
    std::vector<std::size_t> sizes;  // input, hidden..., output
    Activation activation = Activation::leaky_relu;
};

/// Fully connected stack. Hidden layers use `activation`; the output layer
/// is linear.
class Mlp {
public:
    Mlp() = default;

    template <typename T>
    static Mlp create(ParamStore<T>& store, const std::string& prefix, const MlpSpec& spec, Rng& rng);

    template <typename T>
    Var forward(Tape<T>& tape, std::span<const Var> bound, Var x) const;

    const MlpSpec& spec() const { return spec_; }
    std::size_t in_dim() const { return spec_.sizes.front(); }
    std::size_t out_dim() const { return spec_.sizes.back(); }
    std::size_t layers() const { return weights_.size(); }
    std::size_t weight_param(std::size_t layer) const { return weights_.at(layer); }
    std::size_t bias_param(std::size_t layer) const { return biases_.at(layer); }

private:
    MlpSpec spec_;
    std::vector<std::size_t> weights_;
    std::vector<std::size_t> biases_;
};

/// One trainable 1 x emb_dim parameter per label, so individual rows can be
/// frozen and new labels appended without touching existing ones.
class EmbeddingTable {
public:
    EmbeddingTable() = default;

    template <typename T>
    static EmbeddingTable create(ParamStore<T>& store, const std::string& prefix, std::size_t num_labels,
                                 std::size_t emb_dim, Rng& rng);

    template <typename T>
    std::size_t append_row(ParamStore<T>& store, std::vector<T> values, bool trainable);

    /// Rows for `labels`, shape [labels.size() x emb_dim].
    template <typename T>
    Var lookup(Tape<T>& tape, std::span<const Var> bound, std::span<const std::size_t> labels) const;

    template <typename T>
    std::span<const T> row(const ParamStore<T>& store, std::size_t label) const {
        return store[rows_.at(label)].value.values();
    }

    std::size_t row_param(std::size_t label) const { return rows_.at(label); }
    std::size_t num_labels() const { return rows_.size(); }
    std::size_t emb_dim() const { return emb_dim_; }
    const std::string& prefix() const { return prefix_; }

private:
    std::string prefix_;
    std::size_t emb_dim_ = 0;
    std::vector<std::size_t> rows_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    std::map<std::string, Tensor<T>> m;
    std::map<std::string, Tensor<T>> v;
};

/// Bias-corrected Adam update of every trainable parameter. Frozen
/// parameters are skipped even when a gradient is supplied.
template <typename T>
void adam_step(ParamStore<T>& store, const GradientSet<T>& grads, AdamState<T>& state);

}  // namespace macl::nn
