#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "macl/nn.hpp"
#include "macl/rng.hpp"
#include "macl/tape.hpp"

namespace macl::gan {

/// Architecture of a conditional generator/discriminator pair. Both nets
/// concatenate their input with a label embedding at the first layer.
struct ModelSpec {
    std::size_t data_dim = 2;
    std::size_t num_labels = 1;
    std::size_t z_dim = 16;
    std::size_t emb_dim = 8;
    std::vector<std::size_t> hidden = {64, 64};
    Activation activation = Activation::leaky_relu;

    static ModelSpec planar(std::size_t num_labels) { return ModelSpec{2, num_labels, 16, 8, {64, 64}}; }
    static ModelSpec image(std::size_t side, std::size_t num_labels) {
        return ModelSpec{side * side, num_labels, 64, 32, {256, 256}};
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

template <typename T>
struct Generator {
    nn::ParamStore<T> store;
    nn::Mlp body;
    nn::EmbeddingTable embedding;
    std::size_t z_dim = 0;
    std::size_t out_dim = 0;

    Var forward(Tape<T>& tape, std::span<const Var> bound, Var z, Var cond) const;
};

template <typename T>
struct Discriminator {
    nn::ParamStore<T> store;
    nn::Mlp body;
    nn::EmbeddingTable embedding;
    std::size_t input_dim = 0;

    /// One logit per row of `x`.
    Var forward(Tape<T>& tape, std::span<const Var> bound, Var x, Var cond) const;
};

/// Generator, discriminator, training-step counter and the RNG that drives
/// noise and batch draws during training.
template <typename T>
struct Cgan {
    ModelSpec spec;
    Generator<T> g;
    Discriminator<T> d;
    std::uint64_t step = 0;
    Rng rng;

    std::size_t num_labels() const { return g.embedding.num_labels(); }

    template <typename U>
    Cgan<U> cast() const;
};

/// Deterministic initialization from `seed`.
template <typename T>
Cgan<T> create_cgan(const ModelSpec& spec, std::uint64_t seed);

struct GanConfig {
    double lr = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.999;
    std::size_t batch_size = 64;
    std::size_t d_steps_per_g_step = 1;
    std::size_t total_steps = 3000;
    std::uint64_t seed = 0;
    bool label_smoothing = false;

    void validate() const;
    nn::AdamConfig adam() const { return {lr, beta1, beta2, 1e-8}; }
};

template <typename T>
struct Optimizers {
    nn::AdamState<T> g;
    nn::AdamState<T> d;

    explicit Optimizers(const nn::AdamConfig& cfg) {
        g.config = cfg;
        d.config = cfg;
    }
};

/// Real samples with their conditioning labels.
template <typename T>
struct LabeledData {
    Tensor<T> x;
    std::vector<std::size_t> labels;

    std::size_t size() const { return labels.size(); }
};

/// `m` rows drawn uniformly with replacement.
template <typename T>
LabeledData<T> sample_batch(const LabeledData<T>& data, std::size_t m, Rng& rng);

/// Descent on BCE(D(real), 1) + BCE(D(G(z)), 0) over the D parameters; the
/// fake batch reuses the real batch's labels. Returns the mean loss.
template <typename T>
double d_step(Cgan<T>& model, nn::AdamState<T>& opt, const Tensor<T>& real, std::span<const std::size_t> labels,
              bool label_smoothing = false);

/// Non-saturating generator step: descent on BCE(D(G(z)), 1) with D frozen.
template <typename T>
double g_step(Cgan<T>& model, nn::AdamState<T>& opt, std::span<const std::size_t> labels);

struct StepLosses {
    double d_loss = 0;
    double g_loss = 0;
};

/// d_steps_per_g_step discriminator steps on fresh batches, then one
/// generator step conditioned on the last batch's labels.
template <typename T>
StepLosses gan_update(Cgan<T>& model, Optimizers<T>& opt, const LabeledData<T>& data, const GanConfig& cfg);

struct LossPoint {
    std::uint64_t step = 0;
    double d_loss = 0;
    double g_loss = 0;
};

using LossCurve = std::vector<LossPoint>;

/// Trains a fresh model on all classes of `data`.
template <typename T>
Cgan<T> pretrain(const ModelSpec& spec, const GanConfig& cfg, const LabeledData<T>& data, LossCurve* curve = nullptr);

/// Continues adversarial training of `model` for cfg.total_steps steps.
template <typename T>
void train(Cgan<T>& model, const GanConfig& cfg, const LabeledData<T>& data, LossCurve* curve = nullptr);

/// n generated rows for `label`; fully determined by (generator, label, n, seed).
template <typename T>
Tensor<T> sample(const Generator<T>& g, std::size_t label, std::size_t n, std::uint64_t seed);

/// n generated rows conditioned on an explicit embedding vector.
template <typename T>
Tensor<T> sample(const Generator<T>& g, std::span<const T> embedding, std::size_t n, std::uint64_t seed);

/// Raw discriminator logits, [n x 1].
template <typename T>
Tensor<T> discriminate(const Discriminator<T>& d, const Tensor<T>& x, std::span<const std::size_t> labels);

}  // namespace macl::gan
