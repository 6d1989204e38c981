#include "macl/cgan.hpp"

#include <string>

namespace macl::gan {

template <typename T>
Var Generator<T>::forward(Tape<T>& tape, std::span<const Var> bound, Var z, Var cond) const {
    return body.forward(tape, bound, tape.concat_cols(z, cond));
}

template <typename T>
Var Discriminator<T>::forward(Tape<T>& tape, std::span<const Var> bound, Var x, Var cond) const {
    return body.forward(tape, bound, tape.concat_cols(x, cond));
}

template <typename T>
template <typename U>
Cgan<U> Cgan<T>::cast() const {
    Cgan<U> out;
    out.spec = spec;
    out.g.store = g.store.template cast<U>();
    out.g.body = g.body;
    out.g.embedding = g.embedding;
    out.g.z_dim = g.z_dim;
    out.g.out_dim = g.out_dim;
    out.d.store = d.store.template cast<U>();
    out.d.body = d.body;
    out.d.embedding = d.embedding;
    out.d.input_dim = d.input_dim;
    out.step = step;
    out.rng = rng;
    return out;
}

template <typename T>
Cgan<T> create_cgan(const ModelSpec& spec, std::uint64_t seed) {
    if (spec.data_dim == 0 || spec.z_dim == 0 || spec.emb_dim == 0)
        throw ContractError("model spec has a zero-width dimension");
    Cgan<T> model;
    model.spec = spec;
    Rng init(seed);

    nn::MlpSpec gspec{{spec.z_dim + spec.emb_dim}, spec.activation};
    gspec.sizes.insert(gspec.sizes.end(), spec.hidden.begin(), spec.hidden.end());
    gspec.sizes.push_back(spec.data_dim);
    model.g.body = nn::Mlp::create(model.g.store, "generator", gspec, init);
    model.g.embedding = nn::EmbeddingTable::create(model.g.store, "generator", spec.num_labels, spec.emb_dim, init);
    model.g.z_dim = spec.z_dim;
    model.g.out_dim = spec.data_dim;

    nn::MlpSpec dspec{{spec.data_dim + spec.emb_dim}, spec.activation};
    dspec.sizes.insert(dspec.sizes.end(), spec.hidden.begin(), spec.hidden.end());
    dspec.sizes.push_back(1);
    model.d.body = nn::Mlp::create(model.d.store, "discriminator", dspec, init);
    model.d.embedding =
        nn::EmbeddingTable::create(model.d.store, "discriminator", spec.num_labels, spec.emb_dim, init);
    model.d.input_dim = spec.data_dim;

    model.rng = init.fork(0x6761);
    return model;
}

void GanConfig::validate() const {
    if (!(lr >= 0)) throw ConfigError("gan.lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("gan betas must lie in [0, 1)");
    if (batch_size < 2) throw ConfigError("gan.batch_size must be >= 2");
    if (d_steps_per_g_step < 1) throw ConfigError("gan.d_steps_per_g_step must be >= 1");
}

template <typename T>
LabeledData<T> sample_batch(const LabeledData<T>& data, std::size_t m, Rng& rng) {
    if (data.size() == 0) throw ContractError("cannot draw a batch from empty data");
    std::vector<std::size_t> idx(m);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(data.size()));
    LabeledData<T> out;
    out.x = data.x.gather_rows(idx);
    out.labels.reserve(m);
    for (std::size_t i : idx) out.labels.push_back(data.labels[i]);
    return out;
}

namespace {

template <typename T>
Tensor<T> noise(std::size_t n, std::size_t dim, Rng& rng) {
    Tensor<T> z = Tensor<T>::matrix(n, dim);
    for (auto& v : z.values()) v = static_cast<T>(rng.normal());
    return z;
}

template <typename T>
Tensor<T> labels_matrix(std::size_t n, T value) {
    return Tensor<T>::matrix(n, 1, value);
}

}  // namespace

template <typename T>
double d_step(Cgan<T>& model, nn::AdamState<T>& opt, const Tensor<T>& real, std::span<const std::size_t> labels,
              bool label_smoothing) {
    const std::size_t m = real.rows();
    if (m == 0) throw ContractError("d_step: empty batch");
    if (labels.size() != m) throw DimensionError("d_step: labels and batch differ in length");

    Tape<T> tape;
    const auto gvars = model.g.store.bind(tape, false);
    const auto dvars = model.d.store.bind(tape, true);

    const Var z = tape.constant(noise<T>(m, model.g.z_dim, model.rng));
    const Var fake = model.g.forward(tape, gvars, z, model.g.embedding.lookup(tape, gvars, labels));
    const Var dcond = model.d.embedding.lookup(tape, dvars, labels);
    const Var real_logits = model.d.forward(tape, dvars, tape.constant(real), dcond);
    const Var fake_logits = model.d.forward(tape, dvars, tape.constant(tape.value(fake)), dcond);

    Var loss;
    if (!label_smoothing) {
        const std::vector<Var> parts = {real_logits, fake_logits};
        Tensor<T> targets = labels_matrix<T>(2 * m, T(0));
        for (std::size_t i = 0; i < m; ++i) targets[i] = T(1);
        loss = tape.bce_with_logits(tape.stack_rows(parts), targets);
    } else {
        // One-sided smoothing: real target 0.9 expressed as a mix of the 0/1 losses.
        const Var real_hi = tape.bce_with_logits(real_logits, labels_matrix<T>(m, T(1)));
        const Var real_lo = tape.bce_with_logits(real_logits, labels_matrix<T>(m, T(0)));
        const Var real_loss = tape.add(tape.scale(real_hi, T(0.9)), tape.scale(real_lo, T(0.1)));
        const Var fake_loss = tape.bce_with_logits(fake_logits, labels_matrix<T>(m, T(0)));
        loss = tape.scale(tape.add(real_loss, fake_loss), T(0.5));
    }
    const auto grads = tape.backward(loss);
    nn::adam_step(model.d.store, grads, opt);
    return static_cast<double>(tape.value(loss).item());
}

template <typename T>
double g_step(Cgan<T>& model, nn::AdamState<T>& opt, std::span<const std::size_t> labels) {
    const std::size_t m = labels.size();
    if (m == 0) throw ContractError("g_step: empty batch");
    Tape<T> tape;
    const auto gvars = model.g.store.bind(tape, true);
    const auto dvars = model.d.store.bind(tape, false);

    const Var z = tape.constant(noise<T>(m, model.g.z_dim, model.rng));
    const Var fake = model.g.forward(tape, gvars, z, model.g.embedding.lookup(tape, gvars, labels));
    const Var logits = model.d.forward(tape, dvars, fake, model.d.embedding.lookup(tape, dvars, labels));
    const Var loss = tape.bce_with_logits(logits, labels_matrix<T>(m, T(1)));
    const auto grads = tape.backward(loss);
    nn::adam_step(model.g.store, grads, opt);
    return static_cast<double>(tape.value(loss).item());
}

template <typename T>
StepLosses gan_update(Cgan<T>& model, Optimizers<T>& opt, const LabeledData<T>& data, const GanConfig& cfg) {
    StepLosses out;
    std::vector<std::size_t> last_labels;
    for (std::size_t k = 0; k < cfg.d_steps_per_g_step; ++k) {
        auto batch = sample_batch(data, cfg.batch_size, model.rng);
        out.d_loss = d_step(model, opt.d, batch.x, batch.labels, cfg.label_smoothing);
        last_labels = std::move(batch.labels);
    }
    out.g_loss = g_step(model, opt.g, last_labels);
    ++model.step;
    return out;
}

template <typename T>
void train(Cgan<T>& model, const GanConfig& cfg, const LabeledData<T>& data, LossCurve* curve) {
    cfg.validate();
    Optimizers<T> opt(cfg.adam());
    for (std::size_t s = 0; s < cfg.total_steps; ++s) {
        const StepLosses l = gan_update(model, opt, data, cfg);
        if (curve) curve->push_back({model.step, l.d_loss, l.g_loss});
    }
}

template <typename T>
Cgan<T> pretrain(const ModelSpec& spec, const GanConfig& cfg, const LabeledData<T>& data, LossCurve* curve) {
    cfg.validate();
    if (data.x.rows() != data.size()) throw DimensionError("pretrain: sample/label count mismatch");
    if (data.x.cols() != spec.data_dim) throw DimensionError("pretrain: data width does not match model spec");
    std::vector<std::size_t> counts(spec.num_labels, 0);
    for (std::size_t l : data.labels) {
        if (l >= spec.num_labels) throw ContractError("pretrain: label " + std::to_string(l) + " out of range");
        ++counts[l];
    }
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0) throw ContractError("pretrain: class " + std::to_string(c) + " has no samples");

    Cgan<T> model = create_cgan<T>(spec, cfg.seed);
    train(model, cfg, data, curve);
    return model;
}

namespace {

template <typename T>
Tensor<T> run_generator(const Generator<T>& g, const Tensor<T>& cond, std::size_t n, std::uint64_t seed) {
    if (n == 0) return Tensor<T>({0, g.out_dim});
    Rng rng(seed);
    Tape<T> tape;
    const auto vars = g.store.bind(tape, false);
    const Var z = tape.constant(noise<T>(n, g.z_dim, rng));
    return tape.value(g.forward(tape, vars, z, tape.constant(cond)));
}

}  // namespace

template <typename T>
Tensor<T> sample(const Generator<T>& g, std::size_t label, std::size_t n, std::uint64_t seed) {
    if (label >= g.embedding.num_labels())
        throw ContractError("sample: label " + std::to_string(label) + " out of range");
    const auto row = g.embedding.row(g.store, label);
    return sample(g, row, n, seed);
}

template <typename T>
Tensor<T> sample(const Generator<T>& g, std::span<const T> embedding, std::size_t n, std::uint64_t seed) {
    if (embedding.size() != g.embedding.emb_dim()) throw DimensionError("sample: embedding width mismatch");
    Tensor<T> cond = Tensor<T>::matrix(n, embedding.size());
    for (std::size_t r = 0; r < n; ++r) std::copy(embedding.begin(), embedding.end(), cond.row(r).begin());
    return run_generator(g, cond, n, seed);
}

template <typename T>
Tensor<T> discriminate(const Discriminator<T>& d, const Tensor<T>& x, std::span<const std::size_t> labels) {
    Tape<T> tape;
    const auto vars = d.store.bind(tape, false);
    return tape.value(d.forward(tape, vars, tape.constant(x), d.embedding.lookup(tape, vars, labels)));
}

#define MACL_GAN_INSTANTIATE(T)                                                                                 \
    template struct Generator<T>;                                                                               \
    template struct Discriminator<T>;                                                                           \
    template Cgan<T> create_cgan<T>(const ModelSpec&, std::uint64_t);                                           \
    template LabeledData<T> sample_batch<T>(const LabeledData<T>&, std::size_t, Rng&);                          \
    template double d_step<T>(Cgan<T>&, nn::AdamState<T>&, const Tensor<T>&, std::span<const std::size_t>,      \
                              bool);                                                                            \
    template double g_step<T>(Cgan<T>&, nn::AdamState<T>&, std::span<const std::size_t>);                       \
    template StepLosses gan_update<T>(Cgan<T>&, Optimizers<T>&, const LabeledData<T>&, const GanConfig&);       \
    template void train<T>(Cgan<T>&, const GanConfig&, const LabeledData<T>&, LossCurve*);                      \
    template Cgan<T> pretrain<T>(const ModelSpec&, const GanConfig&, const LabeledData<T>&, LossCurve*);        \
    template Tensor<T> sample<T>(const Generator<T>&, std::size_t, std::size_t, std::uint64_t);                 \
    template Tensor<T> sample<T>(const Generator<T>&, std::span<const T>, std::size_t, std::uint64_t);          \
    template Tensor<T> discriminate<T>(const Discriminator<T>&, const Tensor<T>&, std::span<const std::size_t>);

MACL_GAN_INSTANTIATE(float)
MACL_GAN_INSTANTIATE(double)

template Cgan<double> Cgan<float>::cast<double>() const;
template Cgan<float> Cgan<double>::cast<float>() const;
template Cgan<float> Cgan<float>::cast<float>() const;
template Cgan<double> Cgan<double>::cast<double>() const;

}  // namespace macl::gan
