#include "macl/features.hpp"

#include <algorithm>
#include <string>

#include "macl/error.hpp"
#include "macl/rng.hpp"

namespace macl::eval {

FeatureClassifier FeatureClassifier::create(std::size_t in_dim, std::span<const std::size_t> hidden,
                                            std::size_t classes, std::uint64_t seed) {
    if (hidden.empty()) throw ContractError("FeatureClassifier: at least one hidden layer is required");
    if (classes < 2) throw ContractError("FeatureClassifier: need at least two classes");
    FeatureClassifier c;
    Rng rng(seed);
    nn::MlpSpec trunk;
    trunk.sizes.push_back(in_dim);
    trunk.sizes.insert(trunk.sizes.end(), hidden.begin(), hidden.end());
    c.trunk_ = nn::Mlp::create(c.store_, "classifier.trunk", trunk, rng);
    c.head_ = nn::Mlp::create(c.store_, "classifier.head", nn::MlpSpec{{hidden.back(), classes}}, rng);
    return c;
}

Var FeatureClassifier::forward_features(Tape<double>& tape, std::span<const Var> bound, Var x) const {
    return tape.activate(trunk_.forward(tape, bound, x), trunk_.spec().activation);
}

FeatureClassifier FeatureClassifier::train(std::span<const Tensor<double>> per_class, const ClassifierConfig& cfg) {
    if (per_class.size() < 2) throw ContractError("FeatureClassifier::train: need at least two classes");
    if (cfg.batch == 0) throw ContractError("FeatureClassifier::train: batch must be positive");
    const std::size_t dim = per_class.front().cols();
    std::vector<std::pair<std::size_t, std::size_t>> index;
    for (std::size_t k = 0; k < per_class.size(); ++k) {
        if (per_class[k].rows() == 0)
            throw ContractError("FeatureClassifier::train: class " + std::to_string(k) + " has no samples");
        if (per_class[k].cols() != dim)
            throw ContractError("FeatureClassifier::train: class " + std::to_string(k) + " has dimension " +
                                std::to_string(per_class[k].cols()) + ", expected " + std::to_string(dim));
        for (std::size_t r = 0; r < per_class[k].rows(); ++r) index.emplace_back(k, r);
    }

    FeatureClassifier c = create(dim, cfg.hidden, per_class.size(), cfg.seed);
    Rng rng(cfg.seed ^ 0x7e57);
    nn::AdamState<double> adam;
    adam.config.lr = cfg.lr;
    adam.config.beta1 = 0.9;

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        auto x = Tensor<double>::matrix(cfg.batch, dim);
        auto y = Tensor<double>::matrix(cfg.batch, per_class.size());
        for (std::size_t i = 0; i < cfg.batch; ++i) {
            const auto [k, r] = index[rng.below(index.size())];
            std::ranges::copy(per_class[k].row(r), x.row(i).begin());
            y.at(i, k) = 1.0;
        }
        Tape<double> tape;
        const auto vars = c.store_.bind(tape, true);
        const Var logits = c.head_.forward(tape, vars, c.forward_features(tape, vars, tape.constant(std::move(x))));
        const auto grads = tape.backward(tape.bce_with_logits(logits, y));
        nn::adam_step(c.store_, grads, adam);
    }
    return c;
}

Tensor<double> FeatureClassifier::features(const Tensor<double>& x) const {
    if (x.cols() != in_dim())
        throw ContractError("FeatureClassifier: input dimension " + std::to_string(x.cols()) + ", expected " +
                            std::to_string(in_dim()));
    Tape<double> tape;
    const auto vars = store_.bind(tape, false);
    return tape.value(forward_features(tape, vars, tape.constant(x)));
}

Tensor<double> FeatureClassifier::logits(const Tensor<double>& x) const {
    if (x.cols() != in_dim())
        throw ContractError("FeatureClassifier: input dimension " + std::to_string(x.cols()) + ", expected " +
                            std::to_string(in_dim()));
    Tape<double> tape;
    const auto vars = store_.bind(tape, false);
    return tape.value(head_.forward(tape, vars, forward_features(tape, vars, tape.constant(x))));
}

std::size_t FeatureClassifier::predict(std::span<const double> x) const {
    const auto out = logits(Tensor<double>::matrix(1, x.size(), std::vector<double>(x.begin(), x.end())));
    const auto v = out.values();
    return static_cast<std::size_t>(std::ranges::max_element(v) - v.begin());
}

gan::CheckpointData FeatureClassifier::to_checkpoint() const {
    gan::CheckpointData data;
    for (const auto& p : store_.params()) {
        gan::CheckpointEntry e;
        e.name = p.name;
        e.dtype = gan::DType::f64;
        e.shape = p.value.shape();
        e.values.assign(p.value.values().begin(), p.value.values().end());
        data.entries.push_back(std::move(e));
    }
    return data;
}

FeatureClassifier FeatureClassifier::from_checkpoint(const gan::CheckpointData& data) {
    // Architecture is read back from the weight shapes: trunk layers in order, then the head.
    std::vector<std::size_t> hidden;
    std::size_t in_dim = 0;
    std::size_t classes = 0;
    for (const auto& e : data.entries) {
        if (e.shape.size() != 2 || !e.name.ends_with(".weight")) continue;
        if (e.name.starts_with("classifier.trunk.")) {
            if (hidden.empty()) in_dim = e.shape[0];
            hidden.push_back(e.shape[1]);
        } else if (e.name.starts_with("classifier.head.")) {
            classes = e.shape[1];
        }
    }
    if (hidden.empty() || classes == 0) throw FormatError("checkpoint does not hold a feature classifier");

    FeatureClassifier c = create(in_dim, hidden, classes, 0);
    if (data.entries.size() != c.store_.size())
        throw FormatError("classifier checkpoint has " + std::to_string(data.entries.size()) + " parameters, expected " +
                          std::to_string(c.store_.size()));
    for (std::size_t i = 0; i < c.store_.size(); ++i) {
        auto& p = c.store_[i];
        const auto& e = data.entries[i];
        if (e.name != p.name || e.shape != p.value.shape())
            throw FormatError("classifier checkpoint parameter " + std::to_string(i) + " ('" + e.name +
                              "') does not match '" + p.name + "'");
        std::ranges::copy(e.values, p.value.values().begin());
    }
    return c;
}

void FeatureClassifier::save(const std::filesystem::path& path) const { gan::write_checkpoint(path, to_checkpoint()); }

FeatureClassifier FeatureClassifier::load(const std::filesystem::path& path) {
    return from_checkpoint(gan::read_checkpoint(path));
}

}  // namespace macl::eval
