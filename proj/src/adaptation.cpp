#include "macl/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace macl::adapt {

template <typename T>
std::vector<T> EmbeddingMix::materialize(const nn::EmbeddingTable& table, const nn::ParamStore<T>& store) const {
    std::vector<double> acc(table.emb_dim(), 0.0);
    for (const auto& [mode, w] : weights) {
        const auto row = table.row(store, mode);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(row[i]);
    }
    return std::vector<T>(acc.begin(), acc.end());
}

EmbeddingMix target_embedding_mix(std::span<const std::pair<std::size_t, double>> scores, Weighting weighting) {
    if (scores.empty()) throw ContractError("embedding mix needs at least one mode");
    std::set<std::size_t> seen;
    for (const auto& [mode, s] : scores) {
        if (!seen.insert(mode).second) throw ContractError("embedding mix: mode " + std::to_string(mode) + " repeated");
        if (!std::isfinite(s) || s < 0) throw ContractError("embedding mix: scores must be finite and >= 0");
    }

    EmbeddingMix mix;
    if (scores.size() == 1) {
        mix.weights.push_back({scores[0].first, 1.0});
        return mix;
    }
    std::vector<double> raw;
    for (const auto& [mode, s] : scores) {
        if (weighting == Weighting::inverse) {
            if (s == 0) throw ContractError("inverse weighting: score of mode " + std::to_string(mode) + " is zero");
            raw.push_back(1.0 / s);
        } else {
            raw.push_back(s);
        }
    }
    double total = 0;
    for (double r : raw) total += r;
    if (!(total > 0)) throw ContractError("literal weighting: scores sum to zero");
    for (std::size_t i = 0; i < scores.size(); ++i) mix.weights.push_back({scores[i].first, raw[i] / total});
    return mix;
}

namespace {

void check_mix(const EmbeddingMix& mix, std::size_t num_labels) {
    if (mix.weights.empty()) throw ContractError("embedding mix is empty");
    double total = 0;
    for (const auto& [mode, w] : mix.weights) {
        if (mode >= num_labels) throw ContractError("embedding mix refers to unknown mode " + std::to_string(mode));
        if (!(w >= 0)) throw ContractError("embedding mix has a negative weight");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("embedding mix weights do not sum to 1");
}

void check_column(std::span<const double> column, std::size_t num_labels) {
    if (column.size() != num_labels)
        throw ContractError("affinity column has " + std::to_string(column.size()) + " entries for " +
                            std::to_string(num_labels) + " modes");
    for (double v : column)
        if (!std::isfinite(v) || v < 0) throw ContractError("affinity column holds an invalid score");
}

template <typename T>
void restart_stream(gan::Cgan<T>& model, std::uint64_t seed) {
    model.rng = Rng(seed).fork(0x7475);
}

template <typename T>
gan::LabeledData<T> single_label(const Tensor<double>& x, std::size_t label) {
    return {x.cast<T>(), std::vector<std::size_t>(x.rows(), label)};
}

template <typename T>
gan::LabeledData<T> generate_replay(const gan::Cgan<T>& model, std::span<const std::size_t> modes, std::size_t n,
                                    std::uint64_t seed) {
    std::vector<Tensor<T>> parts;
    gan::LabeledData<T> out;
    for (std::size_t m : modes) {
        parts.push_back(gan::sample(model.g, m, n, seed + m));
        out.labels.insert(out.labels.end(), n, m);
    }
    out.x = vstack<T>(parts);
    return out;
}

template <typename T>
void fine_tune(gan::Cgan<T>& model, const gan::LabeledData<T>& data, const ContinualConfig& cfg,
               gan::LossCurve& curve) {
    gan::Optimizers<T> opt(cfg.gan.adam());
    for (std::size_t it = 0; it < cfg.fine_tune_steps; ++it) {
        const auto l = gan::gan_update(model, opt, data, cfg.gan);
        curve.push_back({model.step, l.d_loss, l.g_loss});
    }
}

}  // namespace

template <typename T>
std::size_t install_target_mode(gan::Cgan<T>& model, const EmbeddingMix& mix, bool trainable) {
    check_mix(mix, model.num_labels());
    auto grow = mix.materialize(model.g.embedding, model.g.store);
    auto drow = mix.materialize(model.d.embedding, model.d.store);
    const std::size_t label = model.g.embedding.append_row(model.g.store, std::move(grow), trainable);
    model.d.embedding.append_row(model.d.store, std::move(drow), trainable);
    model.spec.num_labels = model.num_labels();
    return label;
}

template <typename T>
std::size_t install_plain_mode(gan::Cgan<T>& model, std::uint64_t seed, bool trainable) {
    Rng rng(seed);
    const auto draw = [&](std::size_t n) {
        std::vector<T> v(n);
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, nn::kEmbeddingInitStd));
        return v;
    };
    const std::size_t label = model.g.embedding.append_row(model.g.store, draw(model.g.embedding.emb_dim()), trainable);
    model.d.embedding.append_row(model.d.store, draw(model.d.embedding.emb_dim()), trainable);
    model.spec.num_labels = model.num_labels();
    return label;
}

void ContinualConfig::validate() const {
    if (top_n < 1) throw ConfigError("continual.top_n must be >= 1");
    if (replay_ratio > 0 && replay_samples == 0) throw ConfigError("continual.replay_samples must be >= 1");
    gan.validate();
}

Tensor<double> training_subset(const Tensor<double>& target, const ContinualConfig& cfg) {
    if (target.rows() == 0) throw ContractError("target data is empty");
    if (cfg.few_shot_k == 0) return target;
    return tasks::few_shot(target, cfg.few_shot_k, cfg.seed);
}

template <typename T>
ContinualResult<T> continual_learn(gan::Cgan<T> model, const Tensor<double>& target,
                                   std::span<const double> affinity_column, const ContinualConfig& cfg) {
    cfg.validate();
    check_column(affinity_column, model.num_labels());
    const Tensor<double> train = training_subset(target, cfg);
    const std::size_t sources = model.num_labels();

    ContinualResult<T> out;
    out.closest = affinity::closest_modes(affinity_column, cfg.top_n);
    std::vector<std::pair<std::size_t, double>> scores;
    for (std::size_t m : out.closest) scores.push_back({m, affinity_column[m]});
    out.mix = target_embedding_mix(scores, cfg.weighting);
    out.target_label = install_target_mode(model, out.mix, cfg.target_row_trainable);

    std::vector<std::size_t> replayed = out.closest;
    if (cfg.replay_scope == ReplayScope::all) {
        replayed.clear();
        for (std::size_t m = 0; m < sources; ++m) replayed.push_back(m);
    }

    Rng root(cfg.seed);
    const std::uint64_t replay_seed = root.fork(0x7270)();
    restart_stream(model, cfg.seed);

    const auto target_data = single_label<T>(train, out.target_label);
    gan::LabeledData<T> replay;
    if (cfg.replay_ratio > 0) replay = generate_replay(model, replayed, cfg.replay_samples, replay_seed);
    const std::size_t refresh =
        std::max<std::size_t>(1, cfg.replay_samples * replayed.size() / cfg.gan.batch_size);

    gan::Optimizers<T> opt(cfg.gan.adam());
    for (std::size_t it = 0; it < cfg.fine_tune_steps; ++it) {
        const auto l = gan::gan_update(model, opt, target_data, cfg.gan);
        out.curve.push_back({model.step, l.d_loss, l.g_loss});
        for (std::size_t r = 0; r < cfg.replay_ratio; ++r) gan::gan_update(model, opt, replay, cfg.gan);
        if (cfg.replay_ratio > 0 && cfg.replay_policy == ReplayPolicy::regenerate && (it + 1) % refresh == 0)
            replay = generate_replay(model, replayed, cfg.replay_samples, replay_seed + (it + 1) * 0x9e37);
    }
    out.model = std::move(model);
    return out;
}

template <typename T>
TransferResult<T> transfer_learn(gan::Cgan<T> model, const Tensor<double>& target,
                                 std::span<const double> affinity_column, const ContinualConfig& cfg) {
    cfg.validate();
    check_column(affinity_column, model.num_labels());
    const Tensor<double> train = training_subset(target, cfg);

    TransferResult<T> out;
    out.closest = affinity::closest_modes(affinity_column, 1).front();
    restart_stream(model, cfg.seed);
    fine_tune(model, single_label<T>(train, out.closest), cfg, out.curve);
    out.model = std::move(model);
    return out;
}

template <typename T>
std::vector<double> affinity_column(const gan::Cgan<T>& model, std::span<const Tensor<double>> mode_data,
                                    const Tensor<double>& target, const affinity::AffinityConfig& cfg) {
    if (mode_data.size() != model.num_labels())
        throw ContractError("affinity column: real data for " + std::to_string(mode_data.size()) + " of " +
                            std::to_string(model.num_labels()) + " modes");
    std::vector<affinity::SourceMode<T>> sources;
    for (std::size_t m = 0; m < mode_data.size(); ++m)
        sources.push_back({"mode" + std::to_string(m), m, mode_data[m].cast<T>()});
    const std::vector<affinity::TargetSet<T>> targets = {{"target", target.cast<T>(), std::nullopt}};
    return affinity::affinity_matrix<T>(model, sources, targets, cfg).column(0);
}

template <typename T>
SequentialResult<T> sequential_targets(gan::Cgan<T> model, std::span<const Tensor<double>> source_data,
                                       std::span<const TargetStage> targets, const ContinualConfig& cfg,
                                       const affinity::AffinityConfig& affinity_cfg, const EvalSettings& eval_cfg,
                                       const eval::FeatureClassifier* features) {
    if (targets.empty()) throw ContractError("sequential learning needs at least one target");
    std::vector<Tensor<double>> mode_data(source_data.begin(), source_data.end());
    std::vector<Tensor<double>> reference = mode_data;

    SequentialResult<T> out;
    for (std::size_t s = 0; s < targets.size(); ++s) {
        ContinualConfig stage_cfg = cfg;
        stage_cfg.seed = cfg.seed + s;
        const Tensor<double> train = training_subset(targets[s].data, stage_cfg);
        stage_cfg.few_shot_k = 0;

        StageRecord rec;
        rec.name = targets[s].name;
        rec.affinity_column = affinity_column(model, mode_data, train, affinity_cfg);
        auto res = continual_learn(std::move(model), train, rec.affinity_column, stage_cfg);
        model = std::move(res.model);
        rec.closest = res.closest;
        rec.mix = res.mix;
        rec.target_label = res.target_label;

        mode_data.push_back(train);
        reference.push_back(targets[s].data);
        rec.retention = eval::mode_scores(model.g, std::span<const Tensor<double>>(reference), eval_cfg.samples,
                                          eval_cfg.seed, rec.target_label, rec.closest, features);
        out.stages.push_back(std::move(rec));
    }
    out.model = std::move(model);
    return out;
}

BaselineKind parse_baseline(std::string_view name) {
    if (name == "individual") return BaselineKind::individual;
    if (name == "sequential_finetune") return BaselineKind::sequential_finetune;
    if (name == "multitask") return BaselineKind::multitask;
    throw ConfigError("unknown baseline '" + std::string(name) +
                      "' (expected individual, sequential_finetune or multitask)");
}

std::string_view baseline_name(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::individual: return "individual";
        case BaselineKind::sequential_finetune: return "sequential_finetune";
        case BaselineKind::multitask: return "multitask";
    }
    return "?";
}

template <typename T>
BaselineResult<T> run_baseline(BaselineKind kind, const gan::Cgan<T>& pretrained, const tasks::Dataset& sources,
                               const Tensor<double>& target, const ContinualConfig& cfg) {
    cfg.validate();
    const Tensor<double> train = training_subset(target, cfg);
    BaselineResult<T> out;

    switch (kind) {
        case BaselineKind::individual: {
            gan::ModelSpec spec = pretrained.spec;
            spec.num_labels = 1;
            out.model = gan::create_cgan<T>(spec, cfg.seed);
            out.target_label = 0;
            restart_stream(out.model, cfg.seed);
            fine_tune(out.model, single_label<T>(train, 0), cfg, out.curve);
            break;
        }
        case BaselineKind::sequential_finetune: {
            out.model = pretrained;
            out.target_label = install_plain_mode(out.model, Rng(cfg.seed).fork(0x726f)(), cfg.target_row_trainable);
            restart_stream(out.model, cfg.seed);
            fine_tune(out.model, single_label<T>(train, out.target_label), cfg, out.curve);
            break;
        }
        case BaselineKind::multitask: {
            const std::size_t s = pretrained.num_labels();
            for (std::size_t l : sources.labels)
                if (l >= s) throw ContractError("multitask: source label out of range");
            gan::ModelSpec spec = pretrained.spec;
            spec.num_labels = s + 1;
            tasks::Dataset tgt{train, std::vector<std::size_t>(train.rows(), s), sources.normalization};
            const std::vector<tasks::Dataset> parts = {sources, tgt};
            gan::GanConfig gcfg = cfg.gan;
            gcfg.seed = cfg.seed;
            out.model = gan::pretrain(spec, gcfg, tasks::concat(parts).labeled<T>(), &out.curve);
            out.target_label = s;
            break;
        }
    }
    return out;
}

#define MACL_ADAPT_INSTANTIATE(T)                                                                                  \
    template std::vector<T> EmbeddingMix::materialize<T>(const nn::EmbeddingTable&, const nn::ParamStore<T>&)     \
        const;                                                                                                     \
    template std::size_t install_target_mode<T>(gan::Cgan<T>&, const EmbeddingMix&, bool);                         \
    template std::size_t install_plain_mode<T>(gan::Cgan<T>&, std::uint64_t, bool);                                \
    template ContinualResult<T> continual_learn<T>(gan::Cgan<T>, const Tensor<double>&, std::span<const double>,   \
                                                   const ContinualConfig&);                                        \
    template TransferResult<T> transfer_learn<T>(gan::Cgan<T>, const Tensor<double>&, std::span<const double>,     \
                                                 const ContinualConfig&);                                          \
    template std::vector<double> affinity_column<T>(const gan::Cgan<T>&, std::span<const Tensor<double>>,          \
                                                    const Tensor<double>&, const affinity::AffinityConfig&);       \
    template SequentialResult<T> sequential_targets<T>(gan::Cgan<T>, std::span<const Tensor<double>>,              \
                                                       std::span<const TargetStage>, const ContinualConfig&,       \
                                                       const affinity::AffinityConfig&, const EvalSettings&,  \
                                                       const eval::FeatureClassifier*);      \
    template BaselineResult<T> run_baseline<T>(BaselineKind, const gan::Cgan<T>&, const tasks::Dataset&,           \
                                               const Tensor<double>&, const ContinualConfig&);

MACL_ADAPT_INSTANTIATE(float)
MACL_ADAPT_INSTANTIATE(double)

}  // namespace macl::adapt
