#include "macl/config.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

namespace macl::run {

using json = nlohmann::ordered_json;

namespace {

const std::map<std::string, Activation> kActivations = {{"relu", Activation::relu},
                                                        {"leaky_relu", Activation::leaky_relu},
                                                        {"tanh", Activation::tanh},
                                                        {"sigmoid", Activation::sigmoid},
                                                        {"identity", Activation::identity}};

std::string activation_name(Activation a) {
    for (const auto& [name, act] : kActivations)
        if (act == a) return name;
    return "?";
}

std::string normalization_name(affinity::Normalization n) {
    switch (n) {
        case affinity::Normalization::none: return "none";
        case affinity::Normalization::trace: return "trace";
        case affinity::Normalization::l2: return "l2";
    }
    return "?";
}

json to_json_impl(const RunConfig& c) {
    json j;
    const auto& s = c.suite;
    j["suite"] = {{"kind", s.kind},
                  {"modes", s.modes},
                  {"radius", s.radius},
                  {"stddev", s.stddev},
                  {"samples_per_mode", s.samples_per_mode},
                  {"target_sources", s.target_sources},
                  {"target_distance", s.target_distance},
                  {"target_samples", s.target_samples},
                  {"images", s.images},
                  {"labels", s.labels},
                  {"side", s.side},
                  {"source_classes", s.source_classes},
                  {"target_classes", s.target_classes},
                  {"max_per_class", s.max_per_class}};
    j["model"] = {{"z_dim", c.model.z_dim},
                  {"emb_dim", c.model.emb_dim},
                  {"hidden", c.model.hidden},
                  {"activation", activation_name(c.model.activation)}};
    j["gan"] = {{"lr", c.gan.lr},
                {"beta1", c.gan.beta1},
                {"beta2", c.gan.beta2},
                {"batch_size", c.gan.batch_size},
                {"d_steps_per_g_step", c.gan.d_steps_per_g_step},
                {"total_steps", c.gan.total_steps},
                {"label_smoothing", c.gan.label_smoothing}};
    const auto& k = c.continual;
    j["continual"] = {{"top_n", k.top_n},
                      {"replay_ratio", k.replay_ratio},
                      {"fine_tune_steps", k.fine_tune_steps},
                      {"few_shot_k", k.few_shot_k},
                      {"weighting", k.weighting == adapt::Weighting::literal ? "literal" : "inverse"},
                      {"target_row_trainable", k.target_row_trainable},
                      {"replay_policy", k.replay_policy == adapt::ReplayPolicy::fixed ? "static" : "regenerate"},
                      {"replay_scope", k.replay_scope == adapt::ReplayScope::closest ? "closest" : "all"},
                      {"replay_samples", k.replay_samples},
                      {"lr", k.gan.lr}};
    j["affinity"] = {
        {"batches", c.affinity.schedule.batches},
        {"batch_size", c.affinity.schedule.batch_size},
        {"normalization", normalization_name(c.affinity.schedule.normalization)},
        {"gradient", c.affinity.schedule.gradient == affinity::FisherGradient::per_sample ? "per_sample" : "per_batch"},
        {"fake_samples", c.affinity.fake_samples},
        {"conditioning", c.affinity.conditioning == affinity::Conditioning::source ? "source" : "target"}};
    j["eval"] = {{"samples", c.eval.samples},
                 {"seed", c.eval.seed},
                 {"features", c.eval.features == eval::FeatureSpace::raw ? "raw" : "classifier"},
                 {"classifier_steps", c.eval.classifier_steps}};
    j["seeds"] = c.seeds;
    j["out"] = c.out;
    return j;
}

/// Copies `user` onto `base`, refusing keys the defaults do not have.
void overlay(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError("'" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        auto& slot = base[it.key()];
        if (slot.is_object())
            overlay(slot, it.value(), key);
        else
            slot = it.value();
    }
}

template <typename T>
T get(const json& root, const std::string& section, const std::string& key) {
    const std::string name = section.empty() ? key : section + "." + key;
    try {
        const json& node = section.empty() ? root.at(key) : root.at(section).at(key);
        if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
            if (node.is_number_integer() && node.get<long long>() < 0) throw ConfigError("'" + name + "' must be >= 0");
            if (!node.is_number_integer()) throw ConfigError("'" + name + "' must be an integer");
        }
        if constexpr (std::is_same_v<T, double>)
            if (!node.is_number()) throw ConfigError("'" + name + "' must be a number");
        return node.get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config key '" + name + "': " + e.what());
    }
}

template <typename E>
E pick(const json& root, const std::string& section, const std::string& key,
       std::initializer_list<std::pair<const char*, E>> options) {
    const auto value = get<std::string>(root, section, key);
    std::string allowed;
    for (const auto& [name, e] : options) {
        if (value == name) return e;
        allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    }
    throw ConfigError("'" + section + "." + key + "' is '" + value + "'; expected one of " + allowed);
}

void validate(const RunConfig& c) {
    const auto& s = c.suite;
    if (s.kind == "ring") {
        if (s.modes < 2) throw ConfigError("suite.modes must be >= 2");
        if (!(s.radius > 0) || !(s.stddev > 0)) throw ConfigError("suite.radius and suite.stddev must be > 0");
        if (s.samples_per_mode < 2 || s.target_samples < 2) throw ConfigError("suite sample counts must be >= 2");
        for (std::size_t t : s.target_sources)
            if (t >= s.modes) throw ConfigError("suite.target_sources entry " + std::to_string(t) + " >= suite.modes");
    } else if (s.kind == "idx") {
        if (s.images.empty() || s.labels.empty()) throw ConfigError("idx suites need suite.images and suite.labels");
        if (s.side != 8 && s.side != 16) throw ConfigError("suite.side must be 8 or 16");
        if (s.source_classes.size() < 2) throw ConfigError("suite.source_classes needs at least 2 classes");
        if (s.target_classes.empty()) throw ConfigError("suite.target_classes must not be empty");
        std::set<std::size_t> seen;
        for (auto v : s.source_classes)
            if (!seen.insert(v).second) throw ConfigError("suite classes must be distinct");
        for (auto v : s.target_classes)
            if (!seen.insert(v).second) throw ConfigError("suite classes must be distinct");
    } else {
        throw ConfigError("suite.kind is '" + s.kind + "'; expected ring or idx");
    }
    if (c.model.z_dim == 0 || c.model.emb_dim == 0) throw ConfigError("model.z_dim and model.emb_dim must be >= 1");
    for (std::size_t h : c.model.hidden)
        if (h == 0) throw ConfigError("model.hidden widths must be >= 1");
    c.gan.validate();
    if (!(c.continual.gan.lr > 0)) throw ConfigError("continual.lr must be > 0");
    c.continual.validate();
    if (c.affinity.schedule.batches == 0 || c.affinity.schedule.batch_size == 0)
        throw ConfigError("affinity.batches and affinity.batch_size must be >= 1");
    if (c.affinity.schedule.normalization == affinity::Normalization::none)
        throw ConfigError("affinity.normalization must be trace or l2");
    if (c.affinity.fake_samples == 0) throw ConfigError("affinity.fake_samples must be >= 1");
    if (c.eval.samples < 2) throw ConfigError("eval.samples must be >= 2");
    if (c.eval.features == eval::FeatureSpace::classifier && c.eval.classifier_steps == 0)
        throw ConfigError("eval.classifier_steps must be >= 1 when eval.features is classifier");
    if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
}

}  // namespace

json default_config_json() { return to_json_impl(RunConfig{}); }

json to_json(const RunConfig& cfg) { return to_json_impl(cfg); }

RunConfig parse_config(const json& user) {
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    if (!user.contains("suite") || !user["suite"].is_object() || !user["suite"].contains("kind"))
        throw ConfigError("missing required config key 'suite.kind'");
    json j = default_config_json();
    if (user["suite"]["kind"] == "idx") {
        j["model"]["z_dim"] = 64;
        j["model"]["emb_dim"] = 32;
        j["model"]["hidden"] = {256, 256};
    }
    overlay(j, user, "");

    RunConfig c;
    auto& s = c.suite;
    s.kind = get<std::string>(j, "suite", "kind");
    s.modes = get<std::size_t>(j, "suite", "modes");
    s.radius = get<double>(j, "suite", "radius");
    s.stddev = get<double>(j, "suite", "stddev");
    s.samples_per_mode = get<std::size_t>(j, "suite", "samples_per_mode");
    s.target_sources = get<std::vector<std::size_t>>(j, "suite", "target_sources");
    s.target_distance = get<double>(j, "suite", "target_distance");
    s.target_samples = get<std::size_t>(j, "suite", "target_samples");
    s.images = get<std::string>(j, "suite", "images");
    s.labels = get<std::string>(j, "suite", "labels");
    s.side = get<std::size_t>(j, "suite", "side");
    s.source_classes = get<std::vector<std::size_t>>(j, "suite", "source_classes");
    s.target_classes = get<std::vector<std::size_t>>(j, "suite", "target_classes");
    s.max_per_class = get<std::size_t>(j, "suite", "max_per_class");

    c.model.z_dim = get<std::size_t>(j, "model", "z_dim");
    c.model.emb_dim = get<std::size_t>(j, "model", "emb_dim");
    c.model.hidden = get<std::vector<std::size_t>>(j, "model", "hidden");
    const auto act = get<std::string>(j, "model", "activation");
    if (!kActivations.contains(act)) throw ConfigError("'model.activation' is '" + act + "'");
    c.model.activation = kActivations.at(act);

    c.gan.lr = get<double>(j, "gan", "lr");
    c.gan.beta1 = get<double>(j, "gan", "beta1");
    c.gan.beta2 = get<double>(j, "gan", "beta2");
    c.gan.batch_size = get<std::size_t>(j, "gan", "batch_size");
    c.gan.d_steps_per_g_step = get<std::size_t>(j, "gan", "d_steps_per_g_step");
    c.gan.total_steps = get<std::size_t>(j, "gan", "total_steps");
    c.gan.label_smoothing = get<bool>(j, "gan", "label_smoothing");

    auto& k = c.continual;
    k.top_n = get<std::size_t>(j, "continual", "top_n");
    k.replay_ratio = get<std::size_t>(j, "continual", "replay_ratio");
    k.fine_tune_steps = get<std::size_t>(j, "continual", "fine_tune_steps");
    k.few_shot_k = get<std::size_t>(j, "continual", "few_shot_k");
    k.weighting = pick<adapt::Weighting>(j, "continual", "weighting",
                                         {{"literal", adapt::Weighting::literal}, {"inverse", adapt::Weighting::inverse}});
    k.target_row_trainable = get<bool>(j, "continual", "target_row_trainable");
    k.replay_policy = pick<adapt::ReplayPolicy>(
        j, "continual", "replay_policy",
        {{"static", adapt::ReplayPolicy::fixed}, {"regenerate", adapt::ReplayPolicy::regenerate}});
    k.replay_scope = pick<adapt::ReplayScope>(j, "continual", "replay_scope",
                                              {{"closest", adapt::ReplayScope::closest}, {"all", adapt::ReplayScope::all}});
    k.replay_samples = get<std::size_t>(j, "continual", "replay_samples");
    k.gan = c.gan;
    k.gan.lr = get<double>(j, "continual", "lr");

    c.affinity.schedule.batches = get<std::size_t>(j, "affinity", "batches");
    c.affinity.schedule.batch_size = get<std::size_t>(j, "affinity", "batch_size");
    c.affinity.schedule.normalization = pick<affinity::Normalization>(
        j, "affinity", "normalization",
        {{"trace", affinity::Normalization::trace}, {"l2", affinity::Normalization::l2}});
    c.affinity.schedule.gradient = pick<affinity::FisherGradient>(
        j, "affinity", "gradient",
        {{"per_sample", affinity::FisherGradient::per_sample}, {"per_batch", affinity::FisherGradient::per_batch}});
    c.affinity.fake_samples = get<std::size_t>(j, "affinity", "fake_samples");
    c.affinity.conditioning = pick<affinity::Conditioning>(
        j, "affinity", "conditioning",
        {{"source", affinity::Conditioning::source}, {"target", affinity::Conditioning::target}});

    c.eval.samples = get<std::size_t>(j, "eval", "samples");
    c.eval.seed = get<std::uint64_t>(j, "eval", "seed");
    c.eval.features = pick<eval::FeatureSpace>(
        j, "eval", "features", {{"raw", eval::FeatureSpace::raw}, {"classifier", eval::FeatureSpace::classifier}});
    c.eval.classifier_steps = get<std::size_t>(j, "eval", "classifier_steps");
    c.seeds = get<std::vector<std::uint64_t>>(j, "", "seeds");
    c.out = get<std::string>(j, "", "out");

    validate(c);
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

gan::ModelSpec model_spec(const RunConfig& cfg, std::size_t data_dim, std::size_t num_labels) {
    return gan::ModelSpec{data_dim,          num_labels,       cfg.model.z_dim,
                          cfg.model.emb_dim, cfg.model.hidden, cfg.model.activation};
}

namespace {

tasks::Suite idx_suite(const SuiteConfig& s) {
    const tasks::Dataset all = tasks::load_idx_images(s.images, s.labels, s.side);
    const auto by_class = tasks::split_by_class(all);

    const auto take = [&](std::size_t cls) {
        const auto it = by_class.find(cls);
        if (it == by_class.end()) throw ConfigError("class " + std::to_string(cls) + " has no images");
        Tensor<double> x = it->second.samples;
        if (s.max_per_class > 0 && x.rows() > s.max_per_class) {
            std::vector<std::size_t> idx(s.max_per_class);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
            x = x.gather_rows(idx);
        }
        return x;
    };

    tasks::Suite suite;
    std::vector<Tensor<double>> src, tgt;
    for (std::size_t i = 0; i < s.source_classes.size(); ++i) {
        src.push_back(take(s.source_classes[i]));
        suite.sources.labels.insert(suite.sources.labels.end(), src.back().rows(), i);
        suite.tasks.push_back({i, "class" + std::to_string(s.source_classes[i]), s.images, s.side * s.side});
    }
    for (std::size_t t = 0; t < s.target_classes.size(); ++t) {
        tgt.push_back(take(s.target_classes[t]));
        suite.targets.labels.insert(suite.targets.labels.end(), tgt.back().rows(), t);
        suite.target_names.push_back("class" + std::to_string(s.target_classes[t]));
    }
    suite.sources.samples = vstack<double>(src);
    suite.targets.samples = vstack<double>(tgt);
    suite.sources.normalization = suite.targets.normalization = all.normalization;
    return suite;
}

}  // namespace

tasks::Suite build_suite(const RunConfig& cfg, std::uint64_t seed) {
    const auto& s = cfg.suite;
    if (s.kind == "idx") return idx_suite(s);
    auto spec = tasks::MixtureSpec::ring(s.modes, s.radius, s.stddev, s.samples_per_mode);
    std::vector<std::size_t> planted = s.target_sources;
    if (planted.empty())
        for (std::size_t m = 0; m < s.modes; ++m) planted.push_back(m);
    for (std::size_t src : planted) spec.plant_radial(src, s.target_distance, s.target_samples, "near" + std::to_string(src));
    return tasks::gaussian_mixture_suite(spec, seed);
}

gan::GanConfig gan_config(const RunConfig& cfg, std::uint64_t seed) {
    gan::GanConfig g = cfg.gan;
    g.seed = seed;
    return g;
}

adapt::ContinualConfig continual_config(const RunConfig& cfg, std::uint64_t seed) {
    adapt::ContinualConfig k = cfg.continual;
    k.gan = gan_config(cfg, seed);
    k.gan.lr = cfg.continual.gan.lr;
    k.seed = seed;
    return k;
}

affinity::AffinityConfig affinity_config(const RunConfig& cfg, std::uint64_t seed) {
    affinity::AffinityConfig a = cfg.affinity;
    a.schedule.seed = seed;
    a.fake_seed = cfg.affinity.fake_seed ^ seed;
    return a;
}

}  // namespace macl::run
