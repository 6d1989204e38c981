#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "macl/adaptation.hpp"
#include "macl/affinity.hpp"
#include "macl/cgan.hpp"
#include "macl/tasks.hpp"

namespace macl::run {

struct SuiteConfig {
    std::string kind = "ring";  // ring | idx

    // ring
    std::size_t modes = 6;
    double radius = 5.0;
    double stddev = 0.5;
    std::size_t samples_per_mode = 500;
    std::vector<std::size_t> target_sources;  // empty plants one target per mode
    double target_distance = 0.25;
    std::size_t target_samples = 500;

    // idx
    std::string images;
    std::string labels;
    std::size_t side = 8;
    std::vector<std::size_t> source_classes;
    std::vector<std::size_t> target_classes;
    std::size_t max_per_class = 0;  // 0 keeps every image
};

struct ModelConfig {
    std::size_t z_dim = 16;
    std::size_t emb_dim = 8;
    std::vector<std::size_t> hidden = {64, 64};
    Activation activation = Activation::leaky_relu;
};

struct RunConfig {
    SuiteConfig suite;
    ModelConfig model;
    gan::GanConfig gan;
    adapt::ContinualConfig continual;
    affinity::AffinityConfig affinity;
    adapt::EvalSettings eval;
    std::vector<std::uint64_t> seeds = {1};
    std::string out = "runs/default";
};

/// Every key with its default value; `print-config` emits this.
nlohmann::ordered_json default_config_json();

/// Overlays `user` on the defaults. Unknown keys and wrong types raise
/// ConfigError naming the key; `suite.kind` must be present.
RunConfig parse_config(const nlohmann::ordered_json& user);
RunConfig load_config(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const RunConfig& cfg);

gan::ModelSpec model_spec(const RunConfig& cfg, std::size_t data_dim, std::size_t num_labels);

/// Sources and targets for one seed. For ring suites every target is a
/// planted copy of a source; idx suites hold out target_classes.
tasks::Suite build_suite(const RunConfig& cfg, std::uint64_t seed);

/// GAN and continual settings with the per-seed seed filled in.
gan::GanConfig gan_config(const RunConfig& cfg, std::uint64_t seed);
adapt::ContinualConfig continual_config(const RunConfig& cfg, std::uint64_t seed);
affinity::AffinityConfig affinity_config(const RunConfig& cfg, std::uint64_t seed);

}  // namespace macl::run
