#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "macl/affinity.hpp"
#include "macl/cgan.hpp"
#include "macl/eval.hpp"
#include "macl/tasks.hpp"

namespace macl::adapt {

enum class Weighting { literal, inverse };

/// Convex combination of existing label embeddings.
struct EmbeddingMix {
    std::vector<std::pair<std::size_t, double>> weights;  // (mode, weight), weights sum to 1

    /// sum_i w_i * table.row(mode_i), accumulated in double.
    template <typename T>
    std::vector<T> materialize(const nn::EmbeddingTable& table, const nn::ParamStore<T>& store) const;
};

/// literal: w_i = s_i / sum(s). inverse: w_i proportional to 1 / s_i.
EmbeddingMix target_embedding_mix(std::span<const std::pair<std::size_t, double>> scores, Weighting weighting);

/// Appends a row holding the mix to both embedding tables; returns its label.
template <typename T>
std::size_t install_target_mode(gan::Cgan<T>& model, const EmbeddingMix& mix, bool trainable = true);

/// Appends a row drawn from N(0, 0.02^2) to both tables; returns its label.
template <typename T>
std::size_t install_plain_mode(gan::Cgan<T>& model, std::uint64_t seed, bool trainable = true);

enum class ReplayPolicy { fixed, regenerate };
enum class ReplayScope { closest, all };

struct ContinualConfig {
    std::size_t top_n = 2;
    std::size_t replay_ratio = 1;  // replay updates per target update
    std::size_t fine_tune_steps = 500;
    std::size_t few_shot_k = 0;  // 0 uses every target sample
    Weighting weighting = Weighting::literal;
    bool target_row_trainable = true;
    ReplayPolicy replay_policy = ReplayPolicy::fixed;
    ReplayScope replay_scope = ReplayScope::closest;
    std::size_t replay_samples = 512;  // per replayed mode
    std::uint64_t seed = 0;
    /// Optimizer and batch settings. total_steps is only read by the
    /// multitask baseline, which retrains from scratch.
    gan::GanConfig gan;

    void validate() const;
};

template <typename T>
struct ContinualResult {
    gan::Cgan<T> model;
    std::size_t target_label = 0;
    std::vector<std::size_t> closest;
    EmbeddingMix mix;
    gan::LossCurve curve;
};

/// Target data after few-shot subsampling with the config's seed.
Tensor<double> training_subset(const Tensor<double>& target, const ContinualConfig& cfg);

/// Picks the top_n closest modes from `affinity_column` (one score per
/// existing mode), installs their mix as a new label, then alternates one
/// update on the target with replay_ratio updates on generated samples of
/// the replayed modes under their own labels.
template <typename T>
ContinualResult<T> continual_learn(gan::Cgan<T> model, const Tensor<double>& target,
                                   std::span<const double> affinity_column, const ContinualConfig& cfg);

template <typename T>
struct TransferResult {
    gan::Cgan<T> model;
    std::size_t closest = 0;
    gan::LossCurve curve;
};

/// Fine-tunes on the target relabeled as its single closest mode. The
/// closest mode is overwritten; no label is added and nothing is replayed.
template <typename T>
TransferResult<T> transfer_learn(gan::Cgan<T> model, const Tensor<double>& target,
                                 std::span<const double> affinity_column, const ContinualConfig& cfg);

struct TargetStage {
    std::string name;
    Tensor<double> data;  // full target set; few-shot subsampling happens per stage
};

struct StageRecord {
    std::string name;
    std::vector<double> affinity_column;
    std::vector<std::size_t> closest;
    EmbeddingMix mix;
    std::size_t target_label = 0;
    eval::RetentionReport retention;
};

template <typename T>
struct SequentialResult {
    gan::Cgan<T> model;
    std::vector<StageRecord> stages;
};

struct EvalSettings {
    std::size_t samples = 1000;
    std::uint64_t seed = 0xe7a1;
    eval::FeatureSpace features = eval::FeatureSpace::raw;
    std::size_t classifier_steps = 2000;
};

/// Continual learning over several targets in order. Each stage scores the
/// target against every mode present at that point, including earlier
/// targets (whose real data is their few-shot subset), then reports
/// retention over all modes.
template <typename T>
SequentialResult<T> sequential_targets(gan::Cgan<T> model, std::span<const Tensor<double>> source_data,
                                       std::span<const TargetStage> targets, const ContinualConfig& cfg,
                                       const affinity::AffinityConfig& affinity_cfg, const EvalSettings& eval_cfg,
                                       const eval::FeatureClassifier* features = nullptr);

/// Affinity of the target to every mode of `model`, in label order.
template <typename T>
std::vector<double> affinity_column(const gan::Cgan<T>& model, std::span<const Tensor<double>> mode_data,
                                    const Tensor<double>& target, const affinity::AffinityConfig& cfg);

enum class BaselineKind { individual, sequential_finetune, multitask };

BaselineKind parse_baseline(std::string_view name);
std::string_view baseline_name(BaselineKind kind);

template <typename T>
struct BaselineResult {
    gan::Cgan<T> model;
    std::size_t target_label = 0;
    gan::LossCurve curve;
};

/// individual: fresh one-label model trained on the target for
/// fine_tune_steps. sequential_finetune: `pretrained` plus a plain new row,
/// fine-tuned on the target without replay. multitask: fresh model over
/// sources and target jointly for gan.total_steps.
template <typename T>
BaselineResult<T> run_baseline(BaselineKind kind, const gan::Cgan<T>& pretrained, const tasks::Dataset& sources,
                               const Tensor<double>& target, const ContinualConfig& cfg);

}  // namespace macl::adapt
