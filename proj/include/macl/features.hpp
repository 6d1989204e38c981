#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "macl/checkpoint.hpp"
#include "macl/nn.hpp"
#include "macl/tensor.hpp"

namespace macl::eval {

struct ClassifierConfig {
    std::vector<std::size_t> hidden = {64, 64};
    std::size_t steps = 2000;
    std::size_t batch = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0xc1a5;
};

/// Small one-vs-rest classifier over the source modes. Its last hidden layer
/// (after the activation) is the feature space for Frechet scoring of image
/// suites, where raw pixel statistics are a poor proxy.
class FeatureClassifier {
public:
    static FeatureClassifier train(std::span<const Tensor<double>> per_class, const ClassifierConfig& cfg);

    Tensor<double> features(const Tensor<double>& x) const;
    Tensor<double> logits(const Tensor<double>& x) const;
    std::size_t predict(std::span<const double> x) const;

    std::size_t in_dim() const { return trunk_.in_dim(); }
    std::size_t feature_dim() const { return trunk_.out_dim(); }
    std::size_t classes() const { return head_.out_dim(); }

    gan::CheckpointData to_checkpoint() const;
    static FeatureClassifier from_checkpoint(const gan::CheckpointData& data);

    void save(const std::filesystem::path& path) const;
    static FeatureClassifier load(const std::filesystem::path& path);

    friend bool operator==(const FeatureClassifier& a, const FeatureClassifier& b) { return a.store_ == b.store_; }

private:
    static FeatureClassifier create(std::size_t in_dim, std::span<const std::size_t> hidden, std::size_t classes,
                                    std::uint64_t seed);
    Var forward_features(Tape<double>& tape, std::span<const Var> bound, Var x) const;

    nn::ParamStore<double> store_;
    nn::Mlp trunk_;
    nn::Mlp head_;
};

}  // namespace macl::eval
