#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "macl/cgan.hpp"
#include "macl/tensor.hpp"

namespace macl::tasks {

/// Per-dimension affine map into model space: y = x * scale + offset.
struct Normalization {
    std::vector<double> scale;
    std::vector<double> offset;

    /// Maps the per-dimension [min, max] of `raw` onto [-1, 1].
    static Normalization fit_range(const Tensor<double>& raw);
    static Normalization identity(std::size_t dim);

    Tensor<double> apply(const Tensor<double>& raw) const;
    Tensor<double> invert(const Tensor<double>& normalized) const;

    friend bool operator==(const Normalization&, const Normalization&) = default;
};

/// Samples (model space) with one mode id per row.
struct Dataset {
    Tensor<double> samples;
    std::vector<std::size_t> labels;
    Normalization normalization;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return samples.cols(); }

    template <typename T>
    gan::LabeledData<T> labeled() const {
        return {samples.cast<T>(), labels};
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct TaskSpec {
    std::size_t mode = 0;
    std::string name;
    std::string source;
    std::size_t dim = 0;
};

struct GaussianMode {
    double mean_x = 0, mean_y = 0;
    double var_x = 1, cov_xy = 0, var_y = 1;
};

/// A target drawn from a translated copy of one source mode.
struct PlantedTarget {
    std::string name;
    std::size_t source = 0;
    double offset_x = 0, offset_y = 0;
    std::size_t samples = 500;
};

struct MixtureSpec {
    std::vector<GaussianMode> modes;
    std::size_t samples_per_mode = 500;
    std::vector<PlantedTarget> targets;

    /// `n` isotropic modes evenly spaced on a circle, first mode on +x.
    static MixtureSpec ring(std::size_t n, double radius, double stddev, std::size_t samples_per_mode);
    /// Adds a target copying `source`, shifted outward along its radius.
    void plant_radial(std::size_t source, double distance, std::size_t samples, std::string name = {});
};

struct Suite {
    std::vector<TaskSpec> tasks;              // one per source mode
    Dataset sources;                          // labels are source mode ids
    Dataset targets;                          // labels index `target_names`
    std::vector<std::string> target_names;
    std::vector<std::size_t> target_nearest;  // ground-truth closest source per target

    Tensor<double> source_data(std::size_t mode) const;
    Tensor<double> target_data(std::size_t target) const;
};

/// Sources and targets share one normalization fitted over all samples.
Suite gaussian_mixture_suite(const MixtureSpec& spec, std::uint64_t seed);

/// IDX image/label pair, area-averaged down to `side` x `side` (8 or 16),
/// pixels mapped to [-1, 1].
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t side);

/// Area-average resampling of one square image.
std::vector<double> downsample_area(std::span<const double> image, std::size_t in_side, std::size_t out_side);

/// k rows drawn uniformly without replacement; k == size() gives a permutation.
Dataset few_shot(const Dataset& data, std::size_t k, std::uint64_t seed);
Tensor<double> few_shot(const Tensor<double>& data, std::size_t k, std::uint64_t seed);

/// Only labels that occur get a key.
std::map<std::size_t, Dataset> split_by_class(const Dataset& data);

Dataset concat(std::span<const Dataset> parts);

}  // namespace macl::tasks
