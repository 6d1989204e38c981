#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "macl/cgan.hpp"
#include "macl/tensor.hpp"

namespace macl::eval {

struct GaussianFit {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;  // unbiased
    std::size_t count = 0;
};

GaussianFit gaussian_fit(const Tensor<double>& samples);

enum class FeatureSpace { raw, classifier };

/// Squared Frechet (2-Wasserstein) distance between Gaussian fits, the
/// quantity FID reports.
struct FrechetScore {
    double value = 0;
    FeatureSpace space = FeatureSpace::raw;

    double distance() const;
};

inline constexpr double kCovarianceRidge = 1e-6;

/// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), with `ridge` * I
/// added to both covariances first.
FrechetScore frechet(const GaussianFit& a, const GaussianFit& b, double ridge = kCovarianceRidge);

/// Symmetric PSD square root; eigenvalues down to -1e-9 (relative) are
/// clamped to zero, anything more negative is rejected.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m);

/// Per-mode Frechet scores and the three aggregates of a continual-learning
/// table: the target mode, the mean over its closest modes, and the mean over
/// every mode.
struct RetentionReport {
    std::vector<double> per_mode;
    std::optional<std::size_t> target;
    std::vector<std::size_t> closest;
    double p_target = 0;
    double p_closest = 0;
    double p_average = 0;

    static RetentionReport build(std::vector<double> per_mode, std::optional<std::size_t> target,
                                 std::vector<std::size_t> closest);
};

class FeatureClassifier;

/// Scores mode m as frechet(fit(reference[m]), fit(sample(g, m, n_gen))),
/// in classifier feature space when `features` is given.
template <typename T>
RetentionReport mode_scores(const gan::Generator<T>& g, std::span<const Tensor<double>> reference, std::size_t n_gen,
                            std::uint64_t seed, std::optional<std::size_t> target = std::nullopt,
                            std::vector<std::size_t> closest = {}, const FeatureClassifier* features = nullptr);

/// Frechet score of one generated mode against reference data.
template <typename T>
double mode_score(const gan::Generator<T>& g, std::size_t label, const Tensor<double>& reference, std::size_t n_gen,
                  std::uint64_t seed, const FeatureClassifier* features = nullptr);

/// L_a = (theta - a)^2, L_b = (theta - b)^2 mixed with weight alpha on L_a.
struct QuadraticLossSpec {
    double a = 1;
    double b = -1;
    double alpha = 0.5;
};

struct Theorem1Result {
    double theta_closed = 0;
    double theta_descent = 0;
    std::size_t descent_iterations = 0;
    double loss_a_at_theta = 0;
    double min_loss_a = 0;
    bool strict = false;
};

/// Minimizes the mixed loss in closed form and by gradient descent, then
/// checks that the source loss at the mixed optimum exceeds its own minimum.
Theorem1Result theorem1_check(const QuadraticLossSpec& spec);

}  // namespace macl::eval
