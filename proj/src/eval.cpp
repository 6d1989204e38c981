#include "macl/eval.hpp"

#include <cmath>
#include <numeric>

#include "macl/features.hpp"

namespace macl::eval {

GaussianFit gaussian_fit(const Tensor<double>& samples) {
    const std::size_t n = samples.rows(), d = samples.cols();
    if (n < 2) throw ContractError("gaussian_fit needs at least 2 samples, got " + std::to_string(n));
    GaussianFit fit;
    fit.count = n;
    fit.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) fit.mean[static_cast<Eigen::Index>(j)] += samples.at(i, j);
    fit.mean /= static_cast<double>(n);
    fit.cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::VectorXd centered(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j)
            centered[static_cast<Eigen::Index>(j)] = samples.at(i, j) - fit.mean[static_cast<Eigen::Index>(j)];
        fit.cov.selfadjointView<Eigen::Lower>().rankUpdate(centered);
    }
    fit.cov = fit.cov.selfadjointView<Eigen::Lower>();
    fit.cov /= static_cast<double>(n - 1);
    return fit;
}

double FrechetScore::distance() const { return std::sqrt(std::max(0.0, value)); }

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success) throw Error("symmetric eigen-decomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-9 * scale) throw ContractError("matrix is not positive semidefinite");
        ev[i] = std::sqrt(std::max(0.0, ev[i]));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

FrechetScore frechet(const GaussianFit& a, const GaussianFit& b, double ridge) {
    if (a.mean.size() != b.mean.size())
        throw DimensionError("frechet: dimension " + std::to_string(a.mean.size()) + " vs " +
                             std::to_string(b.mean.size()));
    if (a.mean == b.mean && a.cov == b.cov) return {0.0, FeatureSpace::raw};

    const auto d = a.mean.size();
    const Eigen::MatrixXd ridge_i = ridge * Eigen::MatrixXd::Identity(d, d);
    const Eigen::MatrixXd s1 = a.cov + ridge_i;
    const Eigen::MatrixXd s2 = b.cov + ridge_i;
    const Eigen::MatrixXd root1 = sqrt_psd(s1);
    const Eigen::MatrixXd inner = root1 * s2 * root1;
    const Eigen::MatrixXd cross = sqrt_psd(0.5 * (inner + inner.transpose()));
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double cov_term = s1.trace() + s2.trace() - 2.0 * cross.trace();
    return {std::max(0.0, mean_term + cov_term), FeatureSpace::raw};
}

RetentionReport RetentionReport::build(std::vector<double> per_mode, std::optional<std::size_t> target,
                                       std::vector<std::size_t> closest) {
    if (per_mode.empty()) throw ContractError("retention report needs at least one mode");
    RetentionReport r;
    r.per_mode = std::move(per_mode);
    r.target = target;
    r.closest = std::move(closest);
    if (target) {
        if (*target >= r.per_mode.size()) throw ContractError("retention report target out of range");
        r.p_target = r.per_mode[*target];
    }
    if (!r.closest.empty()) {
        double s = 0;
        for (std::size_t c : r.closest) s += r.per_mode.at(c);
        r.p_closest = s / static_cast<double>(r.closest.size());
    }
    r.p_average = std::accumulate(r.per_mode.begin(), r.per_mode.end(), 0.0) / static_cast<double>(r.per_mode.size());
    return r;
}

template <typename T>
double mode_score(const gan::Generator<T>& g, std::size_t label, const Tensor<double>& reference, std::size_t n_gen,
                  std::uint64_t seed, const FeatureClassifier* features) {
    const Tensor<double> generated = gan::sample(g, label, n_gen, seed).template cast<double>();
    if (features == nullptr) return frechet(gaussian_fit(reference), gaussian_fit(generated)).value;
    return frechet(gaussian_fit(features->features(reference)), gaussian_fit(features->features(generated))).value;
}

template <typename T>
RetentionReport mode_scores(const gan::Generator<T>& g, std::span<const Tensor<double>> reference, std::size_t n_gen,
                            std::uint64_t seed, std::optional<std::size_t> target, std::vector<std::size_t> closest,
                            const FeatureClassifier* features) {
    const std::size_t modes = g.embedding.num_labels();
    if (reference.size() != modes)
        throw ContractError("mode_scores: reference data for " + std::to_string(reference.size()) + " of " +
                            std::to_string(modes) + " modes");
    std::vector<double> per_mode(modes);
    for (std::size_t m = 0; m < modes; ++m) {
        if (reference[m].rows() < 2)
            throw ContractError("mode_scores: mode " + std::to_string(m) + " lacks reference data");
        per_mode[m] = mode_score(g, m, reference[m], n_gen, seed + m, features);
    }
    return RetentionReport::build(std::move(per_mode), target, std::move(closest));
}

Theorem1Result theorem1_check(const QuadraticLossSpec& spec) {
    if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) throw ContractError("theorem1: alpha must lie in (0, 1)");
    if (spec.a == spec.b) throw ContractError("theorem1: the two minimizers must be distinct");

    const auto loss_a = [&](double t) { return (t - spec.a) * (t - spec.a); };
    const auto grad_mix = [&](double t) {
        return 2.0 * spec.alpha * (t - spec.a) + 2.0 * (1.0 - spec.alpha) * (t - spec.b);
    };

    Theorem1Result r;
    r.theta_closed = spec.alpha * spec.a + (1.0 - spec.alpha) * spec.b;

    // Unit curvature: step 0.25 halves the error every iteration.
    double theta = 0.0;
    std::size_t it = 0;
    for (; it < 10000; ++it) {
        const double g = grad_mix(theta);
        if (std::abs(g) < 1e-13) break;
        theta -= 0.25 * g;
    }
    r.theta_descent = theta;
    r.descent_iterations = it;
    r.loss_a_at_theta = loss_a(r.theta_closed);
    r.min_loss_a = loss_a(spec.a);
    r.strict = r.loss_a_at_theta > r.min_loss_a;
    return r;
}

template RetentionReport mode_scores<float>(const gan::Generator<float>&, std::span<const Tensor<double>>,
                                            std::size_t, std::uint64_t, std::optional<std::size_t>,
                                            std::vector<std::size_t>, const FeatureClassifier*);
template RetentionReport mode_scores<double>(const gan::Generator<double>&, std::span<const Tensor<double>>,
                                             std::size_t, std::uint64_t, std::optional<std::size_t>,
                                             std::vector<std::size_t>, const FeatureClassifier*);
template double mode_score<float>(const gan::Generator<float>&, std::size_t, const Tensor<double>&, std::size_t,
                                  std::uint64_t, const FeatureClassifier*);
template double mode_score<double>(const gan::Generator<double>&, std::size_t, const Tensor<double>&, std::size_t,
                                   std::uint64_t, const FeatureClassifier*);

}  // namespace macl::eval
