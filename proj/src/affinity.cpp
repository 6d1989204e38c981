#include "macl/affinity.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <thread>

#include <Eigen/Dense>

namespace macl::affinity {

FisherDiagonal normalize(FisherDiagonal raw, Normalization how) {
    if (how == Normalization::none) {
        raw.normalization = how;
        return raw;
    }
    double total = 0;
    if (how == Normalization::trace) {
        for (double v : raw.values) total += v;
    } else {
        for (double v : raw.values) total += v * v;
        total = std::sqrt(total);
    }
    if (!(total >= 1e-30))
        throw DegenerateGradientError("fisher diagonal total " + std::to_string(total) +
                                      " is too small to normalize (no gradient signal)");
    for (double& v : raw.values) v /= total;
    raw.normalization = how;
    return raw;
}

FisherDiagonal empirical_fisher(const nn::ParamStore<double>& store, std::size_t batches, const BatchLoss& loss,
                                std::size_t samples_per_batch, Normalization how) {
    if (batches == 0) throw ContractError("fisher: at least one batch is required");
    const std::size_t n = store.trainable_scalars();
    if (n == 0) throw DegenerateGradientError("fisher: model has no trainable parameters");

    std::vector<double> acc(n, 0.0);
    for (std::size_t b = 0; b < batches; ++b) {
        Tape<double> tape;
        const auto vars = store.bind(tape, true);
        const auto grads = tape.backward(loss(tape, vars, b));
        std::size_t offset = 0;
        for (const auto& p : store.params()) {
            if (!p.trainable) continue;
            const auto& g = grads.at(p.name);
            for (double v : g.values()) acc[offset++] += v * v;
        }
    }
    for (double& v : acc) v /= static_cast<double>(batches);

    FisherDiagonal out;
    out.values = std::move(acc);
    out.sample_count = batches * samples_per_batch;
    return normalize(std::move(out), how);
}

namespace {

template <typename T>
gan::Discriminator<double> widen(const gan::Discriminator<T>& d) {
    gan::Discriminator<double> out;
    out.store = d.store.template cast<double>();
    out.body = d.body;
    out.embedding = d.embedding;
    out.input_dim = d.input_dim;
    return out;
}

std::vector<std::size_t> draw_indices(std::size_t n, std::size_t m, Rng& rng) {
    std::vector<std::size_t> out(m);
    if (n >= m) {
        std::vector<std::size_t> perm(n);
        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(perm[i], perm[j]);
            out[i] = perm[i];
        }
    } else {
        for (auto& i : out) i = static_cast<std::size_t>(rng.below(n));
    }
    return out;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> view(const Tensor<double>& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

double act(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0 ? z : 0.0;
        case Activation::leaky_relu: return z > 0 ? z : Tape<double>::kDefaultLeakySlope * z;
        case Activation::tanh: return std::tanh(z);
        case Activation::sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::identity: return z;
    }
    return z;
}

double act_slope(Activation a, double z) {
    switch (a) {
        case Activation::relu: return z > 0 ? 1.0 : 0.0;
        case Activation::leaky_relu: return z > 0 ? 1.0 : Tape<double>::kDefaultLeakySlope;
        case Activation::tanh: {
            const double t = std::tanh(z);
            return 1.0 - t * t;
        }
        case Activation::sigmoid: {
            const double s = 1.0 / (1.0 + std::exp(-z));
            return s * (1.0 - s);
        }
        case Activation::identity: return 1.0;
    }
    return 1.0;
}

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Sum over the rows of one batch of each sample's squared loss gradient,
/// accumulated per store parameter. Uses the closed-form backward pass of
/// the conditional MLP: for a layer y = a W + b with per-row error d, the
/// per-row gradient of W is a_i^T d_i, so the summed squares are
/// (a o a)^T (d o d).
void per_sample_squares(const gan::Discriminator<double>& disc, const Tensor<double>& x,
                        std::span<const std::size_t> labels, std::span<const double> targets,
                        std::vector<Eigen::VectorXd>& acc) {
    const auto& store = disc.store;
    const auto& body = disc.body;
    const std::size_t n = x.rows(), data_dim = x.cols(), emb = disc.embedding.emb_dim();
    const Activation a = body.spec().activation;

    RowMatrix input(n, data_dim + emb);
    input.leftCols(data_dim) = view(x);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = disc.embedding.row(store, labels[i]);
        for (std::size_t j = 0; j < emb; ++j) input(i, data_dim + j) = row[j];
    }

    const std::size_t layers = body.layers();
    std::vector<RowMatrix> inputs = {input};
    std::vector<RowMatrix> pre;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto w = view(store[body.weight_param(l)].value);
        const auto b = view(store[body.bias_param(l)].value);
        RowMatrix z = inputs.back() * w;
        z.rowwise() += b.row(0);
        pre.push_back(z);
        if (l + 1 < layers) inputs.push_back(z.unaryExpr([a](double v) { return act(a, v); }));
    }

    RowMatrix delta(n, 1);
    for (std::size_t i = 0; i < n; ++i) delta(i, 0) = sigmoid(pre.back()(i, 0)) - targets[i];

    for (std::size_t l = layers; l-- > 0;) {
        const RowMatrix d2 = delta.cwiseProduct(delta);
        const RowMatrix a2 = inputs[l].cwiseProduct(inputs[l]);
        const RowMatrix gw = a2.transpose() * d2;
        acc[body.weight_param(l)] += Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
        acc[body.bias_param(l)] += d2.colwise().sum().transpose();

        const auto w = view(store[body.weight_param(l)].value);
        RowMatrix back = delta * w.transpose();
        if (l > 0) {
            const RowMatrix& z = pre[l - 1];
            delta = back.cwiseProduct(z.unaryExpr([a](double v) { return act_slope(a, v); }));
        } else {
            for (std::size_t i = 0; i < n; ++i) {
                auto& slot = acc[disc.embedding.row_param(labels[i])];
                for (std::size_t j = 0; j < emb; ++j) {
                    const double g = back(i, data_dim + j);
                    slot[j] += g * g;
                }
            }
        }
    }
}

}  // namespace

std::vector<FisherBatch> fisher_batches(std::size_t n_real, std::size_t n_fake, const FisherSchedule& schedule) {
    if (n_real == 0 || n_fake == 0) throw ContractError("fisher batches need nonempty real and fake sets");
    if (schedule.batch_size == 0) throw ContractError("fisher batches: batch_size must be positive");
    Rng base(schedule.seed);
    Rng real_rng = base.fork(1);
    Rng fake_rng = base.fork(2);
    std::vector<FisherBatch> out(schedule.batches);
    for (auto& b : out) {
        b.real = draw_indices(n_real, schedule.batch_size, real_rng);
        b.fake = draw_indices(n_fake, schedule.batch_size, fake_rng);
    }
    return out;
}

template <typename T>
FisherDiagonal fisher_diag(const gan::Discriminator<T>& d, const Tensor<T>& real, std::span<const std::size_t> real_labels,
                           const Tensor<T>& fake, std::span<const std::size_t> fake_labels,
                           const FisherSchedule& schedule) {
    if (real.rows() == 0 || fake.rows() == 0) throw ContractError("fisher_diag: real and fake sets must be nonempty");
    if (real_labels.size() != real.rows() || fake_labels.size() != fake.rows())
        throw DimensionError("fisher_diag: one label per row is required");
    for (std::size_t l : real_labels)
        if (l >= d.embedding.num_labels()) throw ContractError("fisher_diag: label out of range");
    for (std::size_t l : fake_labels)
        if (l >= d.embedding.num_labels()) throw ContractError("fisher_diag: label out of range");
    if (schedule.batches == 0) throw ContractError("fisher_diag: at least one batch is required");

    const auto disc = widen(d);
    const Tensor<double> real64 = real.template cast<double>();
    const Tensor<double> fake64 = fake.template cast<double>();
    const std::size_t m = schedule.batch_size;
    const auto batches = fisher_batches(real64.rows(), fake64.rows(), schedule);

    std::vector<double> targets(2 * m, 0.0);
    std::fill(targets.begin(), targets.begin() + static_cast<std::ptrdiff_t>(m), 1.0);
    const auto batch_rows = [&](const FisherBatch& b) {
        const std::vector<Tensor<double>> parts = {real64.gather_rows(b.real), fake64.gather_rows(b.fake)};
        std::vector<std::size_t> labels;
        for (std::size_t i : b.real) labels.push_back(real_labels[i]);
        for (std::size_t i : b.fake) labels.push_back(fake_labels[i]);
        return std::pair{vstack<double>(parts), labels};
    };

    if (schedule.gradient == FisherGradient::per_batch) {
        const Tensor<double> target_col = Tensor<double>::matrix(2 * m, 1, targets);
        const BatchLoss loss = [&](Tape<double>& tape, std::span<const Var> vars, std::size_t b) {
            const auto [x, labels] = batch_rows(batches[b]);
            const Var logits = disc.forward(tape, vars, tape.constant(x), disc.embedding.lookup(tape, vars, labels));
            return tape.bce_with_logits(logits, target_col);
        };
        return empirical_fisher(disc.store, schedule.batches, loss, 2 * m, schedule.normalization);
    }

    const auto& store = disc.store;
    if (store.trainable_scalars() == 0) throw DegenerateGradientError("fisher: model has no trainable parameters");
    std::vector<Eigen::VectorXd> acc;
    for (const auto& p : store.params()) acc.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p.value.size())));
    for (const auto& b : batches) {
        const auto [x, labels] = batch_rows(b);
        per_sample_squares(disc, x, labels, targets, acc);
    }

    FisherDiagonal out;
    out.sample_count = schedule.batches * 2 * m;
    const double count = static_cast<double>(out.sample_count);
    out.values.reserve(store.trainable_scalars());
    for (std::size_t p = 0; p < store.size(); ++p) {
        if (!store[p].trainable) continue;
        for (Eigen::Index i = 0; i < acc[p].size(); ++i) out.values.push_back(acc[p][i] / count);
    }
    return normalize(std::move(out), schedule.normalization);
}

namespace {

void check_pair(const FisherDiagonal& a, const FisherDiagonal& b) {
    if (a.values.size() != b.values.size())
        throw DimensionError("dmas: diagonal lengths differ (" + std::to_string(a.values.size()) + " vs " +
                             std::to_string(b.values.size()) + ")");
    if (!a.normalized() || !b.normalized()) throw ContractError("dmas: both diagonals must be normalized");
    if (a.normalization != b.normalization) throw ContractError("dmas: diagonals use different normalizations");
}

double clamp_range(double v, Normalization how) {
    return how == Normalization::trace ? std::min(v, 1.0) : v;
}

}  // namespace

double dmas(const FisherDiagonal& h_a, const FisherDiagonal& h_b) {
    check_pair(h_a, h_b);
    double sq = 0;
    for (std::size_t i = 0; i < h_a.values.size(); ++i) {
        const double diff = std::sqrt(h_a.values[i]) - std::sqrt(h_b.values[i]);
        sq += diff * diff;
    }
    return clamp_range(std::sqrt(sq) / std::numbers::sqrt2, h_a.normalization);
}

double dmas_trace_oracle(const FisherDiagonal& h_a, const FisherDiagonal& h_b) {
    check_pair(h_a, h_b);
    const Eigen::Map<const Eigen::VectorXd> a(h_a.values.data(), static_cast<Eigen::Index>(h_a.values.size()));
    const Eigen::Map<const Eigen::VectorXd> b(h_b.values.data(), static_cast<Eigen::Index>(h_b.values.size()));
    // Diagonal matrices commute, so H_a^1/2 H_b^1/2 = (H_a H_b)^1/2.
    const Eigen::VectorXd cross = a.cwiseProduct(b).cwiseSqrt();
    const double trace = (a + b - 2.0 * cross).sum();
    return clamp_range(std::sqrt(std::max(0.0, trace)) / std::numbers::sqrt2, h_a.normalization);
}

template <typename T>
Tensor<T> shared_fakes(const gan::Cgan<T>& model, std::size_t source, const AffinityConfig& cfg) {
    return gan::sample(model.g, source, cfg.fake_samples, cfg.fake_seed + source);
}

namespace {

template <typename T>
FisherDiagonal pass(const gan::Cgan<T>& model, const Tensor<T>& real, std::size_t real_label, const Tensor<T>& fakes,
                    std::size_t fake_label, const AffinityConfig& cfg) {
    const std::vector<std::size_t> rl(real.rows(), real_label);
    const std::vector<std::size_t> fl(fakes.rows(), fake_label);
    return fisher_diag(model.d, real, rl, fakes, fl, cfg.schedule);
}

std::size_t target_pass_label(const AffinityConfig& cfg, std::size_t source, std::optional<std::size_t> target) {
    if (cfg.conditioning == Conditioning::source) return source;
    if (!target) throw ContractError("target conditioning needs a target that is a mode of the model");
    return *target;
}

}  // namespace

template <typename T>
AffinityScore mode_affinity(const gan::Cgan<T>& model, std::size_t source, const Tensor<T>& source_data,
                            const Tensor<T>& target_data, const AffinityConfig& cfg,
                            std::optional<std::size_t> target_label) {
    if (source >= model.num_labels()) throw ContractError("mode_affinity: source mode out of range");
    if (target_data.rows() == 0) throw ContractError("mode_affinity: empty target data");
    const Tensor<T> fakes = shared_fakes(model, source, cfg);
    const FisherDiagonal h_a = pass(model, source_data, source, fakes, source, cfg);
    const FisherDiagonal h_b =
        pass(model, target_data, target_pass_label(cfg, source, target_label), fakes, source, cfg);
    return {dmas(h_a, h_b), source, 0};
}

std::vector<double> AffinityMatrix::column(std::size_t t) const {
    std::vector<double> out(rows());
    for (std::size_t s = 0; s < rows(); ++s) out[s] = at(s, t);
    return out;
}

template <typename T>
AffinityMatrix affinity_matrix(const gan::Cgan<T>& model, std::span<const SourceMode<T>> sources,
                               std::span<const TargetSet<T>> targets, const AffinityConfig& cfg, std::size_t threads) {
    if (sources.empty() || targets.empty()) throw ContractError("affinity_matrix: need at least one source and target");
    for (const auto& s : sources)
        if (s.label >= model.num_labels()) throw ContractError("affinity_matrix: source label out of range");
    for (const auto& t : targets)
        if (t.data.rows() == 0) throw ContractError("affinity_matrix: empty target " + t.name);

    AffinityMatrix out;
    for (const auto& s : sources) {
        out.source_names.push_back(s.name);
        out.source_labels.push_back(s.label);
    }
    for (const auto& t : targets) out.target_names.push_back(t.name);
    out.scores.assign(sources.size() * targets.size(), 0.0);

    const auto row = [&](std::size_t si) {
        const auto& s = sources[si];
        const Tensor<T> fakes = shared_fakes(model, s.label, cfg);
        const FisherDiagonal h_a = pass(model, s.data, s.label, fakes, s.label, cfg);
        for (std::size_t ti = 0; ti < targets.size(); ++ti) {
            const FisherDiagonal h_b =
                pass(model, targets[ti].data, target_pass_label(cfg, s.label, targets[ti].label), fakes, s.label, cfg);
            out.scores[si * targets.size() + ti] = dmas(h_a, h_b);
        }
    };

    const std::size_t workers = std::clamp<std::size_t>(threads, 1, sources.size());
    if (workers == 1) {
        for (std::size_t si = 0; si < sources.size(); ++si) row(si);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t si = w; si < sources.size(); si += workers) row(si);
            });
        for (auto& t : pool) t.join();
    }
    for (double v : out.scores) out.per_seed.push_back({v});
    return out;
}

ConsistencyReport consistency(std::span<const AffinityMatrix> runs) {
    if (runs.size() < 2) throw ContractError("consistency needs at least 2 runs");
    const auto& first = runs.front();
    for (const auto& r : runs)
        if (r.source_names != first.source_names || r.target_names != first.target_names)
            throw ContractError("consistency: runs cover different mode sets");

    ConsistencyReport rep;
    rep.runs = runs.size();
    rep.source_names = first.source_names;
    rep.target_names = first.target_names;
    const std::size_t cells = first.scores.size();
    const double n = static_cast<double>(runs.size());
    rep.mean.assign(cells, 0.0);
    rep.stddev.assign(cells, 0.0);
    // Deviations are taken from the first run's value, so identical runs
    // give exactly their value and a zero spread.
    for (std::size_t c = 0; c < cells; ++c) {
        const double x0 = first.scores[c];
        double s = 0, ss = 0;
        for (const auto& r : runs) {
            const double dev = r.scores[c] - x0;
            s += dev;
            ss += dev * dev;
        }
        rep.mean[c] = x0 + s / n;
        rep.stddev[c] = std::sqrt(std::max(0.0, (ss - s * s / n) / (n - 1.0)));
    }

    for (const auto& r : runs) {
        std::vector<std::size_t> best;
        for (std::size_t t = 0; t < r.cols(); ++t) best.push_back(closest_modes(r.column(t), 1).front());
        rep.closest_per_run.push_back(std::move(best));
    }
    for (std::size_t t = 0; t < first.cols(); ++t) {
        std::map<std::size_t, std::size_t> votes;
        for (const auto& best : rep.closest_per_run) ++votes[best[t]];
        std::size_t modal = 0, count = 0;
        for (const auto& [mode, c] : votes)
            if (c > count) {
                modal = mode;
                count = c;
            }
        rep.modal_closest.push_back(modal);
        rep.stability.push_back(static_cast<double>(count) / n);
    }
    return rep;
}

std::vector<std::size_t> closest_modes(std::span<const double> column, std::size_t n) {
    if (n < 1 || n > column.size())
        throw ContractError("closest_modes: n=" + std::to_string(n) + " outside [1, " + std::to_string(column.size()) +
                            "]");
    std::vector<std::size_t> idx(column.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });
    idx.resize(n);
    return idx;
}

std::vector<std::size_t> closest_modes(const AffinityMatrix& matrix, std::size_t target, std::size_t n) {
    if (target >= matrix.cols()) throw ContractError("closest_modes: target out of range");
    return closest_modes(matrix.column(target), n);
}

AtlasEmbedding atlas(const AffinityMatrix& matrix) {
    if (matrix.rows() != matrix.cols())
        throw DimensionError("atlas needs a square matrix, got " + std::to_string(matrix.rows()) + "x" +
                             std::to_string(matrix.cols()));
    return atlas(matrix.scores, matrix.rows(), matrix.source_names);
}

AtlasEmbedding atlas(std::span<const double> square, std::size_t n, std::vector<std::string> names) {
    if (square.size() != n * n) throw DimensionError("atlas needs a square matrix");
    if (n == 0) throw ContractError("atlas needs at least one mode");
    if (names.empty())
        for (std::size_t i = 0; i < n; ++i) names.push_back("mode" + std::to_string(i));

    const auto N = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd dist(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j)
            dist(i, j) = 0.5 * (square[static_cast<std::size_t>(i * N + j)] + square[static_cast<std::size_t>(j * N + i)]);
    for (Eigen::Index i = 0; i < N; ++i) dist(i, i) = 0.0;

    const Eigen::MatrixXd sq = dist.cwiseProduct(dist);
    const Eigen::MatrixXd centering =
        Eigen::MatrixXd::Identity(N, N) - Eigen::MatrixXd::Constant(N, N, 1.0 / static_cast<double>(n));
    const Eigen::MatrixXd gram = -0.5 * centering * sq * centering;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (gram + gram.transpose()));
    if (es.info() != Eigen::Success) throw Error("atlas: eigen-decomposition failed");

    AtlasEmbedding out;
    out.names = std::move(names);
    out.coords.assign(n, {0.0, 0.0});
    // Eigenvalues come back ascending; take the two largest.
    for (int k = 0; k < 2 && k < N; ++k) {
        const Eigen::Index col = N - 1 - k;
        const double lambda = std::max(0.0, es.eigenvalues()[col]);
        Eigen::VectorXd v = es.eigenvectors().col(col);
        Eigen::Index pivot = 0;
        v.cwiseAbs().maxCoeff(&pivot);
        if (v[pivot] < 0) v = -v;
        for (Eigen::Index i = 0; i < N; ++i) out.coords[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] =
            v[i] * std::sqrt(lambda);
    }

    double num = 0, den = 0;
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = i + 1; j < N; ++j) {
            const auto& a = out.coords[static_cast<std::size_t>(i)];
            const auto& b = out.coords[static_cast<std::size_t>(j)];
            const double embedded = std::hypot(a[0] - b[0], a[1] - b[1]);
            num += (dist(i, j) - embedded) * (dist(i, j) - embedded);
            den += dist(i, j) * dist(i, j);
        }
    out.stress = den > 0 ? std::sqrt(num / den) : 0.0;
    return out;
}

#define MACL_AFFINITY_INSTANTIATE(T)                                                                             \
    template FisherDiagonal fisher_diag<T>(const gan::Discriminator<T>&, const Tensor<T>&,                       \
                                           std::span<const std::size_t>, const Tensor<T>&,                        \
                                           std::span<const std::size_t>, const FisherSchedule&);                  \
    template Tensor<T> shared_fakes<T>(const gan::Cgan<T>&, std::size_t, const AffinityConfig&);                  \
    template AffinityScore mode_affinity<T>(const gan::Cgan<T>&, std::size_t, const Tensor<T>&, const Tensor<T>&, \
                                            const AffinityConfig&, std::optional<std::size_t>);                  \
    template AffinityMatrix affinity_matrix<T>(const gan::Cgan<T>&, std::span<const SourceMode<T>>,               \
                                               std::span<const TargetSet<T>>, const AffinityConfig&, std::size_t);

MACL_AFFINITY_INSTANTIATE(float)
MACL_AFFINITY_INSTANTIATE(double)

}  // namespace macl::affinity
