#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "macl/cgan.hpp"
#include "macl/nn.hpp"
#include "macl/tape.hpp"

namespace macl::affinity {

enum class Normalization { none, trace, l2 };

/// Diagonal of the empirical Fisher information of a loss, indexed by the
/// flat index of the parameter store it was computed on.
struct FisherDiagonal {
    std::vector<double> values;
    std::size_t sample_count = 0;
    Normalization normalization = Normalization::none;

    bool normalized() const { return normalization != Normalization::none; }
};

/// Divides by the sum (trace) or the Euclidean norm of the raw diagonal.
/// Throws DegenerateGradientError when that total is below 1e-30.
FisherDiagonal normalize(FisherDiagonal raw, Normalization how);

/// Called once per batch; builds that batch's scalar loss on `tape` from the
/// parameters bound in `vars`.
using BatchLoss = std::function<Var(Tape<double>& tape, std::span<const Var> vars, std::size_t batch)>;

/// Mean over batches of the squared gradient of each trainable scalar.
FisherDiagonal empirical_fisher(const nn::ParamStore<double>& store, std::size_t batches, const BatchLoss& loss,
                                std::size_t samples_per_batch, Normalization how);

/// per_sample squares each sample's loss gradient; per_batch squares the
/// gradient of each batch's mean loss.
enum class FisherGradient { per_sample, per_batch };

struct FisherSchedule {
    std::size_t batches = 32;
    std::size_t batch_size = 64;  // real rows per batch; the same number of fake rows joins them
    std::uint64_t seed = 0;
    Normalization normalization = Normalization::trace;
    FisherGradient gradient = FisherGradient::per_sample;
};

struct FisherBatch {
    std::vector<std::size_t> real;
    std::vector<std::size_t> fake;
};

/// Row indices drawn for each batch. Without replacement within a batch when
/// a set holds at least batch_size rows, with replacement otherwise. Real and
/// fake streams are independent, so the fake draws depend only on n_fake.
std::vector<FisherBatch> fisher_batches(std::size_t n_real, std::size_t n_fake, const FisherSchedule& schedule);

/// Fisher diagonal of the discriminator loss (real rows -> 1, fake rows -> 0)
/// over the discriminator's trainable parameters, evaluated in 64-bit on the
/// batches of fisher_batches().
template <typename T>
FisherDiagonal fisher_diag(const gan::Discriminator<T>& d, const Tensor<T>& real, std::span<const std::size_t> real_labels,
                           const Tensor<T>& fake, std::span<const std::size_t> fake_labels,
                           const FisherSchedule& schedule);

/// (1/sqrt 2) * || sqrt(h_a) - sqrt(h_b) ||_2 on normalized diagonals. With
/// trace normalization this is the Hellinger distance, so it lies in [0, 1].
double dmas(const FisherDiagonal& h_a, const FisherDiagonal& h_b);

/// Same score through the matrix form
/// (1/sqrt 2) * sqrt(tr(H_a + H_b - 2 H_a^1/2 H_b^1/2)) with diagonal H.
/// Exists as an independent check of dmas().
double dmas_trace_oracle(const FisherDiagonal& h_a, const FisherDiagonal& h_b);

struct AffinityScore {
    double value = 0;
    std::size_t source = 0;
    std::size_t target = 0;
};

/// Label that conditions the {X_b, fakes} pass: the source's (y_a) or, when
/// the target is itself a mode of the model, the target's own (y_b).
enum class Conditioning { source, target };

struct AffinityConfig {
    FisherSchedule schedule;
    std::size_t fake_samples = 512;
    std::uint64_t fake_seed = 0x5eed;
    Conditioning conditioning = Conditioning::source;
};

/// Generator samples of mode `source`, shared between the two passes.
template <typename T>
Tensor<T> shared_fakes(const gan::Cgan<T>& model, std::size_t source, const AffinityConfig& cfg);

/// H_a from {X_a, fakes of a}, H_b from {X_b, the same fakes}; returns
/// dmas(H_a, H_b). `target_label` is required for target conditioning.
template <typename T>
AffinityScore mode_affinity(const gan::Cgan<T>& model, std::size_t source, const Tensor<T>& source_data,
                            const Tensor<T>& target_data, const AffinityConfig& cfg,
                            std::optional<std::size_t> target_label = std::nullopt);

template <typename T>
struct SourceMode {
    std::string name;
    std::size_t label = 0;
    Tensor<T> data;
};

template <typename T>
struct TargetSet {
    std::string name;
    Tensor<T> data;
    std::optional<std::size_t> label;  // set when the target is an existing mode
};

/// Scores from every source mode (rows) to every target (columns), plus the
/// per-seed values behind each cell.
struct AffinityMatrix {
    std::vector<std::string> source_names;
    std::vector<std::size_t> source_labels;
    std::vector<std::string> target_names;
    std::vector<double> scores;                 // row-major sources x targets
    std::vector<std::vector<double>> per_seed;  // same layout

    std::size_t rows() const { return source_names.size(); }
    std::size_t cols() const { return target_names.size(); }
    double at(std::size_t s, std::size_t t) const { return scores[s * cols() + t]; }
    std::vector<double> column(std::size_t t) const;
};

/// Cells are independent; `threads` > 1 evaluates sources concurrently.
template <typename T>
AffinityMatrix affinity_matrix(const gan::Cgan<T>& model, std::span<const SourceMode<T>> sources,
                               std::span<const TargetSet<T>> targets, const AffinityConfig& cfg,
                               std::size_t threads = 1);

struct ConsistencyReport {
    std::size_t runs = 0;
    std::vector<std::string> source_names;
    std::vector<std::string> target_names;
    std::vector<double> mean;  // row-major sources x targets
    std::vector<double> stddev;
    std::vector<std::vector<std::size_t>> closest_per_run;  // [run][target] -> source row
    std::vector<std::size_t> modal_closest;                 // per target
    std::vector<double> stability;                          // per target, fraction in [0, 1]

    std::size_t rows() const { return source_names.size(); }
    std::size_t cols() const { return target_names.size(); }
};

/// Per-cell mean and sample standard deviation across runs, and how often
/// each target's closest source agrees with the most common one.
ConsistencyReport consistency(std::span<const AffinityMatrix> runs);

/// Indices of the n smallest scores, ascending; ties go to the lower index.
std::vector<std::size_t> closest_modes(std::span<const double> column, std::size_t n);
std::vector<std::size_t> closest_modes(const AffinityMatrix& matrix, std::size_t target, std::size_t n);

struct AtlasEmbedding {
    std::vector<std::string> names;
    std::vector<std::array<double, 2>> coords;
    double stress = 0;
};

/// Classical MDS of the symmetrized square score matrix into the plane.
AtlasEmbedding atlas(const AffinityMatrix& matrix);
AtlasEmbedding atlas(std::span<const double> square, std::size_t n, std::vector<std::string> names = {});

}  // namespace macl::affinity
