#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "macl/affinity.hpp"
#include "macl/error.hpp"
#include "oracles.hpp"

using namespace macl;
using affinity::FisherDiagonal;
using affinity::Normalization;
using testing::hellinger_bc;
using testing::random_trace_diag;

namespace {

FisherDiagonal diag(std::vector<double> v, Normalization n = Normalization::trace) {
    FisherDiagonal f;
    f.values = std::move(v);
    f.normalization = n;
    return f;
}

gan::Discriminator<double> small_disc(std::uint64_t seed) {
    return gan::create_cgan<double>(gan::ModelSpec{2, 3, 4, 3, {6, 5}}, seed).d;
}

Tensor<double> random_rows(Rng& rng, std::size_t n, std::size_t d) {
    Tensor<double> t = Tensor<double>::matrix(n, d);
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

std::vector<double> flat_grad(const nn::ParamStore<double>& store, const GradientSet<double>& g) {
    std::vector<double> out;
    for (const auto& p : store.params())
        if (p.trainable) out.insert(out.end(), g.at(p.name).values().begin(), g.at(p.name).values().end());
    return out;
}

// Loops over samples on the tape, one backward pass each.
std::vector<double> per_sample_oracle(const gan::Discriminator<double>& d, const Tensor<double>& real,
                                      const std::vector<std::size_t>& rl, const Tensor<double>& fake,
                                      const std::vector<std::size_t>& fl, const affinity::FisherSchedule& s) {
    std::vector<double> acc(d.store.trainable_scalars(), 0.0);
    std::size_t count = 0;
    const auto one = [&](const Tensor<double>& x, std::size_t row, std::size_t label, double target) {
        Tape<double> tape;
        const auto vars = d.store.bind(tape, true);
        const std::size_t idx[] = {row};
        const std::size_t lab[] = {label};
        const Var logit =
            d.forward(tape, vars, tape.constant(x.gather_rows(idx)), d.embedding.lookup(tape, vars, lab));
        const auto g = flat_grad(d.store, tape.backward(tape.bce_with_logits(logit, Tensor<double>::scalar(target))));
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * g[i];
        ++count;
    };
    for (const auto& b : affinity::fisher_batches(real.rows(), fake.rows(), s)) {
        for (std::size_t i : b.real) one(real, i, rl[i], 1.0);
        for (std::size_t i : b.fake) one(fake, i, fl[i], 0.0);
    }
    for (auto& v : acc) v /= static_cast<double>(count);
    return acc;
}

}  // namespace

TEST_CASE("dmas anchors") {
    CHECK(affinity::dmas(diag({0.25, 0.75}), diag({0.25, 0.75})) == 0.0);
    CHECK(affinity::dmas(diag({1, 0}), diag({0, 1})) == doctest::Approx(1.0).epsilon(1e-12));
    // (1/sqrt 2) * sqrt((1 - 1/sqrt 2)^2 + 1/2), evaluated independently
    const double expected = std::sqrt(2.0 - std::sqrt(2.0)) / std::sqrt(2.0);
    CHECK(std::abs(affinity::dmas(diag({1, 0}), diag({0.5, 0.5})) - expected) < 1e-15);
    CHECK(std::abs(expected - 0.541196) < 1e-6);

    CHECK(affinity::dmas_trace_oracle(diag({0.2, 0.8}), diag({0.2, 0.8})) == 0.0);
    CHECK(affinity::dmas_trace_oracle(diag({1, 0}), diag({0, 1})) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dmas contract errors") {
    CHECK_THROWS_AS(affinity::dmas(diag({1, 0}), diag({1})), DimensionError);
    CHECK_THROWS_AS(affinity::dmas(diag({1, 0}, Normalization::none), diag({1, 0})), ContractError);
    CHECK_THROWS_AS(affinity::dmas(diag({1, 0}, Normalization::l2), diag({1, 0})), ContractError);
}

TEST_CASE("dmas agrees with the trace form and the Bhattacharyya form") {
    Rng rng(17);
    double worst_trace = 0, worst_bc = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t d = 1 + static_cast<std::size_t>(std::pow(10.0, 4.0 * rng.uniform()));
        const double zeros = (i % 4) * 0.25;
        const auto a = random_trace_diag(rng, d, zeros);
        const auto b = i % 10 == 0 ? a : random_trace_diag(rng, d, zeros);
        const double v = affinity::dmas(a, b);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        worst_trace = std::max(worst_trace, std::abs(v - affinity::dmas_trace_oracle(a, b)));
        worst_bc = std::max(worst_bc, std::abs(v - hellinger_bc(a.values, b.values)));
    }
    CHECK(worst_trace < 1e-10);
    CHECK(worst_bc < 1e-9);
}

TEST_CASE("normalization") {
    auto n = affinity::normalize(diag({1, 3}, Normalization::none), Normalization::trace);
    CHECK(n.values == std::vector<double>{0.25, 0.75});
    auto l2 = affinity::normalize(diag({3, 4}, Normalization::none), Normalization::l2);
    CHECK(l2.values[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(l2.values[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK_THROWS_AS(affinity::normalize(diag({0, 0}, Normalization::none), Normalization::trace),
                    DegenerateGradientError);

    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        std::vector<double> v(50);
        for (auto& x : v) x = rng.uniform();
        auto scaled = v;
        const double c = std::ldexp(1.0, static_cast<int>(rng() % 40) - 20);
        for (auto& x : scaled) x *= c;
        const auto p = affinity::normalize(diag(v, Normalization::none), Normalization::trace);
        const auto q = affinity::normalize(diag(scaled, Normalization::none), Normalization::trace);
        CHECK(p.values == q.values);
    }
}

TEST_CASE("empirical fisher of a single quadratic parameter") {
    nn::ParamStore<double> store;
    store.add("w", Tensor<double>::scalar(1.0));
    const affinity::BatchLoss loss = [](Tape<double>& tape, std::span<const Var> vars, std::size_t) {
        return tape.sum(tape.mul(vars[0], vars[0]));
    };
    CHECK(affinity::empirical_fisher(store, 3, loss, 1, Normalization::none).values == std::vector<double>{4.0});
    CHECK(affinity::empirical_fisher(store, 3, loss, 1, Normalization::trace).values == std::vector<double>{1.0});

    store[0].trainable = false;
    CHECK_THROWS_AS(affinity::empirical_fisher(store, 1, loss, 1, Normalization::trace), DegenerateGradientError);
}

TEST_CASE("fisher batches") {
    affinity::FisherSchedule s;
    s.batches = 5;
    s.batch_size = 8;
    s.seed = 4;
    const auto b = affinity::fisher_batches(20, 6, s);
    CHECK(b.size() == 5);
    for (const auto& batch : b) {
        CHECK(batch.real.size() == 8);
        CHECK(batch.fake.size() == 8);
        std::vector<std::size_t> r = batch.real;
        std::sort(r.begin(), r.end());
        CHECK(std::adjacent_find(r.begin(), r.end()) == r.end());
        for (std::size_t i : batch.real) CHECK(i < 20);
        for (std::size_t i : batch.fake) CHECK(i < 6);
    }
    // the fake stream only depends on the fake count
    const auto c = affinity::fisher_batches(300, 6, s);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(b[i].fake == c[i].fake);
    CHECK(affinity::fisher_batches(20, 6, s)[2].real == b[2].real);
}

TEST_CASE("per-sample fisher matches a per-sample tape loop") {
    Rng rng(8);
    for (int trial = 0; trial < 4; ++trial) {
        auto d = small_disc(30 + trial);
        if (trial == 3) d.store[d.embedding.row_param(1)].trainable = false;
        const auto real = random_rows(rng, 40, 2), fake = random_rows(rng, 25, 2);
        std::vector<std::size_t> rl(40), fl(25);
        for (auto& l : rl) l = rng() % 3;
        for (auto& l : fl) l = rng() % 3;
        affinity::FisherSchedule s;
        s.batches = 3;
        s.batch_size = 16;
        s.seed = trial;
        s.normalization = Normalization::none;
        const auto fast = affinity::fisher_diag(d, real, rl, fake, fl, s);
        const auto oracle = per_sample_oracle(d, real, rl, fake, fl, s);
        REQUIRE(fast.values.size() == oracle.size());
        CHECK(fast.sample_count == 3 * 32);
        double worst = 0;
        for (std::size_t i = 0; i < oracle.size(); ++i)
            worst = std::max(worst, std::abs(fast.values[i] - oracle[i]) / std::max(oracle[i], 1e-300));
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("per-batch fisher squares the batch-mean gradient") {
    Rng rng(9);
    const auto d = small_disc(5);
    const auto real = random_rows(rng, 30, 2), fake = random_rows(rng, 30, 2);
    const std::vector<std::size_t> rl(30, 0), fl(30, 2);
    affinity::FisherSchedule s;
    s.batches = 4;
    s.batch_size = 10;
    s.seed = 1;
    s.normalization = Normalization::none;
    s.gradient = affinity::FisherGradient::per_batch;
    const auto got = affinity::fisher_diag(d, real, rl, fake, fl, s);

    std::vector<double> acc(d.store.trainable_scalars(), 0.0);
    for (const auto& b : affinity::fisher_batches(30, 30, s)) {
        Tape<double> tape;
        const auto vars = d.store.bind(tape, true);
        std::vector<Var> parts;
        std::vector<std::size_t> labels;
        Tensor<double> x = Tensor<double>::matrix(20, 2);
        std::vector<double> t(20, 0.0);
        for (std::size_t i = 0; i < 10; ++i) {
            std::copy(real.row(b.real[i]).begin(), real.row(b.real[i]).end(), x.row(i).begin());
            std::copy(fake.row(b.fake[i]).begin(), fake.row(b.fake[i]).end(), x.row(10 + i).begin());
            t[i] = 1.0;
        }
        labels.assign(10, 0);
        labels.insert(labels.end(), 10, 2);
        const Var logits = d.forward(tape, vars, tape.constant(x), d.embedding.lookup(tape, vars, labels));
        const auto g = flat_grad(d.store, tape.backward(tape.bce_with_logits(logits, Tensor<double>::matrix(20, 1, t))));
        for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i] * g[i] / 4.0;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) CHECK(std::abs(got.values[i] - acc[i]) <= 1e-12 * std::abs(acc[i]));
}

TEST_CASE("fisher diag determinism and degenerate input") {
    Rng rng(2);
    auto d = small_disc(1);
    const auto x = random_rows(rng, 20, 2);
    const std::vector<std::size_t> l(20, 1);
    affinity::FisherSchedule s;
    s.batches = 2;
    s.batch_size = 8;
    CHECK(affinity::fisher_diag(d, x, l, x, l, s).values == affinity::fisher_diag(d, x, l, x, l, s).values);
    for (std::size_t p = 0; p < d.store.size(); ++p) d.store[p].trainable = false;
    CHECK_THROWS_AS(affinity::fisher_diag(d, x, l, x, l, s), DegenerateGradientError);
}

TEST_CASE("identical source and target data score exactly zero") {
    const auto& fx = testing::ring_fixture();
    affinity::AffinityConfig cfg;
    cfg.schedule.batches = 4;
    for (std::size_t m = 0; m < 6; ++m) {
        const auto x = fx.suite.source_data(m).cast<float>();
        CHECK(affinity::mode_affinity(fx.model, m, x, x, cfg).value == 0.0);
    }
}

TEST_CASE("planted copy scores below a far mode") {
    const auto& fx = testing::ring_fixture();
    affinity::AffinityConfig cfg;
    cfg.schedule.batches = 8;
    std::vector<affinity::SourceMode<float>> sources;
    for (std::size_t m = 0; m < 6; ++m) sources.push_back({"m" + std::to_string(m), m, fx.suite.source_data(m).cast<float>()});
    const std::vector<affinity::TargetSet<float>> targets = {{"t1", fx.suite.target_data(1).cast<float>(), std::nullopt}};
    const auto mat = affinity::affinity_matrix<float>(fx.model, sources, targets, cfg);
    CHECK(mat.rows() == 6);
    CHECK(mat.cols() == 1);
    for (double v : mat.scores) {
        CHECK(v >= 0);
        CHECK(v <= 1);
    }
    CHECK(mat.at(1, 0) < mat.at(4, 0));
    CHECK(affinity::closest_modes(mat, 0, 1).front() == 1);

    const std::vector<affinity::TargetSet<float>> self = {{"m2", sources[2].data, 2}};
    const std::vector<affinity::SourceMode<float>> one = {sources[2]};
    const auto s = affinity::affinity_matrix<float>(fx.model, one, self, cfg);
    CHECK(s.scores == std::vector<double>{0.0});

    cfg.conditioning = affinity::Conditioning::target;
    CHECK_THROWS_AS(affinity::affinity_matrix<float>(fx.model, sources, targets, cfg), ContractError);
    const auto threaded = affinity::affinity_matrix<float>(fx.model, sources, self, cfg, 3);
    const auto serial = affinity::affinity_matrix<float>(fx.model, sources, self, cfg, 1);
    CHECK(threaded.scores == serial.scores);
    CHECK(serial.at(2, 0) == 0.0);
}

TEST_CASE("closest modes") {
    const std::vector<double> col = {0.3, 0.1, 0.5};
    CHECK(affinity::closest_modes(col, 2) == std::vector<std::size_t>{1, 0});
    CHECK(affinity::closest_modes(col, 3) == std::vector<std::size_t>{1, 0, 2});
    const std::vector<double> tie = {0.5, 0.2, 0.2};
    CHECK(affinity::closest_modes(tie, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("consistency") {
    affinity::AffinityMatrix a;
    a.source_names = {"x", "y"};
    a.source_labels = {0, 1};
    a.target_names = {"t", "u"};
    a.scores = {0.1, 0.6, 0.4, 0.2};
    const std::vector<affinity::AffinityMatrix> same = {a, a, a};
    const auto r = affinity::consistency(same);
    CHECK(r.stddev == std::vector<double>(4, 0.0));
    CHECK(r.stability == std::vector<double>{1.0, 1.0});
    CHECK(r.modal_closest == std::vector<std::size_t>{0, 1});

    auto b = a;
    b.scores = {0.5, 0.6, 0.2, 0.2};
    const std::vector<affinity::AffinityMatrix> swapped = {a, b};
    const auto s = affinity::consistency(swapped);
    CHECK(s.stability[0] == 0.5);
    CHECK(s.stability[1] == 1.0);
    CHECK(s.mean[0] == doctest::Approx(0.3));
    CHECK(s.stddev[0] == doctest::Approx(std::sqrt(0.08)).epsilon(1e-12));

    auto c = a;
    c.source_names = {"x", "z"};
    const std::vector<affinity::AffinityMatrix> bad = {a, c};
    CHECK_THROWS_AS(affinity::consistency(bad), ContractError);
    CHECK_THROWS_AS(affinity::consistency(std::vector<affinity::AffinityMatrix>{a}), ContractError);
}

TEST_CASE("atlas") {
    const double d = 0.7;
    const std::vector<double> tri = {0, d, d, d, 0, d, d, d, 0};
    const auto e = affinity::atlas(tri, 3);
    const auto dist = [&](std::size_t i, std::size_t j) {
        return std::hypot(e.coords[i][0] - e.coords[j][0], e.coords[i][1] - e.coords[j][1]);
    };
    CHECK(std::abs(dist(0, 1) / dist(1, 2) - 1) < 1e-6);
    CHECK(std::abs(dist(0, 2) / dist(1, 2) - 1) < 1e-6);
    CHECK(std::abs(dist(0, 1) - d) < 1e-9);
    CHECK(e.stress < 1e-9);

    const std::vector<double> pair = {0, 0.4, 0.4, 0};
    const auto p = affinity::atlas(pair, 2, {"a", "b"});
    CHECK(std::abs(std::hypot(p.coords[0][0] - p.coords[1][0], p.coords[0][1] - p.coords[1][1]) - 0.4) < 1e-12);
    CHECK(p.names == std::vector<std::string>{"a", "b"});

    const auto z = affinity::atlas(std::vector<double>(9, 0.0), 3);
    for (const auto& c : z.coords) {
        CHECK(c[0] == 0.0);
        CHECK(c[1] == 0.0);
    }

    // asymmetric input is symmetrized first
    const std::vector<double> asym = {0, 0.2, 0.6, 0};
    const auto q = affinity::atlas(asym, 2);
    CHECK(std::abs(std::hypot(q.coords[0][0] - q.coords[1][0], q.coords[0][1] - q.coords[1][1]) - 0.4) < 1e-12);

    affinity::AffinityMatrix rect;
    rect.source_names = {"a", "b"};
    rect.target_names = {"t"};
    rect.scores = {0.1, 0.2};
    CHECK_THROWS(affinity::atlas(rect));
    CHECK_THROWS(affinity::atlas(std::vector<double>(5, 0.0), 2));
}
