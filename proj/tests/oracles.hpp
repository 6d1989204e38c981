#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "macl/affinity.hpp"
#include "macl/rng.hpp"
#include "macl/tape.hpp"

namespace macl::testing {

inline Tensor<double> random_matrix(Rng& rng, std::size_t r, std::size_t c, double sd = 1.0) {
    Tensor<double> t = Tensor<double>::matrix(r, c);
    for (auto& v : t.values()) v = rng.normal() * sd;
    return t;
}

inline affinity::FisherDiagonal trace_diag(std::vector<double> v) {
    affinity::FisherDiagonal f;
    f.values = std::move(v);
    f.normalization = affinity::Normalization::trace;
    return f;
}

/// Exponential entries with a share of exact zeros, divided by their sum.
inline affinity::FisherDiagonal random_trace_diag(Rng& rng, std::size_t d, double zero_fraction) {
    std::vector<double> v(d);
    double s = 0;
    for (auto& x : v) {
        x = rng.uniform() < zero_fraction ? 0.0 : -std::log(1.0 - rng.uniform());
        s += x;
    }
    if (s == 0) v[0] = s = 1;
    for (auto& x : v) x /= s;
    return trace_diag(std::move(v));
}

// Hellinger distance through the Bhattacharyya coefficient:
// H^2 = (sum a + sum b) / 2 - sum sqrt(a b), in extended precision.
inline double hellinger_bc(const std::vector<double>& a, const std::vector<double>& b) {
    long double bc = 0, mass = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        bc += std::sqrt(static_cast<long double>(a[i]) * b[i]);
        mass += (static_cast<long double>(a[i]) + b[i]) / 2;
    }
    return static_cast<double>(std::sqrt(std::max<long double>(0, mass - bc)));
}

struct FiniteDifferenceResult {
    std::size_t nets = 0;
    std::size_t checks = 0;
    double worst = 0;  // relative error, floored at 1e-6
};

/// Central differences (h = 1e-6) against the tape on random one-hidden-layer
/// nets, alternating BCE and mean-square heads over three activations.
inline FiniteDifferenceResult finite_difference_suite(std::size_t nets, std::uint64_t seed) {
    Rng rng(seed);
    const Activation acts[] = {Activation::tanh, Activation::sigmoid, Activation::leaky_relu};
    FiniteDifferenceResult res;
    for (std::size_t trial = 0; trial < nets; ++trial) {
        const std::size_t batch = 1 + rng() % 5, in = 1 + rng() % 4, hidden = 1 + rng() % 6, out = 1 + rng() % 3;
        const Activation act = acts[trial % 3];
        const bool use_bce = trial % 2 == 0;
        std::vector<Tensor<double>> params = {random_matrix(rng, in, hidden), random_matrix(rng, 1, hidden, 0.1),
                                              random_matrix(rng, hidden, out), random_matrix(rng, 1, out, 0.1)};
        const Tensor<double> x = random_matrix(rng, batch, in);
        Tensor<double> targets = Tensor<double>::matrix(batch, out);
        for (auto& t : targets.values()) t = static_cast<double>(rng() % 2);
        const char* names[] = {"w1", "b1", "w2", "b2"};

        const auto build = [&](Tape<double>& tape) {
            std::vector<Var> p;
            for (std::size_t i = 0; i < params.size(); ++i) p.push_back(tape.parameter(names[i], params[i]));
            const Var h = tape.activate(tape.add(tape.matmul(tape.constant(x), p[0]), p[1]), act);
            const Var y = tape.add(tape.matmul(h, p[2]), p[3]);
            return use_bce ? tape.bce_with_logits(y, targets) : tape.mean(tape.mul(y, y));
        };
        Tape<double> tape;
        const auto grads = tape.backward(build(tape));

        const double h = 1e-6;
        for (std::size_t i = 0; i < params.size(); ++i) {
            for (std::size_t k = 0; k < params[i].size(); ++k) {
                const double orig = params[i][k];
                params[i][k] = orig + h;
                Tape<double> tp;
                const double up = tp.value(build(tp)).item();
                params[i][k] = orig - h;
                Tape<double> tm;
                const double down = tm.value(build(tm)).item();
                params[i][k] = orig;
                const double numeric = (up - down) / (2 * h);
                const double analytic = grads.at(names[i])[k];
                const double rel =
                    std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
                res.worst = std::max(res.worst, rel);
                ++res.checks;
            }
        }
        ++res.nets;
    }
    return res;
}

}  // namespace macl::testing
