#pragma once

#include "macl/cgan.hpp"
#include "macl/tasks.hpp"

namespace macl::testing {

struct RingFixture {
    tasks::Suite suite;
    gan::Cgan<float> model;
};

/// 6-mode ring (radius 5, sd 0.5) with one planted target per mode and a
/// model trained on the sources. Built once per test binary.
inline const RingFixture& ring_fixture() {
    static const RingFixture fx = [] {
        auto spec = tasks::MixtureSpec::ring(6, 5.0, 0.5, 500);
        for (std::size_t m = 0; m < 6; ++m) spec.plant_radial(m, 0.25, 500);
        auto suite = tasks::gaussian_mixture_suite(spec, 3);
        gan::GanConfig cfg;
        cfg.total_steps = 2000;
        cfg.seed = 3;
        auto model = gan::pretrain(gan::ModelSpec::planar(6), cfg, suite.sources.labeled<float>());
        return RingFixture{std::move(suite), std::move(model)};
    }();
    return fx;
}

}  // namespace macl::testing
