#include <doctest.h>

#include <cmath>
#include <vector>

#include "macl/error.hpp"
#include "macl/nn.hpp"
#include "macl/rng.hpp"
#include "macl/tape.hpp"
#include "oracles.hpp"

using namespace macl;
using testing::random_matrix;

namespace {

Tensor<double> mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>::matrix(r, c, v); }

}  // namespace

TEST_CASE("matmul hand values") {
    const auto eye = mat(2, 2, {1, 0, 0, 1});
    const auto b = mat(2, 2, {5, 6, 7, 8});
    CHECK(matmul(eye, b) == b);
    CHECK(matmul(mat(2, 2, {1, 2, 3, 4}), b) == mat(2, 2, {19, 22, 43, 50}));
    CHECK_THROWS_AS(matmul(Tensor<double>::matrix(2, 3), Tensor<double>::matrix(2, 2)), DimensionError);
}

TEST_CASE("elementwise activations") {
    CHECK(activation_value(Activation::sigmoid, 0.0) == 0.5);
    CHECK(activation_value(Activation::relu, -3.0) == 0.0);
    CHECK(activation_value(Activation::leaky_relu, -1.0, 0.2) == doctest::Approx(-0.2).epsilon(1e-15));
    CHECK(activation_value(Activation::tanh, 0.0) == 0.0);
}

TEST_CASE("bce with logits") {
    Tape<double> tape;
    const Var z = tape.constant(mat(1, 1, {0}));
    CHECK(tape.value(tape.bce_with_logits(z, mat(1, 1, {1}))).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    const Var big = tape.constant(mat(1, 1, {40}));
    CHECK(tape.value(tape.bce_with_logits(big, mat(1, 1, {1}))).item() < 1e-15);
    const Var two = tape.constant(mat(2, 1, {0, 0}));
    CHECK(tape.value(tape.bce_with_logits(two, mat(2, 1, {1, 0}))).item() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK_THROWS_AS(tape.bce_with_logits(two, mat(2, 1, {1, 0.5})), ContractError);
}

TEST_CASE("backward analytic cases") {
    Tape<double> tape;
    const Var x = tape.parameter("x", mat(1, 2, {1, 2}));
    const auto g = tape.backward(tape.sum(tape.mul(x, x)));
    CHECK(g.at("x") == mat(1, 2, {2, 4}));

    Tape<double> flat;
    const Var w = flat.parameter("w", mat(2, 2, {1, 2, 3, 4}));
    const Var c = flat.constant(mat(1, 1, {3}));
    const Var root = flat.add(flat.sum(flat.scale(w, 0.0)), c);
    const auto grads = flat.backward(root);
    for (double v : grads.at("w").values()) CHECK(v == 0.0);
}

TEST_CASE("autodiff matches central finite differences on random nets") {
    const auto res = testing::finite_difference_suite(120, 2024);
    CHECK(res.nets >= 100);
    CHECK(res.checks > 1000);
    CHECK(res.worst < 1e-4);
}

TEST_CASE("broadcast rules") {
    Tape<double> tape;
    const Var a = tape.constant(mat(2, 2, {1, 2, 3, 4}));
    CHECK(tape.value(tape.add(a, tape.constant(mat(1, 2, {10, 20})))) == mat(2, 2, {11, 22, 13, 24}));
    CHECK(tape.value(tape.mul(a, tape.constant(mat(1, 1, {2})))) == mat(2, 2, {2, 4, 6, 8}));
    CHECK_THROWS_AS(tape.add(a, tape.constant(mat(2, 1, {1, 1}))), DimensionError);
}

TEST_CASE("param store flat view and scatter") {
    nn::ParamStore<double> store;
    store.add("a", mat(1, 3, {1, 2, 3}));
    store.add("frozen", mat(1, 1, {9}), false);
    store.add("b", mat(2, 1, {4, 5}));
    CHECK(store.trainable_scalars() == 5);
    CHECK(store.flat_view() == std::vector<double>{1, 2, 3, 4, 5});
    auto flat = store.flat_view();
    store.scatter(flat);
    CHECK(store.flat_view() == flat);
    store.scatter(std::vector<double>{5, 4, 3, 2, 1});
    CHECK(store.get("b").value == mat(2, 1, {2, 1}));
    CHECK(store.get("frozen").value.item() == 9);
    CHECK_THROWS_AS(store.scatter(std::vector<double>{1}), DimensionError);
    CHECK_THROWS_AS(store.add("a", mat(1, 1, {0})), ContractError);
}

TEST_CASE("mlp init is deterministic and validates widths") {
    const nn::MlpSpec spec{{3, 8, 2}, Activation::leaky_relu};
    nn::ParamStore<double> s1, s2;
    Rng r1(7), r2(7);
    nn::Mlp::create(s1, "m", spec, r1);
    nn::Mlp::create(s2, "m", spec, r2);
    CHECK(s1 == s2);
    nn::ParamStore<double> bad;
    Rng r3(1);
    CHECK_THROWS_AS(nn::Mlp::create(bad, "z", nn::MlpSpec{{0, 4}, Activation::relu}, r3), ContractError);
}

TEST_CASE("He init variance") {
    nn::ParamStore<double> store;
    Rng rng(11);
    nn::Mlp::create(store, "he", nn::MlpSpec{{100, 100}, Activation::relu}, rng);
    const auto& w = store.get("he.fc0.weight").value;
    double sum = 0, sq = 0;
    for (double v : w.values()) {
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(w.size());
    const double var = sq / n - (sum / n) * (sum / n);
    CHECK(w.size() == 10000);
    CHECK(var == doctest::Approx(2.0 / 100).epsilon(0.2));
}

TEST_CASE("adam step") {
    nn::ParamStore<double> store;
    store.add("p", mat(1, 1, {1.0}));
    store.add("q", mat(1, 1, {2.0}), false);
    nn::AdamState<double> st;
    st.config.lr = 0.1;
    nn::adam_step(store, {{"p", mat(1, 1, {1.0})}, {"q", mat(1, 1, {1.0})}}, st);
    CHECK(st.step == 1);
    CHECK(store.get("p").value.item() == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(store.get("q").value.item() == 2.0);

}

TEST_CASE("adam with zero gradients leaves parameters alone") {
    nn::ParamStore<double> store;
    store.add("p", mat(1, 1, {1.0}));
    nn::AdamState<double> st;
    nn::adam_step(store, {{"p", mat(1, 1, {0.0})}}, st);
    CHECK(store.get("p").value.item() == 1.0);
    CHECK(st.step == 1);
}
