#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pfm/errors.hpp"
#include "pfm/mlp.hpp"
#include "pfm/rng.hpp"

using namespace pfm;

namespace {

MlpSpec make_spec(int in, std::vector<int> hidden, int out, Activation act, std::uint64_t seed) {
    MlpSpec s;
    s.input_dim = in;
    s.hidden_dims = std::move(hidden);
    s.output_dim = out;
    s.activation = act;
    s.seed = seed;
    return s;
}

// Central finite differences of (upstream . forward(params, input)).
Vec fd_gradient(const MlpParams& params, const Vec& input, const Vec& upstream,
                double h = 1e-5) {
    MlpParams probe = params;
    Vec grad(params.flat.size());
    for (std::size_t i = 0; i < params.flat.size(); ++i) {
        double saved = probe.flat[i];
        probe.flat[i] = saved + h;
        double fp = dot(upstream, mlp_forward(probe, input));
        probe.flat[i] = saved - h;
        double fm = dot(upstream, mlp_forward(probe, input));
        probe.flat[i] = saved;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

double rel_error(const Vec& a, const Vec& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        num += d * d;
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace

TEST_CASE("init is deterministic in the seed and zero-biased") {
    auto spec = make_spec(3, {8}, 2, Activation::Tanh, 7);
    MlpParams a = init_mlp(spec);
    MlpParams b = init_mlp(spec);
    CHECK(a.flat == b.flat);  // bit-identical

    for (std::size_t l = 0; l < a.layer_count(); ++l)
        for (double v : a.biases(l)) CHECK(v == 0.0);

    auto spec2 = spec;
    spec2.seed = 8;
    CHECK(init_mlp(spec2).flat != a.flat);
}

TEST_CASE("parameter count for 3 -> [8] -> 2 is 50") {
    auto spec = make_spec(3, {8}, 2, Activation::Tanh, 0);
    CHECK(spec.param_count() == 50);
    CHECK(init_mlp(spec).total_count() == 50);
}

TEST_CASE("init scale follows 1/sqrt(fan_in)") {
    auto spec = make_spec(100, {50}, 1, Activation::Silu, 3);
    MlpParams p = init_mlp(spec);
    double bound0 = 1.0 / std::sqrt(100.0);
    for (double w : p.weights(0)) CHECK(std::abs(w) <= bound0);
    double bound1 = 1.0 / std::sqrt(50.0);
    for (double w : p.weights(1)) CHECK(std::abs(w) <= bound1);
}

TEST_CASE("forward: all-zero parameters give the zero vector") {
    auto spec = make_spec(4, {6, 5}, 3, Activation::Silu, 1);
    MlpParams p = init_mlp(spec);
    std::fill(p.flat.begin(), p.flat.end(), 0.0);
    Vec out = mlp_forward(p, Vec{1.0, -2.0, 3.0, 0.5});
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("forward: identity-weight tanh layer maps zero to zero") {
    auto spec = make_spec(3, {3}, 3, Activation::Tanh, 1);
    MlpParams p = init_mlp(spec);
    std::fill(p.flat.begin(), p.flat.end(), 0.0);
    for (int j = 0; j < 3; ++j) {
        p.weights(0)[static_cast<std::size_t>(j) * 3 + j] = 1.0;
        p.weights(1)[static_cast<std::size_t>(j) * 3 + j] = 1.0;
    }
    Vec out = mlp_forward(p, Vec{0.0, 0.0, 0.0});
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("forward matches the dense-arithmetic oracle") {
    // patterned parameters evaluated against an independent numpy run
    auto spec = make_spec(3, {8}, 2, Activation::Tanh, 0);
    MlpParams p = init_mlp(spec);
    for (std::size_t i = 0; i < p.flat.size(); ++i)
        p.flat[i] = 0.05 * (static_cast<double>(i % 11) - 5.0);
    Vec out = mlp_forward(p, Vec{0.3, -0.7, 0.2});
    CHECK(out[0] == doctest::Approx(-0.008243463909938263).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(-0.1751880772513391).epsilon(1e-14));
}

TEST_CASE("forward rejects mismatched input length") {
    auto spec = make_spec(3, {4}, 2, Activation::Tanh, 0);
    MlpParams p = init_mlp(spec);
    CHECK_THROWS_AS(mlp_forward(p, Vec{1.0, 2.0}), ShapeError);
}

TEST_CASE("gradient: zero upstream gives zero gradient") {
    auto spec = make_spec(3, {5}, 2, Activation::Silu, 11);
    MlpParams p = init_mlp(spec);
    Vec g = mlp_grad(p, Vec{0.2, 0.4, -0.1}, Vec{0.0, 0.0});
    for (double v : g) CHECK(v == 0.0);
}

TEST_CASE("gradient: last linear layer has the closed form u a^T") {
    auto spec = make_spec(3, {4}, 2, Activation::Tanh, 5);
    MlpParams p = init_mlp(spec);
    Vec input{0.3, -0.2, 0.9};
    Vec upstream{0.7, -1.3};

    // hidden activation, recomputed directly
    Vec act(4, 0.0);
    for (int j = 0; j < 4; ++j) {
        double s = p.biases(0)[j];
        for (int k = 0; k < 3; ++k) s += p.weights(0)[static_cast<std::size_t>(j) * 3 + k] * input[k];
        act[j] = std::tanh(s);
    }
    Vec g = mlp_grad(p, input, upstream);
    std::size_t off = p.weights(0).size() + p.biases(0).size();
    for (int j = 0; j < 2; ++j) {
        for (int k = 0; k < 4; ++k)
            CHECK(g[off + static_cast<std::size_t>(j) * 4 + k] ==
                  doctest::Approx(upstream[j] * act[k]).epsilon(1e-14));
        CHECK(g[off + 8 + j] == doctest::Approx(upstream[j]).epsilon(1e-14));
    }
}

TEST_CASE("gradient check: 20 random configurations vs central differences") {
    RngStream rng(2024, "gradcheck");
    for (int trial = 0; trial < 20; ++trial) {
        int in = 1 + static_cast<int>(rng.index(5));
        int out = 1 + static_cast<int>(rng.index(4));
        std::vector<int> hidden;
        int layers = 1 + static_cast<int>(rng.index(3));
        for (int l = 0; l < layers; ++l) hidden.push_back(2 + static_cast<int>(rng.index(7)));
        Activation act = (trial % 2 == 0) ? Activation::Tanh : Activation::Silu;
        auto spec = make_spec(in, hidden, out, act, 100 + static_cast<std::uint64_t>(trial));
        MlpParams params = init_mlp(spec);

        Vec input(static_cast<std::size_t>(in));
        for (auto& v : input) v = rng.normal();
        Vec upstream(static_cast<std::size_t>(out));
        for (auto& v : upstream) v = rng.normal();

        Vec analytic = mlp_grad(params, input, upstream);
        Vec numeric = fd_gradient(params, input, upstream);
        CHECK(rel_error(analytic, numeric) <= 1e-4);
    }
}

TEST_CASE("adam: zero gradient leaves parameters and moments unchanged") {
    auto spec = make_spec(2, {3}, 1, Activation::Tanh, 9);
    MlpParams p = init_mlp(spec);
    Vec before = p.flat;
    AdamState st(p.flat.size());
    adam_step(st, p, Vec(p.flat.size(), 0.0));
    CHECK(p.flat == before);
    CHECK(st.t == 1);
    for (double v : st.m) CHECK(v == 0.0);
    for (double v : st.v) CHECK(v == 0.0);
}

TEST_CASE("adam: first bias-corrected step moves by lr per nonzero coordinate") {
    auto spec = make_spec(2, {2}, 2, Activation::Tanh, 13);
    MlpParams p = init_mlp(spec);
    Vec before = p.flat;
    Vec grad(p.flat.size(), 0.0);
    grad[0] = 0.3;
    grad[3] = -2.5;
    AdamState st(p.flat.size(), 0.1);
    adam_step(st, p, grad);
    // m-hat / sqrt(v-hat) = sign(g) in the eps -> 0 limit
    CHECK(p.flat[0] == doctest::Approx(before[0] - 0.1).epsilon(1e-6));
    CHECK(p.flat[3] == doctest::Approx(before[3] + 0.1).epsilon(1e-6));
    CHECK(p.flat[1] == before[1]);
}

TEST_CASE("adam drives ||theta||^2 to zero, matching the reference run") {
    // 1-layer shell: optimize the flat vector directly through adam_step
    auto spec = make_spec(1, {1}, 1, Activation::Tanh, 0);
    MlpParams p = init_mlp(spec);
    p.flat.assign(p.flat.size(), 0.0);
    p.flat[0] = 1.0;
    p.flat[1] = 1.0;
    AdamState st(p.flat.size(), 0.1);
    Vec grad(p.flat.size(), 0.0);
    Vec first_coord;
    for (int step = 0; step < 200; ++step) {
        grad[0] = 2.0 * p.flat[0];
        grad[1] = 2.0 * p.flat[1];
        adam_step(st, p, grad);
        if (step < 3) first_coord.push_back(p.flat[0]);
    }
    // frozen from the scripted reference Adam run
    CHECK(first_coord[0] == doctest::Approx(0.9000000005).epsilon(1e-12));
    CHECK(first_coord[1] == doctest::Approx(0.8004122286917928).epsilon(1e-12));
    CHECK(first_coord[2] == doctest::Approx(0.7015862729460303).epsilon(1e-12));
    CHECK(std::sqrt(p.flat[0] * p.flat[0] + p.flat[1] * p.flat[1]) < 0.05);
}

TEST_CASE("adam refuses non-finite gradients") {
    auto spec = make_spec(2, {2}, 1, Activation::Silu, 3);
    MlpParams p = init_mlp(spec);
    Vec before = p.flat;
    AdamState st(p.flat.size());
    Vec grad(p.flat.size(), 0.0);
    grad[2] = std::nan("");
    CHECK_THROWS_AS(adam_step(st, p, grad), NumericalError);
    CHECK(p.flat == before);
    CHECK(st.t == 0);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    auto spec = make_spec(3, {16, 8}, 2, Activation::Silu, 42);
    MlpParams p = init_mlp(spec);
    std::string path = "test_mlp_ckpt.bin";
    save_checkpoint(path, p);
    MlpParams q = load_checkpoint(path);
    CHECK(q.flat == p.flat);
    CHECK(q.spec.input_dim == p.spec.input_dim);
    CHECK(q.spec.hidden_dims == p.spec.hidden_dims);
    CHECK(q.spec.output_dim == p.spec.output_dim);
    CHECK(q.spec.seed == p.spec.seed);
    CHECK(q.spec.activation == p.spec.activation);

    // save -> load -> save produces identical bytes
    std::string path2 = "test_mlp_ckpt2.bin";
    save_checkpoint(path2, q);
    auto read = [](const std::string& f) {
        std::ifstream is(f, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    };
    CHECK(read(path) == read(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("invalid specs are rejected") {
    CHECK_THROWS_AS(init_mlp(make_spec(0, {4}, 1, Activation::Tanh, 0)), ConfigError);
    CHECK_THROWS_AS(init_mlp(make_spec(2, {}, 1, Activation::Tanh, 0)), ConfigError);
    CHECK_THROWS_AS(init_mlp(make_spec(2, {0}, 1, Activation::Tanh, 0)), ConfigError);
}
