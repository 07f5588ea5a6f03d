#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pfm/errors.hpp"
#include "pfm/prefdata.hpp"

using namespace pfm;

namespace {

GaussianMixture single_gaussian(Vec mean, double std_) {
    GaussianMixture gm;
    gm.dim = static_cast<int>(mean.size());
    gm.weights = {1.0};
    gm.diag_stds.push_back(Vec(mean.size(), std_));
    gm.means.push_back(std::move(mean));
    return gm;
}

RewardFunction far_peak_reward() {
    RewardFunction r;
    r.kind = RewardFunction::Kind::MixtureLogDensity;
    r.mixture = single_gaussian({100.0, 100.0}, 10.0);
    return r;
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gm_sample: degenerate component returns its mean") {
    GaussianMixture gm = single_gaussian({2.5, -1.5}, 1e-12);
    RngStream rng(1);
    Vec y = gm_sample(gm, rng);
    CHECK(std::abs(y[0] - 2.5) < 1e-9);
    CHECK(std::abs(y[1] + 1.5) < 1e-9);
}

TEST_CASE("gm_sample: component weights are respected") {
    GaussianMixture gm;
    gm.dim = 2;
    gm.weights = {0.5, 0.5};
    gm.means = {{-10.0, 0.0}, {10.0, 0.0}};
    gm.diag_stds = {{0.1, 0.1}, {0.1, 0.1}};
    RngStream rng(7);
    int right = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
        if (gm_sample(gm, rng)[0] > 0.0) ++right;
    double frac = static_cast<double>(right) / n;
    CHECK(frac >= 0.47);
    CHECK(frac <= 0.53);
}

TEST_CASE("gm_sample: empirical mean matches the mixture mean") {
    GaussianMixture gm;
    gm.dim = 2;
    gm.weights = {0.25, 0.75};
    gm.means = {{1.0, -2.0}, {3.0, 4.0}};
    gm.diag_stds = {{0.5, 0.5}, {1.5, 1.0}};
    // analytic mean: 0.25*(1,-2) + 0.75*(3,4) = (2.5, 2.5)
    RngStream rng(11);
    const int n = 100000;
    Vec sum(2, 0.0);
    for (int i = 0; i < n; ++i) {
        Vec y = gm_sample(gm, rng);
        sum[0] += y[0];
        sum[1] += y[1];
    }
    // per-coordinate spread is below std 2.5; 4 sigma / sqrt(n) bound
    double tol = 4.0 * 2.5 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(sum[0] / n - 2.5) < tol);
    CHECK(std::abs(sum[1] / n - 2.5) < tol);
}

TEST_CASE("gm_pdf: unit 2-D Gaussian peaks at 1/(2 pi)") {
    GaussianMixture gm = single_gaussian({0.7, -0.3}, 1.0);
    CHECK(gm_pdf(gm, Vec{0.7, -0.3}) == doctest::Approx(0.15915494309189535).epsilon(1e-14));
}

TEST_CASE("gm_pdf: far tails underflow to zero") {
    GaussianMixture gm = single_gaussian({0.0, 0.0}, 1.0);
    CHECK(gm_pdf(gm, Vec{100.0, 0.0}) < 1e-300);
}

TEST_CASE("gm_pdf: duplicated component with split weights equals one component") {
    GaussianMixture one = single_gaussian({1.0, 2.0}, 0.7);
    GaussianMixture two;
    two.dim = 2;
    two.weights = {0.3, 0.7};
    two.means = {{1.0, 2.0}, {1.0, 2.0}};
    two.diag_stds = {{0.7, 0.7}, {0.7, 0.7}};
    Vec y{0.4, 1.6};
    CHECK(gm_pdf(two, y) == doctest::Approx(gm_pdf(one, y)).epsilon(1e-14));
}

TEST_CASE("gm_pdf mass check: grid quadrature over the toy box captures ~1") {
    GaussianMixture gm = GaussianMixture::eight_gaussians();
    const int steps = 400;
    const double lo = -6.0, hi = 6.0;
    double h = (hi - lo) / steps;
    double mass = 0.0;
    for (int i = 0; i < steps; ++i)
        for (int j = 0; j < steps; ++j) {
            Vec y{lo + (i + 0.5) * h, lo + (j + 0.5) * h};
            mass += gm_pdf(gm, y) * h * h;
        }
    CHECK(mass >= 0.999);
    CHECK(mass <= 1.001);
}

TEST_CASE("preference_prob: Bradley-Terry values and exact antisymmetry") {
    PreferenceLabeler bt;
    bt.kind = PreferenceLabeler::Kind::BradleyTerry;
    bt.tau = 1.0;
    bt.reward = far_peak_reward();

    Vec a{1.0, 2.0}, b{1.0, 2.0};
    CHECK(preference_prob(bt, a, b) == 0.5);

    // reward gap of exactly 1 via log-density arithmetic is awkward; use a
    // tabular reward instead
    RewardFunction tab;
    tab.kind = RewardFunction::Kind::Tabular;
    tab.support = {{0.0}, {1.0}};
    tab.values = {1.0, 2.0};
    bt.reward = tab;
    CHECK(preference_prob(bt, Vec{1.0}, Vec{0.0}) ==
          doctest::Approx(0.7310585786300049).epsilon(1e-14));

    RngStream rng(3);
    for (int i = 0; i < 200; ++i) {
        Vec y1{rng.normal()};
        Vec y2{rng.normal()};
        PreferenceLabeler l = bt;
        l.tau = 0.5 + rng.uniform() * 3.0;
        l.reward.kind = RewardFunction::Kind::MixtureLogDensity;
        l.reward.mixture = single_gaussian({3.0}, 1.0);
        CHECK(preference_prob(l, y1, y2) + preference_prob(l, y2, y1) == 1.0);
    }
}

TEST_CASE("preference_prob: deterministic teacher") {
    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    RewardFunction tab;
    tab.kind = RewardFunction::Kind::Tabular;
    tab.support = {{0.0}, {1.0}, {2.0}};
    tab.values = {0.0, 5.0, 5.0};
    det.reward = tab;
    CHECK(preference_prob(det, Vec{1.0}, Vec{0.0}) == 1.0);
    CHECK(preference_prob(det, Vec{0.0}, Vec{1.0}) == 0.0);
    CHECK(preference_prob(det, Vec{1.0}, Vec{2.0}) == 0.5);
}

TEST_CASE("label_pair: deterministic by reward, ties by fair coin") {
    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    det.reward.kind = RewardFunction::Kind::MixtureLogDensity;
    det.reward.mixture = single_gaussian({0.0, 0.0}, 1.0);

    // (3,4) is farther from the origin, so (0,0) wins under the log density
    RngStream rng(5);
    PreferenceTriple t = label_pair(det, Vec{3.0, 4.0}, Vec{0.0, 0.0}, rng);
    CHECK(t.y_plus == Vec{0.0, 0.0});
    CHECK(t.y_minus == Vec{3.0, 4.0});

    // equal rewards: first-slot win fraction concentrates at 1/2
    RewardFunction tab;
    tab.kind = RewardFunction::Kind::Tabular;
    tab.support = {{0.0}, {1.0}};
    tab.values = {1.0, 1.0};
    det.reward = tab;
    int first_wins = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        RngStream r(99, "tie", static_cast<std::uint64_t>(i));
        PreferenceTriple tt = label_pair(det, Vec{0.0}, Vec{1.0}, r);
        if (tt.y_plus == Vec{0.0}) ++first_wins;
    }
    double frac = static_cast<double>(first_wins) / n;
    CHECK(frac >= 0.47);
    CHECK(frac <= 0.53);
}

TEST_CASE("label_pair: saturated Bradley-Terry approximates the deterministic teacher") {
    PreferenceLabeler bt;
    bt.kind = PreferenceLabeler::Kind::BradleyTerry;
    bt.tau = 1e6;
    RewardFunction tab;
    tab.kind = RewardFunction::Kind::Tabular;
    tab.support = {{0.0}, {1.0}};
    tab.values = {1.0, 1.1};  // reward gap 0.1
    bt.reward = tab;
    int high_wins = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
        RngStream r(17, "sat", static_cast<std::uint64_t>(i));
        PreferenceTriple t = label_pair(bt, Vec{1.0}, Vec{0.0}, r);
        if (t.y_plus == Vec{1.0}) ++high_wins;
    }
    CHECK(high_wins >= 9999);
}

TEST_CASE("collect_dataset: single pair, dimensions, determinism") {
    GaussianMixture policy = single_gaussian({0.0, 0.0}, 1.0);
    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    det.reward.kind = RewardFunction::Kind::MixtureDensity;
    det.reward.mixture = GaussianMixture::eight_gaussians();

    PreferenceDataset one = collect_dataset(policy, det, 1, 0, 42);
    CHECK(one.size() == 1);
    CHECK(one.triples[0].y_plus.size() == 2);
    CHECK(one.triples[0].y_minus.size() == 2);
    CHECK(one.point_dim == 2);

    CHECK_THROWS_AS(collect_dataset(policy, det, 0, 0, 42), UsageError);

    PreferenceDataset a = collect_dataset(policy, det, 50, 0, 42);
    PreferenceDataset b = collect_dataset(policy, det, 50, 0, 42);
    save_dataset("test_ds_a.txt", a);
    save_dataset("test_ds_b.txt", b);
    CHECK(read_file("test_ds_a.txt") == read_file("test_ds_b.txt"));
    std::remove("test_ds_a.txt");
    std::remove("test_ds_b.txt");
}

TEST_CASE("collect_dataset: positive marginal dominates under Bradley-Terry labels") {
    GaussianMixture reference;
    reference.dim = 2;
    reference.weights = {0.5, 0.5};
    reference.means = {{0.0, 0.0}, {0.0, 0.0}};
    reference.diag_stds = {{2.0, 2.0}, {3.5, 3.5}};
    PreferenceLabeler bt;
    bt.kind = PreferenceLabeler::Kind::BradleyTerry;
    bt.tau = 1.0;
    bt.reward.kind = RewardFunction::Kind::MixtureDensity;
    bt.reward.mixture = GaussianMixture::eight_gaussians();

    PreferenceDataset ds = collect_dataset(reference, bt, 5000, 0, 777);
    double plus = 0.0, minus = 0.0;
    for (const auto& t : ds.triples) {
        plus += bt.reward(t.y_plus);
        minus += bt.reward(t.y_minus);
    }
    CHECK(plus / ds.size() > minus / ds.size());
}

TEST_CASE("dataset round trip: save -> load -> save is byte-identical") {
    GaussianMixture policy = single_gaussian({1.0, -1.0}, 2.0);
    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    det.reward.kind = RewardFunction::Kind::MixtureDensity;
    det.reward.mixture = GaussianMixture::eight_gaussians();
    PreferenceDataset ds = collect_dataset(policy, det, 100, 0, 9);

    save_dataset("test_rt1.txt", ds);
    PreferenceDataset loaded = load_dataset("test_rt1.txt");
    CHECK(loaded.size() == ds.size());
    CHECK(loaded.point_dim == ds.point_dim);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(loaded.triples[i].y_plus == ds.triples[i].y_plus);
        CHECK(loaded.triples[i].y_minus == ds.triples[i].y_minus);
    }
    save_dataset("test_rt2.txt", loaded);
    CHECK(read_file("test_rt1.txt") == read_file("test_rt2.txt"));
    std::remove("test_rt1.txt");
    std::remove("test_rt2.txt");
}

TEST_CASE("dataset load: truncated record names the line") {
    {
        std::ofstream os("test_trunc.txt", std::ios::binary);
        os << R"({"format_version":1,"point_dim":2,"context_dim":0,"count":2,"metadata":{}})"
           << "\n";
        os << "1,2,3,4\n";
        os << "5,6,7\n";  // one column short
    }
    try {
        load_dataset("test_trunc.txt");
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(e.line == 3);
    }
    std::remove("test_trunc.txt");
}

TEST_CASE("dataset load: empty dataset with valid header") {
    {
        std::ofstream os("test_empty.txt", std::ios::binary);
        os << R"({"format_version":1,"point_dim":2,"context_dim":0,"count":0,"metadata":{"seed":5}})"
           << "\n";
    }
    PreferenceDataset ds = load_dataset("test_empty.txt");
    CHECK(ds.size() == 0);
    CHECK(ds.metadata.at("seed").get<int>() == 5);
    std::remove("test_empty.txt");
}

TEST_CASE("context slots are carried through collection") {
    GaussianMixture policy = single_gaussian({0.0}, 1.0);
    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    det.reward.kind = RewardFunction::Kind::MixtureLogDensity;
    det.reward.mixture = single_gaussian({5.0}, 1.0);
    PreferenceDataset ds = collect_dataset(policy, det, 10, 3, 21);
    CHECK(ds.context_dim == 3);
    for (const auto& t : ds.triples) CHECK(t.x.size() == 3);

    save_dataset("test_ctx.txt", ds);
    PreferenceDataset loaded = load_dataset("test_ctx.txt");
    CHECK(loaded.triples[4].x == ds.triples[4].x);
    std::remove("test_ctx.txt");
}

TEST_CASE("mixture validation rejects bad configurations") {
    GaussianMixture gm;
    gm.dim = 2;
    gm.weights = {0.6, 0.6};
    gm.means = {{0.0, 0.0}, {1.0, 1.0}};
    gm.diag_stds = {{1.0, 1.0}, {1.0, 1.0}};
    CHECK_THROWS_AS(gm.validate(), ConfigError);
    gm.weights = {0.5, 0.5};
    gm.diag_stds[1][0] = 0.0;
    CHECK_THROWS_AS(gm.validate(), ConfigError);
}
