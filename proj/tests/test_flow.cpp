#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "pfm/errors.hpp"
#include "pfm/flow.hpp"

using namespace pfm;

namespace {

PreferenceTriple make_triple(Vec plus, Vec minus) {
    PreferenceTriple t;
    t.y_plus = std::move(plus);
    t.y_minus = std::move(minus);
    return t;
}

MlpParams constant_field(int point_dim, const Vec& value) {
    MlpSpec spec = field_spec(point_dim, 0, {4}, Activation::Tanh, 0);
    MlpParams p = init_mlp(spec);
    std::fill(p.flat.begin(), p.flat.end(), 0.0);
    auto b = p.biases(p.layer_count() - 1);
    std::copy(value.begin(), value.end(), b.begin());
    return p;
}

PreferenceDataset dataset_from(std::vector<PreferenceTriple> triples) {
    PreferenceDataset ds;
    ds.point_dim = static_cast<int>(triples.front().y_plus.size());
    ds.context_dim = static_cast<int>(triples.front().x.size());
    ds.triples = std::move(triples);
    return ds;
}

// Convergence order from a least-squares fit of log(error) on log(h).
double measured_order(const std::vector<int>& steps, const std::vector<double>& errs) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = steps.size();
    for (std::size_t i = 0; i < n; ++i) {
        double x = std::log(1.0 / steps[i]);
        double y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("path point at forced times is exact when sigma = 0") {
    PreferenceTriple t = make_triple({1.0, 1.0}, {0.0, 0.0});
    PathConfig path;
    path.sigma = 0.0;
    RngStream rng(1);

    FlowSample mid = path_point_at(t, path, 0.5, rng);
    CHECK(mid.y_t == Vec{0.5, 0.5});
    CHECK(mid.u_target == Vec{1.0, 1.0});

    PreferenceTriple t2 = make_triple({0.3, -2.7}, {1.9, 0.4});
    FlowSample at0 = path_point_at(t2, path, 0.0, rng);
    CHECK(at0.y_t == t2.y_minus);  // bitwise
    FlowSample at1 = path_point_at(t2, path, 1.0, rng);
    CHECK(at1.y_t == t2.y_plus);
    CHECK(at1.u_target == Vec{0.3 - 1.9, -2.7 - 0.4});
}

TEST_CASE("path noise concentrates around the interpolation point") {
    PreferenceTriple t = make_triple({1.0, 1.0}, {0.0, 0.0});
    PathConfig path;
    path.sigma = 0.05;
    RngStream rng(42);
    const int n = 100000;
    Vec mean(2, 0.0);
    for (int i = 0; i < n; ++i) {
        FlowSample s = path_point_at(t, path, 0.5, rng);
        mean[0] += s.y_t[0];
        mean[1] += s.y_t[1];
    }
    double tol = 3.0 * 0.05 / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean[0] / n - 0.5) < tol);
    CHECK(std::abs(mean[1] / n - 0.5) < tol);
}

TEST_CASE("sample_path_point draws t uniformly and respects dimensions") {
    PreferenceTriple bad = make_triple({1.0, 2.0}, {0.0});
    PathConfig path;
    RngStream rng(3);
    CHECK_THROWS_AS(sample_path_point(bad, path, rng), ShapeError);

    PreferenceTriple t = make_triple({1.0}, {0.0});
    double tsum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) tsum += sample_path_point(t, path, rng).t;
    CHECK(std::abs(tsum / n - 0.5) < 0.01);
}

TEST_CASE("cfm_loss: exact fit, zero field, and permutation invariance") {
    PreferenceTriple t = make_triple({1.0, 1.0}, {0.0, 0.0});
    PathConfig path;
    path.sigma = 0.0;
    RngStream rng(5);

    // constant field equal to the conditional target -> loss 0
    MlpParams fit = constant_field(2, {1.0, 1.0});
    std::vector<FlowSample> batch;
    for (int i = 0; i < 8; ++i) batch.push_back(sample_path_point(t, path, rng));
    CHECK(cfm_loss(fit, batch) == 0.0);

    MlpParams zero = constant_field(2, {0.0, 0.0});
    CHECK(cfm_loss(zero, std::vector<FlowSample>{batch[0]}) == 2.0);

    // exact permutation invariance
    MlpSpec spec = field_spec(2, 0, {8, 8}, Activation::Silu, 77);
    MlpParams rough = init_mlp(spec);
    std::vector<FlowSample> shuffled = batch;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[1], shuffled[4]);
    CHECK(cfm_loss(rough, batch) == cfm_loss(rough, shuffled));

    CHECK_THROWS_AS(cfm_loss(zero, std::vector<FlowSample>{}), UsageError);
}

TEST_CASE("training halves the loss on a fixed 256-pair toy set") {
    RngStream rng(2718, "pairs");
    std::vector<PreferenceTriple> triples;
    for (int i = 0; i < 256; ++i) {
        Vec minus{rng.normal(), rng.normal()};
        Vec plus{rng.normal() * 0.3 + 2.0, rng.normal() * 0.3 - 1.0};
        triples.push_back(make_triple(plus, minus));
    }
    PreferenceDataset ds = dataset_from(std::move(triples));
    MlpSpec spec = field_spec(2, 0, {64, 64}, Activation::Silu, 11);
    PathConfig path;
    TrainConfig cfg;
    cfg.epochs = 125;  // 4 steps per epoch = 500 Adam steps
    cfg.batch_size = 64;
    cfg.seed = 21;
    FlowTrainResult res = train_flow(ds, spec, path, cfg);
    CHECK(res.epoch_loss.back() <= 0.5 * res.epoch_loss.front());
}

TEST_CASE("single-pair memorization reaches the endpoint") {
    PreferenceTriple t = make_triple({0.8, -0.6}, {-0.4, 0.9});
    PreferenceDataset ds = dataset_from({t});
    MlpSpec spec = field_spec(2, 0, {32, 32}, Activation::Silu, 3);
    PathConfig path;
    path.sigma = 0.0;
    TrainConfig cfg;
    cfg.epochs = 2000;
    cfg.batch_size = 1;
    cfg.seed = 9;
    FlowTrainResult res = train_flow(ds, spec, path, cfg);

    std::vector<FlowSample> probe;
    RngStream rng(1);
    for (int i = 0; i <= 50; ++i) probe.push_back(path_point_at(t, path, i / 50.0, rng));
    double final_loss = cfm_loss(res.field, probe);
    CHECK(final_loss < 1e-3);

    OdeConfig ode;
    Vec endpoint = integrate(res.field, t.y_minus, {}, ode);
    CHECK(distance(endpoint, t.y_plus) < 0.1);
}

TEST_CASE("training is deterministic in the seed") {
    RngStream rng(1234, "pairs");
    std::vector<PreferenceTriple> triples;
    for (int i = 0; i < 32; ++i)
        triples.push_back(make_triple({rng.normal(), rng.normal()},
                                      {rng.normal(), rng.normal()}));
    PreferenceDataset ds = dataset_from(std::move(triples));
    MlpSpec spec = field_spec(2, 0, {16, 16}, Activation::Tanh, 5);
    PathConfig path;
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 8;
    cfg.seed = 99;
    FlowTrainResult a = train_flow(ds, spec, path, cfg);
    FlowTrainResult b = train_flow(ds, spec, path, cfg);
    CHECK(a.field.flat == b.field.flat);
    CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("identical pairs train to a near-zero displacement") {
    RngStream rng(77, "pairs");
    std::vector<PreferenceTriple> triples;
    for (int i = 0; i < 50; ++i) {
        Vec y{rng.normal(), rng.normal()};
        triples.push_back(make_triple(y, y));
    }
    PreferenceDataset ds = dataset_from(std::move(triples));
    MlpSpec spec = field_spec(2, 0, {32, 32}, Activation::Silu, 1);
    PathConfig path;
    path.sigma = 0.0;
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 50;
    cfg.seed = 4;
    FlowTrainResult res = train_flow(ds, spec, path, cfg);
    OdeConfig ode;
    for (const auto& t : ds.triples) {
        Vec out = integrate(res.field, t.y_minus, {}, ode);
        CHECK(distance(out, t.y_minus) < 0.05);
    }
}

TEST_CASE("integrate: stationary flow returns the start point exactly") {
    MlpParams zero = constant_field(3, {0.0, 0.0, 0.0});
    OdeConfig ode;
    Vec y0{1.5, -2.0, 0.25};
    CHECK(integrate(zero, y0, {}, ode) == y0);
    ode.method = OdeConfig::Method::Euler;
    CHECK(integrate(zero, y0, {}, ode) == y0);
}

TEST_CASE("integrate: dy = y dt reaches e and shows the right orders") {
    auto growth = [](double, std::span<const double> y) { return Vec{y[0]}; };
    const double e = 2.718281828459045;

    OdeConfig rk4;
    rk4.method = OdeConfig::Method::Rk4;
    rk4.steps = 100;
    Vec out = integrate_field(growth, {1.0}, rk4);
    CHECK(std::abs(out[0] - e) <= 1e-8);

    std::vector<int> steps = {10, 20, 40, 80};
    std::vector<double> rk4_err, euler_err;
    for (int n : steps) {
        OdeConfig c;
        c.steps = n;
        c.method = OdeConfig::Method::Rk4;
        rk4_err.push_back(std::abs(integrate_field(growth, {1.0}, c)[0] - e));
        c.method = OdeConfig::Method::Euler;
        euler_err.push_back(std::abs(integrate_field(growth, {1.0}, c)[0] - e));
    }
    double rk4_order = measured_order(steps, rk4_err);
    double euler_order = measured_order(steps, euler_err);
    CHECK(rk4_order >= 3.7);
    CHECK(rk4_order <= 4.3);
    CHECK(euler_order >= 0.8);
    CHECK(euler_order <= 1.2);
}

TEST_CASE("integrate is bitwise deterministic") {
    MlpSpec spec = field_spec(2, 0, {16}, Activation::Silu, 8);
    MlpParams field = init_mlp(spec);
    OdeConfig ode;
    Vec a = integrate(field, {0.4, -1.2}, {}, ode);
    Vec b = integrate(field, {0.4, -1.2}, {}, ode);
    CHECK(a == b);
}

TEST_CASE("integrate reports the failing step on blow-up") {
    auto exploding = [](double, std::span<const double> y) { return Vec{y[0] * 1e300}; };
    OdeConfig ode;
    ode.method = OdeConfig::Method::Euler;
    ode.steps = 10;
    try {
        integrate_field(exploding, {1.0}, ode);
        CHECK(false);
    } catch (const NumericalError& err) {
        CHECK(std::string(err.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("pfm_infer with a zero field returns the raw source draw") {
    GaussianMixture ref = GaussianMixture::eight_gaussians();
    SampleSource src;
    src.reference = ref;
    MlpParams zero = constant_field(2, {0.0, 0.0});
    OdeConfig ode;

    RngStream rng_a(1001);
    Vec inferred = pfm_infer(zero, src, {}, ode, rng_a);
    RngStream rng_b(1001);
    Vec raw = gm_sample(ref, rng_b);
    CHECK(inferred == raw);
}

TEST_CASE("the p0 source requires a labeler and lowers the draw's reward on average") {
    GaussianMixture ref = GaussianMixture::eight_gaussians(4.0, 1.0);
    SampleSource src;
    src.kind = SampleSource::Kind::NegativeMarginal;
    src.reference = ref;
    RngStream rng(5);
    CHECK_THROWS_AS(src.draw(rng), ConfigError);

    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    det.reward.kind = RewardFunction::Kind::MixtureDensity;
    det.reward.mixture = ref;
    src.labeler = &det;

    SampleSource plain;
    plain.reference = ref;
    double r_p0 = 0.0, r_ref = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
        RngStream r1(6, "p0", static_cast<std::uint64_t>(i));
        r_p0 += det.reward(src.draw(r1));
        RngStream r2(6, "ref", static_cast<std::uint64_t>(i));
        r_ref += det.reward(plain.draw(r2));
    }
    CHECK(r_p0 / n < r_ref / n);
}

TEST_CASE("iterate_pfm: one retrain iteration equals the plain pipeline") {
    GaussianMixture ref;
    ref.dim = 2;
    ref.weights = {1.0};
    ref.means = {{0.0, 0.0}};
    ref.diag_stds = {{2.0, 2.0}};
    PreferenceLabeler det;
    det.kind = PreferenceLabeler::Kind::Deterministic;
    det.reward.kind = RewardFunction::Kind::MixtureDensity;
    det.reward.mixture = GaussianMixture::eight_gaussians();

    SampleSource src;
    src.reference = ref;
    MlpSpec spec = field_spec(2, 0, {16, 16}, Activation::Silu, 0);
    PathConfig path;
    TrainConfig cfg;
    cfg.epochs = 8;
    cfg.batch_size = 32;
    OdeConfig ode;
    ode.steps = 20;
    IterateConfig it;
    it.iterations = 1;
    it.pairs_per_iter = 128;
    const std::uint64_t seed = 314;

    IterateResult iter = iterate_pfm(src, &det, spec, path, cfg, ode, it, seed);

    // the same stages composed by hand with the same substream names
    PreferenceDataset ds = collect_pairs(gm_sampler(ref), det, 128, 0,
                                         derive_seed(seed, "data", 1));
    MlpSpec spec1 = spec;
    spec1.seed = derive_seed(seed, "init", 1);
    TrainConfig cfg1 = cfg;
    cfg1.seed = derive_seed(seed, "train", 1);
    FlowTrainResult direct = train_flow(ds, spec1, path, cfg1);

    REQUIRE(iter.flows.size() == 1);
    CHECK(iter.flows[0].flat == direct.field.flat);

    RngStream rng_a(seed, "check", 0);
    Vec from_iter = iter.sampler(rng_a);
    RngStream rng_b(seed, "check", 0);
    Vec from_direct = pfm_infer(direct.field, src, {}, ode, rng_b);
    CHECK(from_iter == from_direct);
}

TEST_CASE("iterate_pfm: reapply with a zero field is the identity sampler") {
    GaussianMixture ref = GaussianMixture::eight_gaussians();
    SampleSource src;
    src.reference = ref;
    MlpParams zero = constant_field(2, {0.0, 0.0});
    MlpSpec spec = field_spec(2, 0, {4}, Activation::Tanh, 0);
    IterateConfig it;
    it.mode = IterateConfig::Mode::Reapply;
    it.iterations = 4;
    OdeConfig ode;
    IterateResult res =
        iterate_pfm(src, nullptr, spec, PathConfig{}, TrainConfig{}, ode, it, 7, &zero);

    RngStream rng_a(55);
    Vec out = res.sampler(rng_a);
    RngStream rng_b(55);
    Vec raw = gm_sample(ref, rng_b);
    CHECK(out == raw);

    CHECK_THROWS_AS(
        iterate_pfm(src, nullptr, spec, PathConfig{}, TrainConfig{}, ode, it, 7, nullptr),
        UsageError);
    IterateConfig bad = it;
    bad.iterations = 0;
    CHECK_THROWS_AS(
        iterate_pfm(src, nullptr, spec, PathConfig{}, TrainConfig{}, ode, bad, 7, &zero),
        UsageError);
}

TEST_CASE("sinusoidal time features train and integrate") {
    FieldEncoding enc;
    enc.sinusoidal_frequencies = 3;
    CHECK(enc.time_dim() == 7);
    CHECK(field_input_dim(2, 0, enc) == 9);

    PreferenceTriple t = make_triple({0.5, 0.5}, {-0.5, -0.5});
    PreferenceDataset ds = dataset_from({t});
    MlpSpec spec = field_spec(2, 0, {16, 16}, Activation::Silu, 2, enc);
    PathConfig path;
    path.sigma = 0.0;
    TrainConfig cfg;
    cfg.epochs = 800;
    cfg.batch_size = 1;
    cfg.seed = 12;
    FlowTrainResult res = train_flow(ds, spec, path, cfg, enc);
    OdeConfig ode;
    Vec endpoint = integrate(res.field, t.y_minus, {}, ode, enc);
    CHECK(distance(endpoint, t.y_plus) < 0.15);

    // encoding mismatch is a shape error
    CHECK_THROWS_AS(integrate(res.field, t.y_minus, {}, ode), ShapeError);
}

TEST_CASE("dimension mismatches in training are rejected") {
    PreferenceTriple t = make_triple({1.0, 1.0}, {0.0, 0.0});
    PreferenceDataset ds = dataset_from({t});
    MlpSpec wrong = field_spec(3, 0, {8}, Activation::Tanh, 0);  // 3-D field, 2-D data
    CHECK_THROWS_AS(train_flow(ds, wrong, PathConfig{}, TrainConfig{}), ShapeError);

    PreferenceDataset empty;
    empty.point_dim = 2;
    MlpSpec spec = field_spec(2, 0, {8}, Activation::Tanh, 0);
    CHECK_THROWS_AS(train_flow(empty, spec, PathConfig{}, TrainConfig{}), UsageError);
}
