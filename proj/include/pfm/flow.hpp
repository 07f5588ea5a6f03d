#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pfm/mlp.hpp"
#include "pfm/prefdata.hpp"
#include "pfm/util.hpp"

namespace pfm {

/// Gaussian probability path around the straight interpolation line;
/// sigma = 0 degenerates to the line itself.
struct PathConfig {
    double sigma = 0.05;
};

/// One training point for the flow regression.
struct FlowSample {
    double t = 0.0;
    Vec y_t;
    Vec u_target;
    Vec x;
};

struct OdeConfig {
    enum class Method { Euler, Rk4 };
    Method method = Method::Rk4;
    int steps = 100;

    void validate() const;
};

struct TrainConfig {
    int epochs = 100;
    int batch_size = 128;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

struct IterateConfig {
    enum class Mode { Retrain, Reapply };
    int iterations = 1;
    Mode mode = Mode::Retrain;
    int pairs_per_iter = 2000;
};

/// Path point at a fixed time; the noise draw is skipped entirely when
/// sigma = 0 so boundary values are exact.
FlowSample path_point_at(const PreferenceTriple& triple, const PathConfig& path, double t,
                         RngStream& rng);

/// Draws t ~ U[0,1], then y ~ N(t y+ + (1-t) y-, sigma^2 I).
FlowSample sample_path_point(const PreferenceTriple& triple, const PathConfig& path,
                             RngStream& rng);

/// Time conditioning for the field input. Raw scalar t by default;
/// optionally sin/cos features at frequencies 1..k alongside it.
struct FieldEncoding {
    int sinusoidal_frequencies = 0;

    int time_dim() const { return 1 + 2 * sinusoidal_frequencies; }
    void encode_time(double t, Vec& out) const;
};

/// Mean over the batch of ||v(t, y_t | x) - u_target||^2.
double cfm_loss(const MlpParams& field, std::span<const FlowSample> batch,
                const FieldEncoding& enc = {});

/// Field input layout: [time features..., y..., x...].
int field_input_dim(int point_dim, int context_dim, const FieldEncoding& enc = {});
MlpSpec field_spec(int point_dim, int context_dim, std::vector<int> hidden_dims,
                   Activation activation, std::uint64_t seed, const FieldEncoding& enc = {});

struct FlowTrainResult {
    MlpParams field;
    std::vector<double> epoch_loss;
};

FlowTrainResult train_flow(const PreferenceDataset& dataset, const MlpSpec& spec,
                           const PathConfig& path, const TrainConfig& cfg,
                           const FieldEncoding& enc = {});

/// Fixed-step solve of dy = f(t, y) dt from t = 0 to 1.
template <class Field>
Vec integrate_generic(Field&& f, Vec y, const OdeConfig& ode);

using VectorField = std::function<Vec(double, std::span<const double>)>;
Vec integrate_field(const VectorField& f, Vec y0, const OdeConfig& ode);

/// Transports y0 along the learned field conditioned on x.
Vec integrate(const MlpParams& field, Vec y0, std::span<const double> x, const OdeConfig& ode,
              const FieldEncoding& enc = {});

/// Where inference starts: the reference policy itself, or the true
/// negative marginal p0 (loser of a freshly labeled reference pair, which
/// needs labeler access).
struct SampleSource {
    enum class Kind { Reference, NegativeMarginal };
    Kind kind = Kind::Reference;
    GaussianMixture reference;
    const PreferenceLabeler* labeler = nullptr;

    Vec draw(RngStream& rng) const;
};

Vec pfm_infer(const MlpParams& field, const SampleSource& source, std::span<const double> x,
              const OdeConfig& ode, RngStream& rng, const FieldEncoding& enc = {});

struct IterateResult {
    std::vector<MlpParams> flows;
    Sampler sampler;  // source pushed through every flow in order
    std::vector<PreferenceDataset> iteration_datasets;    // retrain mode only
    std::vector<std::vector<double>> iteration_losses;    // retrain mode only
};

/// Iterative preference refinement. Retrain: at iteration n, pairs come
/// from the source pushed through flows 1..n-1 and a fresh flow is trained
/// on them. Reapply: the given flow is applied `iterations` times.
/// Stage seeds derive from (seed, stage-name, iteration), so iteration 1
/// reproduces the plain collect + train + infer pipeline exactly.
IterateResult iterate_pfm(const SampleSource& source, const PreferenceLabeler* labeler,
                          const MlpSpec& spec_template, const PathConfig& path,
                          const TrainConfig& train_template, const OdeConfig& ode,
                          const IterateConfig& it, std::uint64_t seed,
                          const MlpParams* pretrained = nullptr, const FieldEncoding& enc = {});

// --- template implementation ---

template <class Field>
Vec integrate_generic(Field&& f, Vec y, const OdeConfig& ode) {
    ode.validate();
    const double h = 1.0 / static_cast<double>(ode.steps);
    const std::size_t d = y.size();
    if (ode.method == OdeConfig::Method::Euler) {
        for (int k = 0; k < ode.steps; ++k) {
            double t = k * h;
            Vec v = f(t, y);
            for (std::size_t i = 0; i < d; ++i) y[i] += h * v[i];
            if (!all_finite(y))
                throw NumericalError("integrate: non-finite state at step " + std::to_string(k));
        }
        return y;
    }
    Vec tmp(d);
    for (int k = 0; k < ode.steps; ++k) {
        double t = k * h;
        Vec k1 = f(t, y);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
        Vec k2 = f(t + 0.5 * h, tmp);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
        Vec k3 = f(t + 0.5 * h, tmp);
        for (std::size_t i = 0; i < d; ++i) tmp[i] = y[i] + h * k3[i];
        Vec k4 = f(t + h, tmp);
        for (std::size_t i = 0; i < d; ++i)
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if (!all_finite(y))
            throw NumericalError("integrate: non-finite state at step " + std::to_string(k));
    }
    return y;
}

}  // namespace pfm
