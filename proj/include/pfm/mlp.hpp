#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pfm/util.hpp"

namespace pfm {

enum class Activation { Tanh, Silu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

/// Architecture of a fully connected network. Equal fields and equal seed
/// give bit-identical initial parameters.
struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int output_dim = 0;
    Activation activation = Activation::Silu;
    std::uint64_t seed = 0;

    void validate() const;
    // Layer widths including input and output: [in, h0, ..., out].
    std::vector<int> layer_dims() const;
    std::int64_t param_count() const;
};

/// Trained or in-training parameters, stored flat. Layout per layer:
/// weight matrix row-major (out x in), then bias vector.
struct MlpParams {
    MlpSpec spec;
    Vec flat;

    std::int64_t total_count() const { return static_cast<std::int64_t>(flat.size()); }
    std::size_t layer_count() const { return spec.hidden_dims.size() + 1; }
    std::span<double> weights(std::size_t layer);
    std::span<const double> weights(std::size_t layer) const;
    std::span<double> biases(std::size_t layer);
    std::span<const double> biases(std::size_t layer) const;
};

MlpParams init_mlp(const MlpSpec& spec);

/// Scratch buffers for forward/backward; reusing one across calls keeps the
/// training loop allocation-free.
struct MlpWorkspace {
    std::vector<Vec> pre;  // pre-activations per layer
    std::vector<Vec> act;  // input + post-activation per layer
};

std::span<const double> mlp_forward(const MlpParams& params, std::span<const double> input,
                                    MlpWorkspace& ws);
Vec mlp_forward(const MlpParams& params, std::span<const double> input);

/// Accumulates scale * d(upstream . output)/d(theta) into grad;
/// ws must hold the forward pass of `input`.
void mlp_backward(const MlpParams& params, const MlpWorkspace& ws,
                  std::span<const double> upstream, double scale, std::span<double> grad);

/// Gradient of (upstream . output) with respect to the flattened parameters.
Vec mlp_grad(const MlpParams& params, std::span<const double> input,
             std::span<const double> upstream);

struct AdamState {
    Vec m;
    Vec v;
    std::int64_t t = 0;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n, double lr_ = 1e-3, double beta1_ = 0.9,
                       double beta2_ = 0.999, double eps_ = 1e-8)
        : m(n, 0.0), v(n, 0.0), lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}
};

/// Standard Adam update with bias correction. Refuses non-finite gradients
/// and guarantees all parameter entries stay finite.
void adam_step(AdamState& state, MlpParams& params, std::span<const double> grad);

/// Binary checkpoint: format version, spec fields, then the flattened
/// parameters as little-endian 64-bit floats. Round trip is bit-exact.
void save_checkpoint(const std::string& path, const MlpParams& params);
MlpParams load_checkpoint(const std::string& path);

}  // namespace pfm
