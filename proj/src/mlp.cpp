#include "pfm/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "pfm/errors.hpp"
#include "pfm/rng.hpp"

namespace pfm {

Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "silu") return Activation::Silu;
    throw ConfigError("unknown activation '" + name + "' (expected tanh or silu)");
}

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }

void MlpSpec::validate() const {
    if (input_dim < 1) throw ConfigError("MlpSpec: input_dim must be >= 1");
    if (output_dim < 1) throw ConfigError("MlpSpec: output_dim must be >= 1");
    if (hidden_dims.empty()) throw ConfigError("MlpSpec: hidden_dims must be non-empty");
    for (int h : hidden_dims)
        if (h < 1) throw ConfigError("MlpSpec: hidden dims must be >= 1");
}

std::vector<int> MlpSpec::layer_dims() const {
    std::vector<int> dims;
    dims.reserve(hidden_dims.size() + 2);
    dims.push_back(input_dim);
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(output_dim);
    return dims;
}

std::int64_t MlpSpec::param_count() const {
    auto dims = layer_dims();
    std::int64_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l)
        n += static_cast<std::int64_t>(dims[l + 1]) * dims[l] + dims[l + 1];
    return n;
}

namespace {

// Offset of layer l's weight block in the flat vector.
std::size_t layer_offset(const std::vector<int>& dims, std::size_t layer) {
    std::size_t off = 0;
    for (std::size_t l = 0; l < layer; ++l)
        off += static_cast<std::size_t>(dims[l + 1]) * dims[l] + dims[l + 1];
    return off;
}

double activate(Activation a, double x) {
    if (a == Activation::Tanh) return std::tanh(x);
    return x * sigmoid(x);
}

double activate_grad(Activation a, double x) {
    if (a == Activation::Tanh) {
        double t = std::tanh(x);
        return 1.0 - t * t;
    }
    double s = sigmoid(x);
    return s * (1.0 + x * (1.0 - s));
}

}  // namespace

std::span<double> MlpParams::weights(std::size_t layer) {
    auto dims = spec.layer_dims();
    std::size_t off = layer_offset(dims, layer);
    return {flat.data() + off, static_cast<std::size_t>(dims[layer + 1]) * dims[layer]};
}

std::span<const double> MlpParams::weights(std::size_t layer) const {
    auto dims = spec.layer_dims();
    std::size_t off = layer_offset(dims, layer);
    return {flat.data() + off, static_cast<std::size_t>(dims[layer + 1]) * dims[layer]};
}

std::span<double> MlpParams::biases(std::size_t layer) {
    auto dims = spec.layer_dims();
    std::size_t off = layer_offset(dims, layer) +
                      static_cast<std::size_t>(dims[layer + 1]) * dims[layer];
    return {flat.data() + off, static_cast<std::size_t>(dims[layer + 1])};
}

std::span<const double> MlpParams::biases(std::size_t layer) const {
    auto dims = spec.layer_dims();
    std::size_t off = layer_offset(dims, layer) +
                      static_cast<std::size_t>(dims[layer + 1]) * dims[layer];
    return {flat.data() + off, static_cast<std::size_t>(dims[layer + 1])};
}

MlpParams init_mlp(const MlpSpec& spec) {
    spec.validate();
    MlpParams params;
    params.spec = spec;
    params.flat.assign(static_cast<std::size_t>(spec.param_count()), 0.0);

    RngStream rng(spec.seed, "mlp_init");
    auto dims = spec.layer_dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        double scale = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        auto w = params.weights(l);
        for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * scale;
        // biases stay zero
    }
    return params;
}

std::span<const double> mlp_forward(const MlpParams& params, std::span<const double> input,
                                    MlpWorkspace& ws) {
    auto dims = params.spec.layer_dims();
    if (input.size() != static_cast<std::size_t>(dims.front()))
        throw ShapeError("mlp_forward: input length " + std::to_string(input.size()) +
                         " != input_dim " + std::to_string(dims.front()));

    std::size_t layers = dims.size() - 1;
    ws.pre.resize(layers);
    ws.act.resize(layers + 1);
    ws.act[0].assign(input.begin(), input.end());

    for (std::size_t l = 0; l < layers; ++l) {
        int out_dim = dims[l + 1];
        int in_dim = dims[l];
        auto w = params.weights(l);
        auto b = params.biases(l);
        const double* a = ws.act[l].data();
        ws.pre[l].resize(out_dim);
        ws.act[l + 1].resize(out_dim);
        for (int j = 0; j < out_dim; ++j) {
            const double* row = w.data() + static_cast<std::size_t>(j) * in_dim;
            double s = b[j];
            for (int k = 0; k < in_dim; ++k) s += row[k] * a[k];
            ws.pre[l][j] = s;
            ws.act[l + 1][j] = (l + 1 < layers) ? activate(params.spec.activation, s) : s;
        }
    }
    return ws.act.back();
}

Vec mlp_forward(const MlpParams& params, std::span<const double> input) {
    MlpWorkspace ws;
    auto out = mlp_forward(params, input, ws);
    return Vec(out.begin(), out.end());
}

void mlp_backward(const MlpParams& params, const MlpWorkspace& ws,
                  std::span<const double> upstream, double scale, std::span<double> grad) {
    auto dims = params.spec.layer_dims();
    std::size_t layers = dims.size() - 1;
    if (upstream.size() != static_cast<std::size_t>(dims.back()))
        throw ShapeError("mlp_backward: upstream length " + std::to_string(upstream.size()) +
                         " != output_dim " + std::to_string(dims.back()));
    if (grad.size() != params.flat.size())
        throw ShapeError("mlp_backward: gradient buffer size mismatch");

    // Last layer is linear, so its pre-activation delta is the upstream itself.
    Vec delta(upstream.begin(), upstream.end());
    Vec next_delta;
    for (std::size_t li = layers; li-- > 0;) {
        int out_dim = dims[li + 1];
        int in_dim = dims[li];
        std::size_t off = layer_offset(dims, li);
        double* gw = grad.data() + off;
        double* gb = gw + static_cast<std::size_t>(out_dim) * in_dim;
        const double* a = ws.act[li].data();
        for (int j = 0; j < out_dim; ++j) {
            double d = scale * delta[j];
            double* grow = gw + static_cast<std::size_t>(j) * in_dim;
            for (int k = 0; k < in_dim; ++k) grow[k] += d * a[k];
            gb[j] += d;
        }
        if (li == 0) break;
        auto w = params.weights(li);
        next_delta.assign(in_dim, 0.0);
        for (int j = 0; j < out_dim; ++j) {
            const double* row = w.data() + static_cast<std::size_t>(j) * in_dim;
            double d = delta[j];
            for (int k = 0; k < in_dim; ++k) next_delta[k] += row[k] * d;
        }
        for (int k = 0; k < in_dim; ++k)
            next_delta[k] *= activate_grad(params.spec.activation, ws.pre[li - 1][k]);
        delta.swap(next_delta);
    }
}

Vec mlp_grad(const MlpParams& params, std::span<const double> input,
             std::span<const double> upstream) {
    MlpWorkspace ws;
    mlp_forward(params, input, ws);
    Vec grad(params.flat.size(), 0.0);
    mlp_backward(params, ws, upstream, 1.0, grad);
    return grad;
}

void adam_step(AdamState& state, MlpParams& params, std::span<const double> grad) {
    if (grad.size() != params.flat.size())
        throw ShapeError("adam_step: gradient length " + std::to_string(grad.size()) +
                         " != parameter count " + std::to_string(params.flat.size()));
    if (state.m.size() != grad.size() || state.v.size() != grad.size())
        throw ShapeError("adam_step: optimizer state size mismatch");
    if (!all_finite(grad))
        throw NumericalError("adam_step: non-finite gradient, step refused");

    state.t += 1;
    double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        double mhat = state.m[i] / c1;
        double vhat = state.v[i] / c2;
        params.flat[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    if (!all_finite(params.flat))
        throw NumericalError("adam_step: parameters became non-finite");
}

namespace {

constexpr char kMagic[8] = {'P', 'F', 'M', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: unexpected end of file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("checkpoint: unexpected end of file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

}  // namespace

void save_checkpoint(const std::string& path, const MlpParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, 8);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(params.spec.activation));
    write_u64(os, params.spec.seed);
    write_u32(os, static_cast<std::uint32_t>(params.spec.input_dim));
    write_u32(os, static_cast<std::uint32_t>(params.spec.hidden_dims.size()));
    for (int h : params.spec.hidden_dims) write_u32(os, static_cast<std::uint32_t>(h));
    write_u32(os, static_cast<std::uint32_t>(params.spec.output_dim));
    write_u64(os, static_cast<std::uint64_t>(params.flat.size()));
    for (double v : params.flat) write_f64(os, v);
    if (!os) throw IoError("checkpoint: write to '" + path + "' failed");
}

MlpParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw ParseError("not a parameter checkpoint (bad magic)", 1);
    std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 1);

    MlpParams params;
    params.spec.activation = static_cast<Activation>(read_u32(is));
    params.spec.seed = read_u64(is);
    params.spec.input_dim = static_cast<int>(read_u32(is));
    std::uint32_t n_hidden = read_u32(is);
    params.spec.hidden_dims.resize(n_hidden);
    for (auto& h : params.spec.hidden_dims) h = static_cast<int>(read_u32(is));
    params.spec.output_dim = static_cast<int>(read_u32(is));
    params.spec.validate();
    std::uint64_t count = read_u64(is);
    if (count != static_cast<std::uint64_t>(params.spec.param_count()))
        throw ParseError("parameter count does not match spec", 1);
    params.flat.resize(count);
    for (auto& v : params.flat) v = read_f64(is);
    return params;
}

}  // namespace pfm
