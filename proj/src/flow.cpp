#include "pfm/flow.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "pfm/errors.hpp"

namespace pfm {

void OdeConfig::validate() const {
    if (steps < 1) throw ConfigError("OdeConfig: steps must be >= 1");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
}

FlowSample path_point_at(const PreferenceTriple& triple, const PathConfig& path, double t,
                         RngStream& rng) {
    if (triple.y_plus.size() != triple.y_minus.size())
        throw ShapeError("path point: y+ and y- dimension mismatch");
    if (!(path.sigma >= 0.0) || !std::isfinite(path.sigma))
        throw ConfigError("PathConfig: sigma must be finite and >= 0");
    std::size_t d = triple.y_plus.size();
    FlowSample s;
    s.t = t;
    s.x = triple.x;
    s.y_t.resize(d);
    s.u_target.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
        s.y_t[i] = t * triple.y_plus[i] + (1.0 - t) * triple.y_minus[i];
        s.u_target[i] = triple.y_plus[i] - triple.y_minus[i];
    }
    if (path.sigma > 0.0)
        for (std::size_t i = 0; i < d; ++i) s.y_t[i] += path.sigma * rng.normal();
    return s;
}

FlowSample sample_path_point(const PreferenceTriple& triple, const PathConfig& path,
                             RngStream& rng) {
    double t = rng.uniform();
    return path_point_at(triple, path, t, rng);
}

void FieldEncoding::encode_time(double t, Vec& out) const {
    out.resize(static_cast<std::size_t>(time_dim()));
    out[0] = t;
    for (int k = 1; k <= sinusoidal_frequencies; ++k) {
        out[2 * k - 1] = std::sin(2.0 * M_PI * k * t);
        out[2 * k] = std::cos(2.0 * M_PI * k * t);
    }
}

int field_input_dim(int point_dim, int context_dim, const FieldEncoding& enc) {
    return enc.time_dim() + point_dim + context_dim;
}

MlpSpec field_spec(int point_dim, int context_dim, std::vector<int> hidden_dims,
                   Activation activation, std::uint64_t seed, const FieldEncoding& enc) {
    MlpSpec spec;
    spec.input_dim = field_input_dim(point_dim, context_dim, enc);
    spec.hidden_dims = std::move(hidden_dims);
    spec.output_dim = point_dim;
    spec.activation = activation;
    spec.seed = seed;
    return spec;
}

namespace {

void assemble_field_input(const FieldEncoding& enc, double t, std::span<const double> y,
                          std::span<const double> x, Vec& time_buf, Vec& input) {
    enc.encode_time(t, time_buf);
    input.resize(time_buf.size() + y.size() + x.size());
    std::copy(time_buf.begin(), time_buf.end(), input.begin());
    std::copy(y.begin(), y.end(), input.begin() + time_buf.size());
    std::copy(x.begin(), x.end(), input.begin() + time_buf.size() + y.size());
}

}  // namespace

double cfm_loss(const MlpParams& field, std::span<const FlowSample> batch,
                const FieldEncoding& enc) {
    if (batch.empty()) throw UsageError("cfm_loss: empty batch");
    MlpWorkspace ws;
    Vec input, time_buf;
    // Per-sample losses are sorted before summation so the value is exactly
    // invariant under batch permutation.
    std::vector<double> losses;
    losses.reserve(batch.size());
    for (const auto& s : batch) {
        assemble_field_input(enc, s.t, s.y_t, s.x, time_buf, input);
        auto v = mlp_forward(field, input, ws);
        if (v.size() != s.u_target.size())
            throw ShapeError("cfm_loss: field output dim != target dim");
        double l = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            double d = v[i] - s.u_target[i];
            l += d * d;
        }
        losses.push_back(l);
    }
    std::sort(losses.begin(), losses.end());
    double total = std::accumulate(losses.begin(), losses.end(), 0.0);
    return total / static_cast<double>(batch.size());
}

FlowTrainResult train_flow(const PreferenceDataset& dataset, const MlpSpec& spec,
                           const PathConfig& path, const TrainConfig& cfg,
                           const FieldEncoding& enc) {
    if (dataset.triples.empty()) throw UsageError("train_flow: empty dataset");
    cfg.validate();
    spec.validate();
    for (const auto& t : dataset.triples) {
        if (static_cast<int>(t.y_plus.size()) != dataset.point_dim ||
            static_cast<int>(t.y_minus.size()) != dataset.point_dim ||
            static_cast<int>(t.x.size()) != dataset.context_dim)
            throw ShapeError("train_flow: dataset has inconsistent dimensions");
    }
    if (spec.input_dim != field_input_dim(dataset.point_dim, dataset.context_dim, enc))
        throw ShapeError(
            "train_flow: spec input_dim " + std::to_string(spec.input_dim) +
            " != time features + point_dim + context_dim = " +
            std::to_string(field_input_dim(dataset.point_dim, dataset.context_dim, enc)));
    if (spec.output_dim != dataset.point_dim)
        throw ShapeError("train_flow: spec output_dim != point_dim");

    MlpParams field = init_mlp(spec);
    AdamState opt(field.flat.size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    RngStream shuffle_rng(cfg.seed, "shuffle");
    RngStream path_rng(cfg.seed, "path");

    std::vector<std::size_t> order(dataset.triples.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t n = dataset.triples.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    MlpWorkspace ws;
    Vec input, time_buf;
    Vec grad(field.flat.size());
    Vec upstream(static_cast<std::size_t>(spec.output_dim));

    FlowTrainResult result;
    result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates on a dedicated stream
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = shuffle_rng.index(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_total = 0.0;
        std::size_t steps = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            std::size_t count = std::min(bs, n - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t b = 0; b < count; ++b) {
                const auto& triple = dataset.triples[order[start + b]];
                FlowSample s = sample_path_point(triple, path, path_rng);
                assemble_field_input(enc, s.t, s.y_t, s.x, time_buf, input);
                auto v = mlp_forward(field, input, ws);
                double scale = 1.0 / static_cast<double>(count);
                for (std::size_t i = 0; i < v.size(); ++i) {
                    double d = v[i] - s.u_target[i];
                    batch_loss += d * d * scale;
                    upstream[i] = 2.0 * d;
                }
                mlp_backward(field, ws, upstream, scale, grad);
            }
            adam_step(opt, field, grad);
            epoch_total += batch_loss;
            ++steps;
        }
        result.epoch_loss.push_back(epoch_total / static_cast<double>(steps));
    }
    result.field = std::move(field);
    return result;
}

Vec integrate_field(const VectorField& f, Vec y0, const OdeConfig& ode) {
    return integrate_generic(f, std::move(y0), ode);
}

Vec integrate(const MlpParams& field, Vec y0, std::span<const double> x, const OdeConfig& ode,
              const FieldEncoding& enc) {
    if (static_cast<int>(y0.size()) != field.spec.output_dim)
        throw ShapeError("integrate: point dimension != field output dim");
    if (field.spec.input_dim !=
        field_input_dim(static_cast<int>(y0.size()), static_cast<int>(x.size()), enc))
        throw ShapeError("integrate: field input dim does not match point + context dims");
    MlpWorkspace ws;
    Vec input, time_buf;
    auto f = [&](double t, std::span<const double> y) {
        assemble_field_input(enc, t, y, x, time_buf, input);
        auto out = mlp_forward(field, input, ws);
        return Vec(out.begin(), out.end());
    };
    return integrate_generic(f, std::move(y0), ode);
}

Vec SampleSource::draw(RngStream& rng) const {
    if (kind == Kind::Reference) return gm_sample(reference, rng);
    if (labeler == nullptr)
        throw ConfigError("SampleSource: the p0 source requires labeler access");
    Vec y1 = gm_sample(reference, rng);
    Vec y2 = gm_sample(reference, rng);
    return label_pair(*labeler, std::move(y1), std::move(y2), rng).y_minus;
}

Vec pfm_infer(const MlpParams& field, const SampleSource& source, std::span<const double> x,
              const OdeConfig& ode, RngStream& rng, const FieldEncoding& enc) {
    return integrate(field, source.draw(rng), x, ode, enc);
}

IterateResult iterate_pfm(const SampleSource& source, const PreferenceLabeler* labeler,
                          const MlpSpec& spec_template, const PathConfig& path,
                          const TrainConfig& train_template, const OdeConfig& ode,
                          const IterateConfig& it, std::uint64_t seed,
                          const MlpParams* pretrained, const FieldEncoding& enc) {
    if (it.iterations < 1) throw UsageError("iterate_pfm: iterations must be >= 1");

    if (it.mode == IterateConfig::Mode::Reapply) {
        if (pretrained == nullptr)
            throw UsageError("iterate_pfm: reapply mode requires a pre-trained flow");
        auto flows = std::make_shared<std::vector<MlpParams>>();
        flows->push_back(*pretrained);
        IterateResult result;
        result.flows = *flows;
        int k = it.iterations;
        SampleSource src = source;
        OdeConfig ode_copy = ode;
        FieldEncoding enc_copy = enc;
        result.sampler = [flows, src, ode_copy, enc_copy, k](RngStream& rng) {
            Vec y = src.draw(rng);
            for (int i = 0; i < k; ++i) y = integrate(flows->front(), y, {}, ode_copy, enc_copy);
            return y;
        };
        return result;
    }

    if (labeler == nullptr) throw UsageError("iterate_pfm: retrain mode requires a labeler");
    if (it.pairs_per_iter < 1)
        throw UsageError("iterate_pfm: pairs_per_iter must be >= 1 in retrain mode");

    auto flows = std::make_shared<std::vector<MlpParams>>();
    SampleSource src = source;
    OdeConfig ode_copy = ode;
    FieldEncoding enc_copy = enc;
    auto sampler_through = [flows, src, ode_copy, enc_copy](std::size_t depth) {
        return [flows, src, ode_copy, enc_copy, depth](RngStream& rng) {
            Vec y = src.draw(rng);
            for (std::size_t i = 0; i < depth; ++i)
                y = integrate((*flows)[i], y, {}, ode_copy, enc_copy);
            return y;
        };
    };

    IterateResult result;
    for (int n = 1; n <= it.iterations; ++n) {
        auto tag = static_cast<std::uint64_t>(n);
        PreferenceDataset pairs = collect_pairs(sampler_through(static_cast<std::size_t>(n - 1)),
                                                *labeler, it.pairs_per_iter, 0,
                                                derive_seed(seed, "data", tag));
        if (n == 1 && src.kind == SampleSource::Kind::Reference) {
            // iteration 1 draws straight from the reference policy, so its
            // dataset file is byte-identical to a plain collect_dataset run
            pairs.metadata["reference_policy"] = src.reference.to_json();
        } else {
            pairs.metadata["reference_policy"] = {
                {"base_reference", src.reference.to_json()},
                {"source_kind",
                 src.kind == SampleSource::Kind::Reference ? "reference" : "p0"},
                {"flows_applied", n - 1}};
        }
        MlpSpec spec = spec_template;
        spec.seed = derive_seed(seed, "init", tag);
        TrainConfig cfg = train_template;
        cfg.seed = derive_seed(seed, "train", tag);
        FlowTrainResult trained = train_flow(pairs, spec, path, cfg, enc);
        flows->push_back(std::move(trained.field));
        result.iteration_datasets.push_back(std::move(pairs));
        result.iteration_losses.push_back(std::move(trained.epoch_loss));
    }
    result.flows = *flows;
    result.sampler = sampler_through(flows->size());
    return result;
}

}  // namespace pfm
