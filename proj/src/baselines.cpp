#include "pfm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

#include "pfm/errors.hpp"

namespace pfm {

namespace {

void assemble_reward_input(std::span<const double> x, std::span<const double> y, Vec& input) {
    input.resize(x.size() + y.size());
    std::copy(x.begin(), x.end(), input.begin());
    std::copy(y.begin(), y.end(), input.begin() + x.size());
}

}  // namespace

double RewardModel::value(std::span<const double> x, std::span<const double> y) const {
    Vec input;
    assemble_reward_input(x, y, input);
    return mlp_forward(net, input)[0];
}

MlpSpec reward_spec(int point_dim, int context_dim, std::vector<int> hidden_dims,
                    Activation activation, std::uint64_t seed) {
    MlpSpec spec;
    spec.input_dim = context_dim + point_dim;
    spec.hidden_dims = std::move(hidden_dims);
    spec.output_dim = 1;
    spec.activation = activation;
    spec.seed = seed;
    return spec;
}

double reward_nll(const RewardModel& model, std::span<const PreferenceTriple> batch) {
    if (batch.empty()) throw UsageError("reward_nll: empty batch");
    MlpWorkspace ws;
    Vec input;
    std::vector<double> losses;
    losses.reserve(batch.size());
    for (const auto& t : batch) {
        assemble_reward_input(t.x, t.y_plus, input);
        double r_plus = mlp_forward(model.net, input, ws)[0];
        assemble_reward_input(t.x, t.y_minus, input);
        double r_minus = mlp_forward(model.net, input, ws)[0];
        losses.push_back(-log_sigmoid(r_plus - r_minus));
    }
    std::sort(losses.begin(), losses.end());
    return std::accumulate(losses.begin(), losses.end(), 0.0) /
           static_cast<double>(batch.size());
}

Vec reward_nll_grad(const RewardModel& model, std::span<const PreferenceTriple> batch) {
    if (batch.empty()) throw UsageError("reward_nll_grad: empty batch");
    MlpWorkspace ws_plus, ws_minus;
    Vec input;
    Vec grad(model.net.flat.size(), 0.0);
    Vec upstream(1);
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& t : batch) {
        assemble_reward_input(t.x, t.y_plus, input);
        double r_plus = mlp_forward(model.net, input, ws_plus)[0];
        assemble_reward_input(t.x, t.y_minus, input);
        double r_minus = mlp_forward(model.net, input, ws_minus)[0];
        double dgap = sigmoid(r_plus - r_minus) - 1.0;
        upstream[0] = dgap;
        mlp_backward(model.net, ws_plus, upstream, scale, grad);
        upstream[0] = -dgap;
        mlp_backward(model.net, ws_minus, upstream, scale, grad);
    }
    return grad;
}

RewardTrainResult train_reward(const PreferenceDataset& dataset, const MlpSpec& spec,
                               const TrainConfig& cfg) {
    if (dataset.triples.empty()) throw UsageError("train_reward: empty dataset");
    cfg.validate();
    spec.validate();
    if (spec.input_dim != dataset.context_dim + dataset.point_dim)
        throw ShapeError("train_reward: spec input_dim != context_dim + point_dim");
    if (spec.output_dim != 1) throw ShapeError("train_reward: reward head must be scalar");

    RewardModel model{init_mlp(spec)};
    AdamState opt(model.net.flat.size(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    RngStream shuffle_rng(cfg.seed, "shuffle");

    const std::size_t n = dataset.triples.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    MlpWorkspace ws_plus, ws_minus;
    Vec input;
    Vec grad(model.net.flat.size());
    Vec upstream(1);

    RewardTrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
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
                const auto& t = dataset.triples[order[start + b]];
                assemble_reward_input(t.x, t.y_plus, input);
                double r_plus = mlp_forward(model.net, input, ws_plus)[0];
                assemble_reward_input(t.x, t.y_minus, input);
                double r_minus = mlp_forward(model.net, input, ws_minus)[0];
                double gap = r_plus - r_minus;
                double scale = 1.0 / static_cast<double>(count);
                batch_loss += -log_sigmoid(gap) * scale;
                double dgap = sigmoid(gap) - 1.0;  // d(-log sigmoid)/d gap
                upstream[0] = dgap;
                mlp_backward(model.net, ws_plus, upstream, scale, grad);
                upstream[0] = -dgap;
                mlp_backward(model.net, ws_minus, upstream, scale, grad);
            }
            adam_step(opt, model.net, grad);
            epoch_total += batch_loss;
            ++steps;
        }
        result.epoch_nll.push_back(epoch_total / static_cast<double>(steps));

        double max_gap = 0.0;
        for (const auto& t : dataset.triples) {
            double gap = std::abs(model.value(t.x, t.y_plus) - model.value(t.x, t.y_minus));
            max_gap = std::max(max_gap, gap);
        }
        result.trace.epochs.push_back(epoch + 1);
        result.trace.max_gap.push_back(max_gap);
    }
    result.model = std::move(model);
    return result;
}

std::vector<double> DiscretePolicy::probs() const {
    if (logits.empty()) throw ConfigError("DiscretePolicy: empty logits");
    double max_logit = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - max_logit);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

DiscreteDist DiscretePolicy::distribution() const {
    DiscreteDist d;
    d.support = support;
    d.probs = probs();
    return d;
}

void save_policy(const std::string& path, const DiscretePolicy& policy) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("policy: cannot open '" + path + "' for writing");
    os << policy.support.size() << " "
       << (policy.support.empty() ? 0 : policy.support.front().size()) << "\n";
    for (std::size_t i = 0; i < policy.support.size(); ++i) {
        std::string line;
        for (double v : policy.support[i]) {
            if (!line.empty()) line += ' ';
            line += format_double(v);
        }
        line += ' ';
        line += format_double(policy.logits[i]);
        os << line << "\n";
    }
    if (!os) throw IoError("policy: write to '" + path + "' failed");
}

DiscretePolicy load_policy(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("policy: cannot open '" + path + "'");
    std::size_t n = 0, dim = 0;
    if (!(is >> n >> dim)) throw ParseError("expected point count and dimension", 1);
    DiscretePolicy policy;
    policy.support.resize(n, Vec(dim));
    policy.logits.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : policy.support[i])
            if (!(is >> v)) throw ParseError("truncated support point", static_cast<int>(i + 2));
        if (!(is >> policy.logits[i]))
            throw ParseError("missing logit", static_cast<int>(i + 2));
    }
    return policy;
}

namespace {

// Exact-match lookup from point to support index.
struct SupportIndex {
    std::map<Vec, std::size_t> index;

    explicit SupportIndex(const std::vector<Vec>& support) {
        for (std::size_t i = 0; i < support.size(); ++i) index.emplace(support[i], i);
    }

    std::size_t at(const Vec& y) const {
        auto it = index.find(y);
        if (it == index.end())
            throw UsageError("dpo: sample does not lie on the policy support");
        return it->second;
    }
};

void check_dpo_inputs(const DiscretePolicy& policy, const DiscreteDist& ref) {
    if (policy.logits.size() != ref.size())
        throw ShapeError("dpo: policy and reference have different support sizes");
    for (double r : ref.probs)
        if (!(r > 0.0))
            throw UsageError("dpo: reference must be strictly positive on the support");
}

}  // namespace

double dpo_loss(const DiscretePolicy& policy, const DiscreteDist& ref,
                std::span<const PreferenceTriple> batch, double beta) {
    if (batch.empty()) throw UsageError("dpo_loss: empty batch");
    check_dpo_inputs(policy, ref);
    SupportIndex lookup(policy.support);
    std::vector<double> p = policy.probs();
    std::vector<double> losses;
    losses.reserve(batch.size());
    for (const auto& t : batch) {
        std::size_t ip = lookup.at(t.y_plus);
        std::size_t im = lookup.at(t.y_minus);
        double margin = beta * (std::log(p[ip] / ref.probs[ip]) -
                                std::log(p[im] / ref.probs[im]));
        losses.push_back(-log_sigmoid(margin));
    }
    std::sort(losses.begin(), losses.end());
    return std::accumulate(losses.begin(), losses.end(), 0.0) /
           static_cast<double>(batch.size());
}

std::vector<double> dpo_loss_grad(const DiscretePolicy& policy, const DiscreteDist& ref,
                                  std::span<const PreferenceTriple> batch, double beta) {
    if (batch.empty()) throw UsageError("dpo_loss_grad: empty batch");
    check_dpo_inputs(policy, ref);
    SupportIndex lookup(policy.support);
    std::vector<double> p = policy.probs();
    std::vector<double> grad(policy.logits.size(), 0.0);
    double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& t : batch) {
        std::size_t ip = lookup.at(t.y_plus);
        std::size_t im = lookup.at(t.y_minus);
        double margin = beta * (std::log(p[ip] / ref.probs[ip]) -
                                std::log(p[im] / ref.probs[im]));
        // d margin / d logit_k = beta * (delta_{k,ip} - delta_{k,im});
        // the softmax terms cancel in the difference.
        double d = (sigmoid(margin) - 1.0) * beta * scale;
        grad[ip] += d;
        grad[im] -= d;
    }
    return grad;
}

DpoTrainResult train_dpo(const DiscreteDist& ref, const PreferenceDataset& dataset, double beta,
                         const TrainConfig& cfg) {
    if (dataset.triples.empty()) throw UsageError("train_dpo: empty dataset");
    cfg.validate();
    ref.validate();
    if (ref.support.empty()) throw UsageError("train_dpo: reference needs support points");

    DiscretePolicy policy;
    policy.support = ref.support;
    policy.logits.assign(ref.size(), 0.0);
    check_dpo_inputs(policy, ref);

    SupportIndex lookup(policy.support);
    struct PairRef {
        std::size_t ip, im;
    };
    std::vector<PairRef> pairs;
    pairs.reserve(dataset.triples.size());
    for (const auto& t : dataset.triples)
        pairs.push_back({lookup.at(t.y_plus), lookup.at(t.y_minus)});

    // Adam on the raw logit vector.
    Vec m(policy.logits.size(), 0.0), v(policy.logits.size(), 0.0);

    RngStream shuffle_rng(cfg.seed, "shuffle");
    const std::size_t n = pairs.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    DpoTrainResult result;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = shuffle_rng.index(i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_total = 0.0;
        std::size_t steps_in_epoch = 0;
        for (std::size_t start = 0; start < n; start += bs) {
            std::size_t count = std::min(bs, n - start);
            std::vector<double> p = policy.probs();
            std::vector<double> grad(policy.logits.size(), 0.0);
            double batch_loss = 0.0;
            double scale = 1.0 / static_cast<double>(count);
            for (std::size_t b = 0; b < count; ++b) {
                const auto& pr = pairs[order[start + b]];
                double margin = beta * (std::log(p[pr.ip] / ref.probs[pr.ip]) -
                                        std::log(p[pr.im] / ref.probs[pr.im]));
                batch_loss += -log_sigmoid(margin) * scale;
                double d = (sigmoid(margin) - 1.0) * beta * scale;
                grad[pr.ip] += d;
                grad[pr.im] -= d;
            }
            if (!all_finite(grad))
                throw NumericalError("train_dpo: non-finite gradient");
            ++step;
            double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < grad.size(); ++i) {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                policy.logits[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
            }
            epoch_total += batch_loss;
            ++steps_in_epoch;
        }
        result.epoch_loss.push_back(epoch_total / static_cast<double>(steps_in_epoch));

        // implicit reward gap beta * [log pi/ref(y+) - log pi/ref(y-)]
        std::vector<double> p = policy.probs();
        double max_gap = -std::numeric_limits<double>::infinity();
        for (const auto& pr : pairs) {
            double gap = beta * (std::log(p[pr.ip] / ref.probs[pr.ip]) -
                                 std::log(p[pr.im] / ref.probs[pr.im]));
            max_gap = std::max(max_gap, gap);
        }
        result.trace.epochs.push_back(epoch + 1);
        result.trace.max_gap.push_back(max_gap);
    }
    result.policy = std::move(policy);
    return result;
}

void save_overfit_trace(const std::string& path, const OverfitTrace& trace) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("trace: cannot open '" + path + "' for writing");
    os << "epoch,max_gap\n";
    for (std::size_t i = 0; i < trace.epochs.size(); ++i)
        os << trace.epochs[i] << "," << format_double(trace.max_gap[i]) << "\n";
    if (!os) throw IoError("trace: write to '" + path + "' failed");
}

}  // namespace pfm
