#include "pfm/prefdata.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include "pfm/errors.hpp"

namespace pfm {

void GaussianMixture::validate() const {
    if (dim < 1) throw ConfigError("GaussianMixture: dim must be >= 1");
    if (weights.empty() || weights.size() != means.size() || weights.size() != diag_stds.size())
        throw ConfigError("GaussianMixture: weights/means/stds must have equal nonzero length");
    double sum = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw ConfigError("GaussianMixture: weights must be >= 0");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("GaussianMixture: weights must sum to 1 (got " + format_double(sum) + ")");
    for (std::size_t k = 0; k < means.size(); ++k) {
        if (means[k].size() != static_cast<std::size_t>(dim) ||
            diag_stds[k].size() != static_cast<std::size_t>(dim))
            throw ConfigError("GaussianMixture: component " + std::to_string(k) +
                              " has wrong dimension");
        for (double s : diag_stds[k])
            if (!(s > 0.0)) throw ConfigError("GaussianMixture: stds must be > 0");
    }
}

nlohmann::json GaussianMixture::to_json() const {
    return {{"weights", weights}, {"means", means}, {"stds", diag_stds}, {"dim", dim}};
}

GaussianMixture GaussianMixture::from_json(const nlohmann::json& j) {
    GaussianMixture gm;
    gm.weights = j.at("weights").get<std::vector<double>>();
    gm.means = j.at("means").get<std::vector<Vec>>();
    gm.diag_stds = j.at("stds").get<std::vector<Vec>>();
    gm.dim = j.at("dim").get<int>();
    gm.validate();
    return gm;
}

GaussianMixture GaussianMixture::eight_gaussians(double radius, double component_std) {
    GaussianMixture gm;
    gm.dim = 2;
    for (int k = 0; k < 8; ++k) {
        double angle = k * (M_PI / 4.0);
        gm.weights.push_back(0.125);
        gm.means.push_back({radius * std::cos(angle), radius * std::sin(angle)});
        gm.diag_stds.push_back({component_std, component_std});
    }
    gm.validate();
    return gm;
}

Vec gm_sample(const GaussianMixture& gm, RngStream& rng) {
    double u = rng.uniform();
    std::size_t k = 0;
    double acc = 0.0;
    for (; k + 1 < gm.weights.size(); ++k) {
        acc += gm.weights[k];
        if (u < acc) break;
    }
    Vec y(gm.dim);
    for (int d = 0; d < gm.dim; ++d) y[d] = gm.means[k][d] + gm.diag_stds[k][d] * rng.normal();
    return y;
}

double gm_pdf(const GaussianMixture& gm, std::span<const double> y) {
    if (y.size() != static_cast<std::size_t>(gm.dim))
        throw ShapeError("gm_pdf: point dimension mismatch");
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    double total = 0.0;
    for (std::size_t k = 0; k < gm.weights.size(); ++k) {
        double p = 1.0;
        for (int d = 0; d < gm.dim; ++d) {
            double s = gm.diag_stds[k][d];
            double z = (y[d] - gm.means[k][d]) / s;
            // far tails underflow to 0, which is the documented behavior
            p *= inv_sqrt_2pi / s * std::exp(-0.5 * z * z);
        }
        total += gm.weights[k] * p;
    }
    return total;
}

double gm_log_pdf(const GaussianMixture& gm, std::span<const double> y) {
    if (y.size() != static_cast<std::size_t>(gm.dim))
        throw ShapeError("gm_log_pdf: point dimension mismatch");
    constexpr double log_sqrt_2pi = 0.9189385332046727;
    double max_term = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(gm.weights.size());
    for (std::size_t k = 0; k < gm.weights.size(); ++k) {
        double lp = gm.weights[k] > 0.0 ? std::log(gm.weights[k])
                                        : -std::numeric_limits<double>::infinity();
        for (int d = 0; d < gm.dim; ++d) {
            double s = gm.diag_stds[k][d];
            double z = (y[d] - gm.means[k][d]) / s;
            lp += -0.5 * z * z - std::log(s) - log_sqrt_2pi;
        }
        terms[k] = lp;
        if (lp > max_term) max_term = lp;
    }
    if (!std::isfinite(max_term)) return -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - max_term);
    return max_term + std::log(sum);
}

double RewardFunction::operator()(std::span<const double> y) const {
    switch (kind) {
        case Kind::MixtureDensity:
            return gm_pdf(mixture, y);
        case Kind::MixtureLogDensity:
            return gm_log_pdf(mixture, y);
        case Kind::Tabular: {
            if (support.empty()) throw ConfigError("tabular reward: empty support");
            // nearest support point carries the value
            std::size_t best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < support.size(); ++i) {
                double d = distance(support[i], y);
                if (d < best_d) {
                    best_d = d;
                    best = i;
                }
            }
            return values[best];
        }
    }
    throw ConfigError("reward: unknown kind");
}

nlohmann::json RewardFunction::to_json() const {
    nlohmann::json j;
    switch (kind) {
        case Kind::MixtureDensity:
            j["kind"] = "mixture_density";
            j["mixture"] = mixture.to_json();
            break;
        case Kind::MixtureLogDensity:
            j["kind"] = "mixture_log_density";
            j["mixture"] = mixture.to_json();
            break;
        case Kind::Tabular:
            j["kind"] = "tabular";
            j["support"] = support;
            j["values"] = values;
            break;
    }
    return j;
}

RewardFunction RewardFunction::from_json(const nlohmann::json& j) {
    RewardFunction r;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "mixture_density") {
        r.kind = Kind::MixtureDensity;
        r.mixture = GaussianMixture::from_json(j.at("mixture"));
    } else if (kind == "mixture_log_density") {
        r.kind = Kind::MixtureLogDensity;
        r.mixture = GaussianMixture::from_json(j.at("mixture"));
    } else if (kind == "tabular") {
        r.kind = Kind::Tabular;
        r.support = j.at("support").get<std::vector<Vec>>();
        r.values = j.at("values").get<std::vector<double>>();
        if (r.support.size() != r.values.size())
            throw ConfigError("tabular reward: support/values length mismatch");
    } else {
        throw ConfigError("reward: unknown kind '" + kind + "'");
    }
    return r;
}

nlohmann::json PreferenceLabeler::to_json() const {
    return {{"kind", kind == Kind::Deterministic ? "deterministic" : "bradley_terry"},
            {"tau", tau},
            {"reward", reward.to_json()}};
}

PreferenceLabeler PreferenceLabeler::from_json(const nlohmann::json& j) {
    PreferenceLabeler l;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "deterministic")
        l.kind = Kind::Deterministic;
    else if (kind == "bradley_terry")
        l.kind = Kind::BradleyTerry;
    else
        throw ConfigError("labeler: unknown kind '" + kind + "'");
    l.tau = j.value("tau", 1.0);
    if (!(l.tau > 0.0)) throw ConfigError("labeler: tau must be > 0");
    l.reward = RewardFunction::from_json(j.at("reward"));
    return l;
}

double preference_prob(const PreferenceLabeler& labeler, std::span<const double> y,
                       std::span<const double> y2) {
    if (y.size() != y2.size()) throw ShapeError("preference_prob: dimension mismatch");
    double r1 = labeler.reward(y);
    double r2 = labeler.reward(y2);
    if (labeler.kind == PreferenceLabeler::Kind::Deterministic) {
        if (r1 > r2) return 1.0;
        if (r1 < r2) return 0.0;
        return 0.5;
    }
    return sigmoid(labeler.tau * (r1 - r2));
}

PreferenceTriple label_pair(const PreferenceLabeler& labeler, Vec y, Vec y2, RngStream& rng) {
    return label_pair(labeler, Vec{}, std::move(y), std::move(y2), rng);
}

PreferenceTriple label_pair(const PreferenceLabeler& labeler, Vec x, Vec y, Vec y2,
                            RngStream& rng) {
    double p = preference_prob(labeler, y, y2);
    PreferenceTriple t;
    t.x = std::move(x);
    if (rng.uniform() < p) {
        t.y_plus = std::move(y);
        t.y_minus = std::move(y2);
    } else {
        t.y_plus = std::move(y2);
        t.y_minus = std::move(y);
    }
    return t;
}

Sampler gm_sampler(const GaussianMixture& gm) {
    return [gm](RngStream& rng) { return gm_sample(gm, rng); };
}

PreferenceDataset collect_pairs(const Sampler& draw, const PreferenceLabeler& labeler, int n,
                                int context_dim, std::uint64_t seed) {
    if (n < 1) throw UsageError("collect_pairs: n must be >= 1");
    if (context_dim < 0) throw UsageError("collect_pairs: context_dim must be >= 0");
    PreferenceDataset ds;
    ds.context_dim = context_dim;
    ds.triples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, "pair", static_cast<std::uint64_t>(i));
        Vec x = context_dim > 0 ? rng.normals(static_cast<std::size_t>(context_dim)) : Vec{};
        Vec y1 = draw(rng);
        Vec y2 = draw(rng);
        if (y1.size() != y2.size()) throw ShapeError("collect_pairs: sampler dimension mismatch");
        ds.triples.push_back(label_pair(labeler, std::move(x), std::move(y1), std::move(y2), rng));
    }
    ds.point_dim = static_cast<int>(ds.triples.front().y_plus.size());
    ds.metadata = {{"seed", seed},
                   {"n", n},
                   {"context_dim", context_dim},
                   {"labeler", labeler.to_json()}};
    return ds;
}

PreferenceDataset collect_dataset(const GaussianMixture& policy,
                                  const PreferenceLabeler& labeler, int n, int context_dim,
                                  std::uint64_t seed) {
    policy.validate();
    PreferenceDataset ds = collect_pairs(gm_sampler(policy), labeler, n, context_dim, seed);
    ds.metadata["reference_policy"] = policy.to_json();
    return ds;
}

namespace {

// Strict float parse: the whole token must be consumed.
double parse_double(const std::string& token, int line_number) {
    const char* begin = token.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0')
        throw ParseError("invalid float '" + token + "'", line_number);
    return v;
}

}  // namespace

void save_dataset(const std::string& path, const PreferenceDataset& ds) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("dataset: cannot open '" + path + "' for writing");
    nlohmann::json header = {{"format_version", 1},
                             {"point_dim", ds.point_dim},
                             {"context_dim", ds.context_dim},
                             {"count", ds.triples.size()},
                             {"metadata", ds.metadata}};
    os << header.dump() << "\n";
    for (const auto& t : ds.triples) {
        std::string line;
        auto append = [&line](const Vec& v) {
            for (double x : v) {
                if (!line.empty()) line += ',';
                line += format_double(x);
            }
        };
        append(t.x);
        append(t.y_plus);
        append(t.y_minus);
        os << line << "\n";
    }
    if (!os) throw IoError("dataset: write to '" + path + "' failed");
}

PreferenceDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("dataset: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw ParseError("missing header", 1);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid header: ") + e.what(), 1);
    }
    PreferenceDataset ds;
    try {
        if (header.at("format_version").get<int>() != 1)
            throw ParseError("unsupported format version", 1);
        ds.point_dim = header.at("point_dim").get<int>();
        ds.context_dim = header.at("context_dim").get<int>();
        ds.metadata = header.at("metadata");
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("invalid header: ") + e.what(), 1);
    }
    std::size_t count = header.at("count").get<std::size_t>();
    std::size_t columns = static_cast<std::size_t>(ds.context_dim) + 2 * ds.point_dim;

    int line_number = 1;
    while (std::getline(is, line)) {
        ++line_number;
        if (line.empty() && ds.triples.size() == count) break;
        std::vector<std::string> tokens;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) tokens.push_back(tok);
        if (tokens.size() != columns)
            throw ParseError("expected " + std::to_string(columns) + " columns, got " +
                                 std::to_string(tokens.size()),
                             line_number);
        PreferenceTriple t;
        std::size_t i = 0;
        t.x.resize(ds.context_dim);
        for (auto& v : t.x) v = parse_double(tokens[i++], line_number);
        t.y_plus.resize(ds.point_dim);
        for (auto& v : t.y_plus) v = parse_double(tokens[i++], line_number);
        t.y_minus.resize(ds.point_dim);
        for (auto& v : t.y_minus) v = parse_double(tokens[i++], line_number);
        ds.triples.push_back(std::move(t));
    }
    if (ds.triples.size() != count)
        throw ParseError("header declares " + std::to_string(count) + " records, file has " +
                             std::to_string(ds.triples.size()),
                         line_number + 1);
    return ds;
}

}  // namespace pfm
