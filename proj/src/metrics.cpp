#include "pfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pfm/errors.hpp"
#include "pfm/rng.hpp"

namespace pfm {

double mean_reward(std::span<const Vec> samples, const RewardFunction& reward) {
    if (samples.empty()) throw UsageError("mean_reward: empty sample set");
    double total = 0.0;
    for (const auto& y : samples) total += reward(y);
    return total / static_cast<double>(samples.size());
}

double win_rate(std::span<const Vec> samples_a, std::span<const Vec> samples_b,
                const PreferenceLabeler& labeler, std::uint64_t seed) {
    if (samples_a.size() != samples_b.size())
        throw UsageError("win_rate: sample counts differ");
    if (samples_a.empty()) throw UsageError("win_rate: empty sample sets");
    double wins = 0.0;
    for (std::size_t i = 0; i < samples_a.size(); ++i) {
        const Vec& a = samples_a[i];
        const Vec& b = samples_b[i];
        if (a.size() != b.size()) throw ShapeError("win_rate: dimension mismatch");
        if (a == b) {
            // identical points cannot be told apart in either argument
            // order; half credit keeps the antisymmetry exact
            wins += 0.5;
            continue;
        }
        RngStream rng(seed, "win", i);
        double u = rng.uniform();
        bool a_wins;
        if (std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end())) {
            a_wins = u < preference_prob(labeler, a, b);
        } else {
            a_wins = !(u < preference_prob(labeler, b, a));
        }
        if (a_wins) wins += 1.0;
    }
    return wins / static_cast<double>(samples_a.size());
}

namespace {

double mean_cross_distance(std::span<const Vec> p, std::span<const Vec> q) {
    double total = 0.0;
    for (const auto& a : p)
        for (const auto& b : q) total += distance(a, b);
    return total / (static_cast<double>(p.size()) * static_cast<double>(q.size()));
}

// Order-invariant comparison of whole sample sets, used to canonicalize the
// accumulation order so energy_distance(a, b) == energy_distance(b, a) bitwise.
bool cloud_less(std::span<const Vec> a, std::span<const Vec> b) {
    if (a.size() != b.size()) return a.size() < b.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i])
            return std::lexicographical_compare(a[i].begin(), a[i].end(), b[i].begin(),
                                                b[i].end());
    }
    return false;
}

}  // namespace

double energy_distance(std::span<const Vec> samples_a, std::span<const Vec> samples_b) {
    if (samples_a.empty() || samples_b.empty())
        throw UsageError("energy_distance: empty sample set");
    if (samples_a.front().size() != samples_b.front().size())
        throw ShapeError("energy_distance: dimension mismatch");
    std::span<const Vec> p = samples_a;
    std::span<const Vec> q = samples_b;
    if (cloud_less(q, p)) std::swap(p, q);
    double cross = mean_cross_distance(p, q);
    double self_p = mean_cross_distance(p, p);
    double self_q = mean_cross_distance(q, q);
    return 2.0 * cross - self_p - self_q;
}

double discrete_kl(const DiscreteDist& p, const DiscreteDist& q) {
    if (p.size() != q.size()) throw ShapeError("discrete_kl: size mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.probs[i] == 0.0) continue;  // 0 log 0 = 0
        if (q.probs[i] <= 0.0)
            throw DegenerateInputError("discrete_kl: p has mass where q does not (infinite KL)");
        kl += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
    }
    return kl;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    for (const auto& [name, m] : methods) {
        j[name] = {{"mean_reward", m.mean_reward},
                   {"win_rate_vs_reference", m.win_rate_vs_reference},
                   {"energy_distance_to_positive", m.energy_distance_to_positive},
                   {"n_samples", m.n_samples},
                   {"seed", m.seed}};
    }
    return j;
}

std::string MetricsReport::to_csv() const {
    std::string out =
        "method,mean_reward,win_rate_vs_reference,energy_distance_to_positive,n_samples,seed\n";
    for (const auto& [name, m] : methods) {
        out += name;
        out += ',' + format_double(m.mean_reward);
        out += ',' + format_double(m.win_rate_vs_reference);
        out += ',' + format_double(m.energy_distance_to_positive);
        out += ',' + std::to_string(m.n_samples);
        out += ',' + std::to_string(m.seed);
        out += '\n';
    }
    return out;
}

void save_metrics(const std::string& json_path, const std::string& csv_path,
                  const MetricsReport& report) {
    {
        std::ofstream os(json_path, std::ios::binary);
        if (!os) throw IoError("metrics: cannot open '" + json_path + "' for writing");
        os << report.to_json().dump(2) << "\n";
    }
    {
        std::ofstream os(csv_path, std::ios::binary);
        if (!os) throw IoError("metrics: cannot open '" + csv_path + "' for writing");
        os << report.to_csv();
    }
}

void save_cloud(const std::string& path, std::span<const Vec> samples, int context_dim) {
    if (samples.empty()) throw UsageError("save_cloud: empty sample set");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cloud: cannot open '" + path + "' for writing");
    int total_dim = static_cast<int>(samples.front().size());
    std::string header;
    for (int d = 0; d < context_dim; ++d) header += "x" + std::to_string(d) + ",";
    for (int d = context_dim; d < total_dim; ++d) {
        header += "y" + std::to_string(d - context_dim);
        if (d + 1 < total_dim) header += ",";
    }
    os << header << "\n";
    for (const auto& s : samples) {
        std::string line;
        for (double v : s) {
            if (!line.empty()) line += ',';
            line += format_double(v);
        }
        os << line << "\n";
    }
    if (!os) throw IoError("cloud: write to '" + path + "' failed");
}

std::vector<Vec> load_cloud(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cloud: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(is, line)) throw ParseError("missing header", 1);
    std::vector<Vec> samples;
    int line_number = 1;
    while (std::getline(is, line)) {
        ++line_number;
        if (line.empty()) continue;
        Vec row;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            const char* begin = tok.c_str();
            char* end = nullptr;
            double v = std::strtod(begin, &end);
            if (end == begin || *end != '\0')
                throw ParseError("invalid float '" + tok + "'", line_number);
            row.push_back(v);
        }
        if (!samples.empty() && row.size() != samples.front().size())
            throw ParseError("inconsistent column count", line_number);
        samples.push_back(std::move(row));
    }
    return samples;
}

}  // namespace pfm
