#include "pfm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "pfm/errors.hpp"

namespace pfm {

void DiscreteDist::validate() const {
    if (probs.empty()) throw ConfigError("DiscreteDist: empty probability vector");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw ConfigError("DiscreteDist: probabilities must be >= 0");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw ConfigError("DiscreteDist: probabilities sum to " + format_double(sum));
    if (!support.empty() && support.size() != probs.size())
        throw ConfigError("DiscreteDist: support/probs length mismatch");
}

void PreferenceMatrix::validate() const {
    std::size_t n = p.size();
    if (n == 0) throw ConfigError("PreferenceMatrix: empty");
    for (std::size_t i = 0; i < n; ++i) {
        if (p[i].size() != n) throw ConfigError("PreferenceMatrix: not square");
        for (std::size_t j = 0; j < n; ++j) {
            if (!(p[i][j] >= 0.0 && p[i][j] <= 1.0))
                throw ConfigError("PreferenceMatrix: entries must lie in [0,1]");
            if (std::abs(p[i][j] + p[j][i] - 1.0) > 1e-12)
                throw ConfigError("PreferenceMatrix: p[i][j] + p[j][i] != 1 at (" +
                                  std::to_string(i) + "," + std::to_string(j) + ")");
        }
        if (std::abs(p[i][i] - 0.5) > 1e-12)
            throw ConfigError("PreferenceMatrix: diagonal must be 0.5");
    }
}

PreferenceMatrix build_preference_matrix(const PreferenceLabeler& labeler,
                                         const std::vector<Vec>& support) {
    PreferenceMatrix pm;
    std::size_t n = support.size();
    pm.p.assign(n, std::vector<double>(n, 0.5));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double pij = preference_prob(labeler, support[i], support[j]);
            pm.p[i][j] = pij;
            pm.p[j][i] = 1.0 - pij;
        }
    return pm;
}

namespace {

void check_dims(const DiscreteDist& ref, const PreferenceMatrix& pm, const char* where) {
    if (ref.size() != pm.size())
        throw ShapeError(std::string(where) + ": distribution size " +
                         std::to_string(ref.size()) + " != matrix size " +
                         std::to_string(pm.size()));
}

DiscreteDist normalized(const DiscreteDist& like, std::vector<double> unnormalized,
                        const char* where) {
    double sum = 0.0;
    for (double v : unnormalized) sum += v;
    if (!(sum > 0.0))
        throw DegenerateInputError(std::string(where) +
                                   ": unnormalized vector sums to zero (no overlapping support)");
    for (double& v : unnormalized) v /= sum;
    DiscreteDist out;
    out.support = like.support;
    out.probs = std::move(unnormalized);
    return out;
}

// Expected win probability of each point against draws from q.
std::vector<double> expected_wins(const std::vector<double>& q, const PreferenceMatrix& pm) {
    std::size_t n = q.size();
    std::vector<double> f(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += q[j] * pm.p[i][j];
        f[i] = s;
    }
    return f;
}

}  // namespace

DiscreteDist marginal_negative(const DiscreteDist& ref, const PreferenceMatrix& pm) {
    check_dims(ref, pm, "marginal_negative");
    std::size_t n = ref.size();
    std::vector<double> w(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += ref.probs[i] * pm.p[i][j];
        w[j] = ref.probs[j] * s;
    }
    return normalized(ref, std::move(w), "marginal_negative");
}

DiscreteDist marginal_positive(const DiscreteDist& ref, const PreferenceMatrix& pm) {
    check_dims(ref, pm, "marginal_positive");
    std::vector<double> f = expected_wins(ref.probs, pm);
    std::size_t n = ref.size();
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) w[i] = ref.probs[i] * f[i];
    return normalized(ref, std::move(w), "marginal_positive");
}

DiscreteDist rlhf_optimal(const DiscreteDist& ref, const PreferenceMatrix& pm, double beta) {
    check_dims(ref, pm, "rlhf_optimal");
    if (!(beta > 0.0)) throw ConfigError("rlhf_optimal: beta must be > 0");
    std::size_t n = ref.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (pm.p[i][j] <= 0.0 || pm.p[i][j] >= 1.0)
                throw DeterministicPreferenceError(
                    "rlhf_optimal: preference probability at (" + std::to_string(i) + "," +
                    std::to_string(j) + ") is " + format_double(pm.p[i][j]) +
                    "; the logit diverges for deterministic preferences");

    // log pi*[i] = log ref[i] + s_i / beta, computed via max subtraction so
    // small beta saturates to the argmax instead of overflowing.
    std::vector<double> lp(n, -std::numeric_limits<double>::infinity());
    double max_lp = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (ref.probs[i] <= 0.0) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += ref.probs[j] * logit(pm.p[i][j]);
        lp[i] = std::log(ref.probs[i]) + s / beta;
        max_lp = std::max(max_lp, lp[i]);
    }
    if (!std::isfinite(max_lp))
        throw DegenerateInputError("rlhf_optimal: reference has no support");
    std::vector<double> w(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = std::isfinite(lp[i]) ? std::exp(lp[i] - max_lp) : 0.0;
    return normalized(ref, std::move(w), "rlhf_optimal");
}

double marginal_objective(const DiscreteDist& pi, const DiscreteDist& ref,
                          const PreferenceMatrix& pm) {
    check_dims(ref, pm, "marginal_objective");
    if (pi.size() != ref.size()) throw ShapeError("marginal_objective: size mismatch");
    std::vector<double> f = expected_wins(ref.probs, pm);
    double value = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) {
        double p = pi.probs[i];
        if (p == 0.0) continue;  // 0 log 0 = 0
        if (ref.probs[i] <= 0.0)
            throw DegenerateInputError(
                "marginal_objective: pi puts mass outside the reference support (infinite KL)");
        value += p * (std::log(f[i]) - std::log(p / ref.probs[i]));
    }
    return value;
}

DiscreteDist iterate_marginal(const DiscreteDist& ref, const PreferenceMatrix& pm, int n) {
    check_dims(ref, pm, "iterate_marginal");
    if (n < 0) throw UsageError("iterate_marginal: n must be >= 0");
    DiscreteDist p = ref;
    for (int it = 0; it < n; ++it) p = marginal_positive(p, pm);
    return p;
}

std::vector<std::size_t> argmax_set(const DiscreteDist& ref, const PreferenceMatrix& pm,
                                    double tol) {
    check_dims(ref, pm, "argmax_set");
    if (tol < 0.0) throw UsageError("argmax_set: tol must be >= 0");
    std::vector<double> f = expected_wins(ref.probs, pm);
    double fmax = *std::max_element(f.begin(), f.end());
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] >= fmax - tol) out.push_back(i);
    return out;
}

ConvergenceReport check_theorem2(const DiscreteDist& ref, const PreferenceMatrix& pm,
                                 double tol, int max_iters) {
    check_dims(ref, pm, "check_theorem2");
    if (!(tol > 0.0)) throw UsageError("check_theorem2: tol must be > 0");

    auto winners = argmax_set(ref, pm, 1e-12);
    ConvergenceReport report;
    report.limit.support = ref.support;
    report.limit.probs.assign(ref.size(), 0.0);
    for (std::size_t i : winners)
        report.limit.probs[i] = 1.0 / static_cast<double>(winners.size());

    DiscreteDist p = ref;
    for (int it = 0; it <= max_iters; ++it) {
        double d = l1_distance(p.probs, report.limit.probs);
        report.iterations_used = it;
        report.final_l1_to_limit = d;
        if (d <= tol) {
            report.converged = true;
            return report;
        }
        if (it == max_iters) break;
        p = marginal_positive(p, pm);
    }
    report.converged = false;
    return report;
}

void save_oracle_instance(const std::string& path, const DiscreteDist& ref,
                          const PreferenceMatrix& pm) {
    ref.validate();
    pm.validate();
    if (ref.size() != pm.size()) throw ShapeError("save_oracle_instance: size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("oracle instance: cannot open '" + path + "' for writing");
    os << ref.size() << "\n";
    for (std::size_t i = 0; i < ref.size(); ++i)
        os << format_double(ref.probs[i]) << (i + 1 < ref.size() ? " " : "\n");
    for (const auto& row : pm.p) {
        for (std::size_t j = 0; j < row.size(); ++j)
            os << format_double(row[j]) << (j + 1 < row.size() ? " " : "\n");
    }
    if (!os) throw IoError("oracle instance: write to '" + path + "' failed");
}

void save_discrete_dist(const std::string& path, const DiscreteDist& dist) {
    dist.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("discrete dist: cannot open '" + path + "' for writing");
    std::size_t dim = dist.support.empty() ? 0 : dist.support.front().size();
    os << dist.size() << " " << dim << "\n";
    for (std::size_t i = 0; i < dist.size(); ++i) {
        std::string line;
        if (!dist.support.empty())
            for (double v : dist.support[i]) {
                line += format_double(v);
                line += ' ';
            }
        line += format_double(dist.probs[i]);
        os << line << "\n";
    }
    if (!os) throw IoError("discrete dist: write to '" + path + "' failed");
}

DiscreteDist load_discrete_dist(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("discrete dist: cannot open '" + path + "'");
    std::size_t n = 0, dim = 0;
    if (!(is >> n >> dim)) throw ParseError("expected count and dimension", 1);
    DiscreteDist d;
    d.probs.resize(n);
    if (dim > 0) d.support.resize(n, Vec(dim));
    for (std::size_t i = 0; i < n; ++i) {
        if (dim > 0)
            for (auto& v : d.support[i])
                if (!(is >> v)) throw ParseError("truncated support point", static_cast<int>(i + 2));
        if (!(is >> d.probs[i])) throw ParseError("missing probability", static_cast<int>(i + 2));
    }
    d.validate();
    return d;
}

std::size_t discrete_index(const std::vector<double>& probs, RngStream& rng) {
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

Sampler discrete_sampler(const DiscreteDist& dist) {
    if (dist.support.empty())
        throw UsageError("discrete_sampler: distribution has no support points");
    return [dist](RngStream& rng) { return dist.support[discrete_index(dist.probs, rng)]; };
}

std::vector<double> random_simplex(std::size_t n, RngStream& rng) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) {
        v = -std::log(1.0 - rng.uniform());  // Exp(1)
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return p;
}

PreferenceMatrix random_preference_matrix(std::size_t n, RngStream& rng, double margin) {
    PreferenceMatrix pm;
    pm.p.assign(n, std::vector<double>(n, 0.5));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = margin + (1.0 - 2.0 * margin) * rng.uniform();
            pm.p[i][j] = v;
            pm.p[j][i] = 1.0 - v;
        }
    return pm;
}

BtInstance random_bt_instance(std::size_t n, RngStream& rng, double min_top_gap) {
    BtInstance inst;
    inst.scores.resize(n);
    while (true) {
        for (auto& s : inst.scores) s = 3.0 * rng.uniform();
        double best = -1.0, second = -1.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (inst.scores[i] > best) {
                second = best;
                best = inst.scores[i];
                best_i = i;
            } else if (inst.scores[i] > second) {
                second = inst.scores[i];
            }
        }
        if (best - second >= min_top_gap) {
            inst.argmax = best_i;
            break;
        }
    }
    inst.pm.p.assign(n, std::vector<double>(n, 0.5));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = sigmoid(inst.scores[i] - inst.scores[j]);
            inst.pm.p[i][j] = v;
            inst.pm.p[j][i] = 1.0 - v;
        }
    inst.ref.probs = random_simplex(n, rng);
    return inst;
}

std::pair<DiscreteDist, PreferenceMatrix> load_oracle_instance(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("oracle instance: cannot open '" + path + "'");
    std::size_t n = 0;
    if (!(is >> n) || n == 0) throw ParseError("expected positive point count", 1);
    DiscreteDist ref;
    ref.probs.resize(n);
    for (std::size_t i = 0; i < n; ++i)
        if (!(is >> ref.probs[i])) throw ParseError("expected " + std::to_string(n) + " probabilities", 2);
    PreferenceMatrix pm;
    pm.p.assign(n, std::vector<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (!(is >> pm.p[i][j]))
                throw ParseError("expected matrix row of " + std::to_string(n) + " entries",
                                 static_cast<int>(3 + i));
    ref.validate();
    pm.validate();
    return {std::move(ref), std::move(pm)};
}

}  // namespace pfm
