#pragma once

#include <string>
#include <vector>

#include "pfm/prefdata.hpp"
#include "pfm/util.hpp"

namespace pfm {

/// Probability vector over a finite support. The support points are
/// optional; when present their count must match the probabilities.
struct DiscreteDist {
    std::vector<Vec> support;
    std::vector<double> probs;

    void validate() const;
    std::size_t size() const { return probs.size(); }
};

/// Exact pairwise win probabilities: p[i][j] = P(y_i > y_j).
struct PreferenceMatrix {
    std::vector<std::vector<double>> p;

    void validate() const;
    std::size_t size() const { return p.size(); }
};

/// p[i][j] from a scripted labeler evaluated on every support pair.
PreferenceMatrix build_preference_matrix(const PreferenceLabeler& labeler,
                                         const std::vector<Vec>& support);

/// Marginal of losing samples: p0[j] proportional to ref[j] * sum_i ref[i] p[i][j].
DiscreteDist marginal_negative(const DiscreteDist& ref, const PreferenceMatrix& pm);

/// Marginal of winning samples: p1[i] proportional to ref[i] * sum_j ref[j] p[i][j].
DiscreteDist marginal_positive(const DiscreteDist& ref, const PreferenceMatrix& pm);

/// Closed-form optimum of the KL-regularized preference objective:
/// pi*[i] proportional to ref[i] * exp((1/beta) * sum_j ref[j] logit(p[i][j])).
/// Requires every entry strictly inside (0, 1).
DiscreteDist rlhf_optimal(const DiscreteDist& ref, const PreferenceMatrix& pm, double beta);

/// E_{y~pi} log(sum_j ref[j] p[y][j]) - KL(pi || ref); the objective the
/// positive marginal maximizes.
double marginal_objective(const DiscreteDist& pi, const DiscreteDist& ref,
                          const PreferenceMatrix& pm);

/// n applications of p <- normalize(p[i] * sum_j p[j] pm[i][j]); n = 0 is ref.
DiscreteDist iterate_marginal(const DiscreteDist& ref, const PreferenceMatrix& pm, int n);

/// Indices whose expected win probability against ref is within tol of the max.
std::vector<std::size_t> argmax_set(const DiscreteDist& ref, const PreferenceMatrix& pm,
                                    double tol);

struct ConvergenceReport {
    int iterations_used = 0;
    double final_l1_to_limit = 0.0;
    DiscreteDist limit;
    bool converged = false;
};

/// Iterates until the L1 distance to the uniform distribution on the
/// argmax set reaches tol, or max_iters. Non-convergence is reported,
/// not thrown.
ConvergenceReport check_theorem2(const DiscreteDist& ref, const PreferenceMatrix& pm,
                                 double tol, int max_iters);

/// Plain-text instance format: n, then the ref probabilities, then the
/// n rows of the preference matrix. Invariants are validated on load.
void save_oracle_instance(const std::string& path, const DiscreteDist& ref,
                          const PreferenceMatrix& pm);
std::pair<DiscreteDist, PreferenceMatrix> load_oracle_instance(const std::string& path);

void save_discrete_dist(const std::string& path, const DiscreteDist& dist);
DiscreteDist load_discrete_dist(const std::string& path);

/// Draws support points with the given probabilities.
Sampler discrete_sampler(const DiscreteDist& dist);
std::size_t discrete_index(const std::vector<double>& probs, RngStream& rng);

/// Dirichlet(1): a uniform draw from the probability simplex.
std::vector<double> random_simplex(std::size_t n, RngStream& rng);

/// Arbitrary antisymmetric matrix with entries in (margin, 1 - margin).
PreferenceMatrix random_preference_matrix(std::size_t n, RngStream& rng, double margin = 0.02);

/// Bradley-Terry structured instance whose top score beats the runner-up by
/// at least min_top_gap: the unique-argmax family whose iteration provably
/// converges to the argmax point mass.
struct BtInstance {
    DiscreteDist ref;
    PreferenceMatrix pm;
    std::vector<double> scores;
    std::size_t argmax = 0;
};
BtInstance random_bt_instance(std::size_t n, RngStream& rng, double min_top_gap = 0.3);

}  // namespace pfm
