#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfm/rng.hpp"
#include "pfm/util.hpp"

namespace pfm {

/// Diagonal-covariance Gaussian mixture; doubles as the reference policy
/// and as the basis of the ground-truth reward.
struct GaussianMixture {
    std::vector<double> weights;
    std::vector<Vec> means;
    std::vector<Vec> diag_stds;
    int dim = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static GaussianMixture from_json(const nlohmann::json& j);

    // 8 equal-weight components on a circle, the toy reward basis.
    static GaussianMixture eight_gaussians(double radius = 4.0, double component_std = 0.3);
};

Vec gm_sample(const GaussianMixture& gm, RngStream& rng);
double gm_pdf(const GaussianMixture& gm, std::span<const double> y);
double gm_log_pdf(const GaussianMixture& gm, std::span<const double> y);

struct RewardFunction {
    enum class Kind { MixtureDensity, MixtureLogDensity, Tabular };
    Kind kind = Kind::MixtureDensity;
    GaussianMixture mixture;       // mixture kinds
    std::vector<Vec> support;      // tabular kind
    std::vector<double> values;    // tabular kind

    double operator()(std::span<const double> y) const;
    nlohmann::json to_json() const;
    static RewardFunction from_json(const nlohmann::json& j);
};

/// Scripted preference teacher: either deterministic (higher reward wins,
/// ties by fair coin) or Bradley-Terry with temperature tau.
struct PreferenceLabeler {
    enum class Kind { Deterministic, BradleyTerry };
    Kind kind = Kind::Deterministic;
    RewardFunction reward;
    double tau = 1.0;

    nlohmann::json to_json() const;
    static PreferenceLabeler from_json(const nlohmann::json& j);
};

double preference_prob(const PreferenceLabeler& labeler, std::span<const double> y,
                       std::span<const double> y2);

struct PreferenceTriple {
    Vec x;        // context, possibly empty
    Vec y_plus;
    Vec y_minus;
};

PreferenceTriple label_pair(const PreferenceLabeler& labeler, Vec y, Vec y2, RngStream& rng);
PreferenceTriple label_pair(const PreferenceLabeler& labeler, Vec x, Vec y, Vec y2,
                            RngStream& rng);

struct PreferenceDataset {
    std::vector<PreferenceTriple> triples;
    int point_dim = 0;
    int context_dim = 0;
    nlohmann::json metadata;  // seed, labeler, reference policy, creation parameters

    std::size_t size() const { return triples.size(); }
};

/// A draw-one-sample closure; pair collection and the iterative driver both
/// consume sources through this type.
using Sampler = std::function<Vec(RngStream&)>;

Sampler gm_sampler(const GaussianMixture& gm);

/// n pairs from an arbitrary sampler, labeled. Pair i consumes only the
/// stream derived from (seed, "pair", i), so collection order is
/// irrelevant and regeneration is exact.
PreferenceDataset collect_pairs(const Sampler& draw, const PreferenceLabeler& labeler, int n,
                                int context_dim, std::uint64_t seed);

PreferenceDataset collect_dataset(const GaussianMixture& policy,
                                  const PreferenceLabeler& labeler, int n, int context_dim,
                                  std::uint64_t seed);

/// Dataset file: one JSON header line (format version, dims, metadata),
/// then one comma-separated record per triple: x, y+, y-.
void save_dataset(const std::string& path, const PreferenceDataset& ds);
PreferenceDataset load_dataset(const std::string& path);

}  // namespace pfm
