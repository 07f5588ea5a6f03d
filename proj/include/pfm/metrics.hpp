#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfm/oracle.hpp"
#include "pfm/prefdata.hpp"
#include "pfm/util.hpp"

namespace pfm {

double mean_reward(std::span<const Vec> samples, const RewardFunction& reward);

/// Fraction of index-paired comparisons won by a. Comparison i consumes the
/// stream derived from (seed, "win", i) and the winner is decided on the
/// lexicographically ordered pair, so win_rate(a,b) + win_rate(b,a) = 1
/// exactly under the same seed.
double win_rate(std::span<const Vec> samples_a, std::span<const Vec> samples_b,
                const PreferenceLabeler& labeler, std::uint64_t seed);

/// Two-sample energy distance 2 E||A-B|| - E||A-A'|| - E||B-B'|| with
/// V-statistic expectations (all ordered pairs, including i = j).
double energy_distance(std::span<const Vec> samples_a, std::span<const Vec> samples_b);

double discrete_kl(const DiscreteDist& p, const DiscreteDist& q);

struct MethodMetrics {
    double mean_reward = 0.0;
    double win_rate_vs_reference = 0.0;
    double energy_distance_to_positive = 0.0;
    int n_samples = 0;
    std::uint64_t seed = 0;
};

struct MetricsReport {
    std::map<std::string, MethodMetrics> methods;

    nlohmann::json to_json() const;
    std::string to_csv() const;
};

void save_metrics(const std::string& json_path, const std::string& csv_path,
                  const MetricsReport& report);

/// Sample cloud CSV: header row naming context then point columns, then one
/// row of 17-digit decimals per sample.
void save_cloud(const std::string& path, std::span<const Vec> samples, int context_dim = 0);
std::vector<Vec> load_cloud(const std::string& path);

}  // namespace pfm
