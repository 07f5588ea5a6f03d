#pragma once

#include <span>
#include <string>
#include <vector>

#include "pfm/flow.hpp"
#include "pfm/mlp.hpp"
#include "pfm/oracle.hpp"
#include "pfm/prefdata.hpp"

namespace pfm {

/// Scalar reward head r(x, y); input layout [x..., y...].
struct RewardModel {
    MlpParams net;

    double value(std::span<const double> x, std::span<const double> y) const;
};

MlpSpec reward_spec(int point_dim, int context_dim, std::vector<int> hidden_dims,
                    Activation activation, std::uint64_t seed);

/// Per-epoch maximum learned reward gap over the dataset; the quantity that
/// blows up under deterministic preferences.
struct OverfitTrace {
    std::vector<int> epochs;
    std::vector<double> max_gap;
};

/// Negative log-likelihood of the Bradley-Terry reward fit:
/// -mean log sigmoid(r(x,y+) - r(x,y-)).
double reward_nll(const RewardModel& model, std::span<const PreferenceTriple> batch);

/// Gradient of reward_nll with respect to the flattened net parameters.
Vec reward_nll_grad(const RewardModel& model, std::span<const PreferenceTriple> batch);

struct RewardTrainResult {
    RewardModel model;
    OverfitTrace trace;
    std::vector<double> epoch_nll;
};

RewardTrainResult train_reward(const PreferenceDataset& dataset, const MlpSpec& spec,
                               const TrainConfig& cfg);

/// Softmax policy over a fixed finite support; log-densities are exact so
/// the comparison with the discrete closed form is exact too.
struct DiscretePolicy {
    std::vector<Vec> support;
    std::vector<double> logits;

    std::vector<double> probs() const;
    DiscreteDist distribution() const;
};

void save_policy(const std::string& path, const DiscretePolicy& policy);
DiscretePolicy load_policy(const std::string& path);

/// -mean log sigmoid(beta * [log pi/ref (y+) - log pi/ref (y-)]).
double dpo_loss(const DiscretePolicy& policy, const DiscreteDist& ref,
                std::span<const PreferenceTriple> batch, double beta);

/// Exact gradient of dpo_loss with respect to the logits.
std::vector<double> dpo_loss_grad(const DiscretePolicy& policy, const DiscreteDist& ref,
                                  std::span<const PreferenceTriple> batch, double beta);

struct DpoTrainResult {
    DiscretePolicy policy;
    OverfitTrace trace;  // max implicit reward gap per epoch
    std::vector<double> epoch_loss;
};

DpoTrainResult train_dpo(const DiscreteDist& ref, const PreferenceDataset& dataset, double beta,
                         const TrainConfig& cfg);

void save_overfit_trace(const std::string& path, const OverfitTrace& trace);

}  // namespace pfm
