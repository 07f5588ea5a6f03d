#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pfm/flow.hpp"
#include "pfm/prefdata.hpp"

namespace pfm {

/// Fully resolved run configuration. Every field has a default; parsing
/// rejects unknown keys; to_json() echoes the resolved document so any run
/// is reproducible from its artifacts alone.
struct RunConfig {
    std::uint64_t seed = 20240612;
    std::string output_dir = "out";

    // data
    int n_pairs = 2000;
    int context_dim = 0;
    RewardFunction reward;
    GaussianMixture reference;
    PreferenceLabeler labeler;

    // model
    std::vector<int> hidden_dims = {128, 128, 128};
    Activation activation = Activation::Silu;
    FieldEncoding encoding;  // raw t by default

    PathConfig path;
    OdeConfig ode;
    TrainConfig train;
    std::string train_dataset_file;  // empty = <output_dir>/dataset.txt

    // infer
    std::string infer_source = "reference";  // or "p0"
    bool labeler_access = false;
    int infer_n_samples = 1000;
    std::string checkpoint_file;  // empty = <output_dir>/flow.ckpt

    IterateConfig iterate;

    // oracle
    std::string oracle_instance = "builtin:3point_total_order";
    double oracle_tol = 1e-8;
    int oracle_max_iters = 10000;
    int sweep_instances = 100;
    int sweep_points = 20;
    int sweep_draws = 1000;

    // baseline
    std::vector<int> reward_hidden_dims = {64, 64};
    int reward_epochs = 60;
    int reward_batch_size = 128;
    double dpo_beta = 1.0;
    int dpo_epochs = 400;
    int dpo_batch_size = 1024;
    int dpo_pairs = 20000;
    double dpo_lr = 0.05;
    int grid_points_per_axis = 16;
    double grid_halfwidth = 6.0;
    double rlhf_beta = 1.0;
    double rlhf_tau = 1.0;
    std::string baseline_dataset_file;  // empty = <output_dir>/dataset.txt

    // eval
    int eval_n_samples = 1000;
    std::vector<std::pair<std::string, std::string>> eval_clouds;  // name -> csv path
    std::string eval_reference_cloud;  // empty = <output_dir>/samples_source.csv
    std::string eval_positive_cloud;   // empty = <output_dir>/samples_positive.csv

    nlohmann::json to_json() const;
};

RunConfig default_config();

/// Applies defaults, validates values, rejects unknown keys. Error messages
/// carry the dotted field path.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config_file(const std::string& path);

}  // namespace pfm
