#include "pfm/config.hpp"

#include <fstream>
#include <set>

#include "pfm/errors.hpp"

namespace pfm {

namespace {

// Tracks which keys a section consumed so leftovers can be rejected with
// their dotted path. Holds its document by value: callers hand it
// temporaries.
class Section {
public:
    Section(nlohmann::json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError("config error at " + path_ + ": expected an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <class T>
    T get(const std::string& key, const T& fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("config error at " + path_ + "." + key + ": wrong type");
        }
    }

    nlohmann::json raw(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? j_.at(key) : nlohmann::json();
    }

    nlohmann::json object(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nlohmann::json::object();
        if (!j_.at(key).is_object())
            throw ConfigError("config error at " + path_ + "." + key + ": expected an object");
        return j_.at(key);
    }

    std::string path(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("config error at " + path_ + "." + it.key() + ": unknown key");
    }

private:
    nlohmann::json j_;
    std::string path_;
    std::set<std::string> seen_;
};

GaussianMixture default_reference() {
    GaussianMixture gm;
    gm.dim = 2;
    gm.weights = {0.5, 0.5};
    gm.means = {{0.0, 0.0}, {0.0, 0.0}};
    gm.diag_stds = {{2.0, 2.0}, {3.5, 3.5}};
    return gm;
}

GaussianMixture parse_mixture(const nlohmann::json& j, const std::string& path) {
    Section s(j, path);
    if (s.has("preset")) {
        std::string preset = s.get<std::string>("preset", "");
        if (preset != "eight_gaussians")
            throw ConfigError("config error at " + path + ".preset: unknown preset '" + preset +
                              "'");
        double radius = s.get<double>("radius", 4.0);
        double std_ = s.get<double>("component_std", 0.3);
        s.finish();
        return GaussianMixture::eight_gaussians(radius, std_);
    }
    s.has("weights");
    s.has("means");
    s.has("stds");
    s.has("dim");
    s.finish();
    try {
        return GaussianMixture::from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config error at " + path + ": " + e.what());
    }
}

RewardFunction parse_reward(const nlohmann::json& j, const std::string& path) {
    if (j.is_null()) {
        RewardFunction r;
        r.kind = RewardFunction::Kind::MixtureDensity;
        r.mixture = GaussianMixture::eight_gaussians();
        return r;
    }
    Section s(j, path);
    std::string kind = s.get<std::string>("kind", "mixture_density");
    RewardFunction r;
    if (kind == "mixture_density" || kind == "mixture_log_density") {
        r.kind = kind == "mixture_density" ? RewardFunction::Kind::MixtureDensity
                                           : RewardFunction::Kind::MixtureLogDensity;
        nlohmann::json mix = s.raw("mixture");
        r.mixture = mix.is_null()
                        ? GaussianMixture::eight_gaussians()
                        : parse_mixture(mix, path + ".mixture");
        s.finish();
        return r;
    }
    if (kind == "tabular") {
        r.kind = RewardFunction::Kind::Tabular;
        r.support = s.get<std::vector<Vec>>("support", {});
        r.values = s.get<std::vector<double>>("values", {});
        if (r.support.empty() || r.support.size() != r.values.size())
            throw ConfigError("config error at " + path +
                              ": tabular reward needs matching support and values");
        s.finish();
        return r;
    }
    throw ConfigError("config error at " + path + ".kind: unknown reward kind '" + kind + "'");
}

}  // namespace

RunConfig default_config() {
    RunConfig cfg;
    cfg.reward.kind = RewardFunction::Kind::MixtureDensity;
    cfg.reward.mixture = GaussianMixture::eight_gaussians();
    cfg.reference = default_reference();
    cfg.labeler.kind = PreferenceLabeler::Kind::Deterministic;
    cfg.labeler.tau = 1.0;
    cfg.labeler.reward = cfg.reward;
    cfg.train.epochs = 160;
    cfg.train.batch_size = 128;
    cfg.iterate.iterations = 3;
    cfg.iterate.mode = IterateConfig::Mode::Retrain;
    cfg.iterate.pairs_per_iter = 2000;
    return cfg;
}

RunConfig parse_config(const nlohmann::json& doc) {
    RunConfig cfg = default_config();
    Section root(doc, "config");

    cfg.seed = root.get<std::uint64_t>("seed", cfg.seed);
    cfg.output_dir = root.get<std::string>("output_dir", cfg.output_dir);

    {
        Section data(root.object("data"), "data");
        cfg.n_pairs = data.get<int>("n_pairs", cfg.n_pairs);
        if (cfg.n_pairs < 1) throw ConfigError("config error at data.n_pairs: must be >= 1");
        cfg.context_dim = data.get<int>("context_dim", cfg.context_dim);
        if (cfg.context_dim < 0)
            throw ConfigError("config error at data.context_dim: must be >= 0");
        nlohmann::json reward = data.raw("reward");
        cfg.reward = parse_reward(reward, "data.reward");
        nlohmann::json reference = data.raw("reference");
        if (!reference.is_null()) cfg.reference = parse_mixture(reference, "data.reference");
        {
            Section lab(data.object("labeler"), "data.labeler");
            std::string kind = lab.get<std::string>("kind", "deterministic");
            if (kind == "deterministic")
                cfg.labeler.kind = PreferenceLabeler::Kind::Deterministic;
            else if (kind == "bradley_terry")
                cfg.labeler.kind = PreferenceLabeler::Kind::BradleyTerry;
            else
                throw ConfigError("config error at data.labeler.kind: unknown kind '" + kind +
                                  "'");
            cfg.labeler.tau = lab.get<double>("tau", cfg.labeler.tau);
            if (!(cfg.labeler.tau > 0.0))
                throw ConfigError("config error at data.labeler.tau: must be > 0");
            lab.finish();
        }
        cfg.labeler.reward = cfg.reward;
        data.finish();
    }

    {
        Section model(root.object("model"), "model");
        cfg.hidden_dims = model.get<std::vector<int>>("hidden_dims", cfg.hidden_dims);
        if (cfg.hidden_dims.empty())
            throw ConfigError("config error at model.hidden_dims: must be non-empty");
        cfg.activation = activation_from_string(
            model.get<std::string>("activation", to_string(cfg.activation)));
        std::string tf = model.get<std::string>("time_features", "raw");
        int sin_k = model.get<int>("sinusoidal_frequencies", 4);
        if (tf == "raw") {
            cfg.encoding.sinusoidal_frequencies = 0;
        } else if (tf == "sinusoidal") {
            if (sin_k < 1)
                throw ConfigError(
                    "config error at model.sinusoidal_frequencies: must be >= 1");
            cfg.encoding.sinusoidal_frequencies = sin_k;
        } else {
            throw ConfigError("config error at model.time_features: expected raw or sinusoidal");
        }
        model.finish();
    }

    {
        Section path(root.object("path"), "path");
        cfg.path.sigma = path.get<double>("sigma", cfg.path.sigma);
        if (!(cfg.path.sigma >= 0.0))
            throw ConfigError("config error at path.sigma: must be >= 0");
        path.finish();
    }

    {
        Section ode(root.object("ode"), "ode");
        std::string method = ode.get<std::string>("method", "rk4");
        if (method == "rk4")
            cfg.ode.method = OdeConfig::Method::Rk4;
        else if (method == "euler")
            cfg.ode.method = OdeConfig::Method::Euler;
        else
            throw ConfigError("config error at ode.method: expected euler or rk4");
        cfg.ode.steps = ode.get<int>("steps", cfg.ode.steps);
        if (cfg.ode.steps < 1) throw ConfigError("config error at ode.steps: must be >= 1");
        ode.finish();
    }

    {
        Section train(root.object("train"), "train");
        cfg.train.epochs = train.get<int>("epochs", cfg.train.epochs);
        cfg.train.batch_size = train.get<int>("batch_size", cfg.train.batch_size);
        cfg.train.lr = train.get<double>("lr", cfg.train.lr);
        cfg.train.beta1 = train.get<double>("beta1", cfg.train.beta1);
        cfg.train.beta2 = train.get<double>("beta2", cfg.train.beta2);
        cfg.train.eps = train.get<double>("eps", cfg.train.eps);
        cfg.train_dataset_file = train.get<std::string>("dataset_file", "");
        if (cfg.train.epochs < 1) throw ConfigError("config error at train.epochs: must be >= 1");
        if (cfg.train.batch_size < 1)
            throw ConfigError("config error at train.batch_size: must be >= 1");
        train.finish();
    }

    {
        Section infer(root.object("infer"), "infer");
        cfg.infer_source = infer.get<std::string>("source", cfg.infer_source);
        if (cfg.infer_source != "reference" && cfg.infer_source != "p0")
            throw ConfigError("config error at infer.source: expected reference or p0");
        cfg.labeler_access = infer.get<bool>("labeler_access", cfg.labeler_access);
        cfg.infer_n_samples = infer.get<int>("n_samples", cfg.infer_n_samples);
        if (cfg.infer_n_samples < 1)
            throw ConfigError("config error at infer.n_samples: must be >= 1");
        cfg.checkpoint_file = infer.get<std::string>("checkpoint_file", "");
        infer.finish();
    }

    {
        Section iter(root.object("iterate"), "iterate");
        cfg.iterate.iterations = iter.get<int>("iterations", cfg.iterate.iterations);
        if (cfg.iterate.iterations < 1)
            throw ConfigError("config error at iterate.iterations: must be >= 1");
        std::string mode = iter.get<std::string>("mode", "retrain");
        if (mode == "retrain")
            cfg.iterate.mode = IterateConfig::Mode::Retrain;
        else if (mode == "reapply")
            cfg.iterate.mode = IterateConfig::Mode::Reapply;
        else
            throw ConfigError("config error at iterate.mode: expected retrain or reapply");
        cfg.iterate.pairs_per_iter = iter.get<int>("pairs_per_iter", cfg.iterate.pairs_per_iter);
        if (cfg.iterate.pairs_per_iter < 1)
            throw ConfigError("config error at iterate.pairs_per_iter: must be >= 1");
        iter.finish();
    }

    {
        Section oracle(root.object("oracle"), "oracle");
        cfg.oracle_instance = oracle.get<std::string>("instance", cfg.oracle_instance);
        cfg.oracle_tol = oracle.get<double>("tol", cfg.oracle_tol);
        if (!(cfg.oracle_tol > 0.0)) throw ConfigError("config error at oracle.tol: must be > 0");
        cfg.oracle_max_iters = oracle.get<int>("max_iters", cfg.oracle_max_iters);
        cfg.sweep_instances = oracle.get<int>("sweep_instances", cfg.sweep_instances);
        cfg.sweep_points = oracle.get<int>("sweep_points", cfg.sweep_points);
        cfg.sweep_draws = oracle.get<int>("sweep_draws", cfg.sweep_draws);
        oracle.finish();
    }

    {
        Section base(root.object("baseline"), "baseline");
        cfg.reward_hidden_dims =
            base.get<std::vector<int>>("reward_hidden_dims", cfg.reward_hidden_dims);
        cfg.reward_epochs = base.get<int>("reward_epochs", cfg.reward_epochs);
        cfg.reward_batch_size = base.get<int>("reward_batch_size", cfg.reward_batch_size);
        cfg.dpo_beta = base.get<double>("dpo_beta", cfg.dpo_beta);
        cfg.dpo_epochs = base.get<int>("dpo_epochs", cfg.dpo_epochs);
        cfg.dpo_batch_size = base.get<int>("dpo_batch_size", cfg.dpo_batch_size);
        cfg.dpo_pairs = base.get<int>("dpo_pairs", cfg.dpo_pairs);
        cfg.dpo_lr = base.get<double>("dpo_lr", cfg.dpo_lr);
        cfg.grid_points_per_axis = base.get<int>("grid_points_per_axis", cfg.grid_points_per_axis);
        cfg.grid_halfwidth = base.get<double>("grid_halfwidth", cfg.grid_halfwidth);
        cfg.rlhf_beta = base.get<double>("rlhf_beta", cfg.rlhf_beta);
        cfg.rlhf_tau = base.get<double>("rlhf_tau", cfg.rlhf_tau);
        cfg.baseline_dataset_file = base.get<std::string>("dataset_file", "");
        if (cfg.grid_points_per_axis < 2)
            throw ConfigError("config error at baseline.grid_points_per_axis: must be >= 2");
        base.finish();
    }

    {
        Section ev(root.object("eval"), "eval");
        cfg.eval_n_samples = ev.get<int>("n_samples", cfg.eval_n_samples);
        if (cfg.eval_n_samples < 1)
            throw ConfigError("config error at eval.n_samples: must be >= 1");
        cfg.eval_reference_cloud = ev.get<std::string>("reference_cloud", "");
        cfg.eval_positive_cloud = ev.get<std::string>("positive_cloud", "");
        nlohmann::json clouds = ev.raw("clouds");
        cfg.eval_clouds.clear();
        if (!clouds.is_null()) {
            if (!clouds.is_array())
                throw ConfigError("config error at eval.clouds: expected an array");
            for (std::size_t i = 0; i < clouds.size(); ++i) {
                Section c(clouds[i], "eval.clouds[" + std::to_string(i) + "]");
                std::string name = c.get<std::string>("name", "");
                std::string file = c.get<std::string>("path", "");
                if (name.empty() || file.empty())
                    throw ConfigError("config error at eval.clouds[" + std::to_string(i) +
                                      "]: name and path are required");
                c.finish();
                cfg.eval_clouds.emplace_back(name, file);
            }
        }
        ev.finish();
    }

    root.finish();
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        is >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: invalid JSON in '" + path + "': " + e.what());
    }
    return parse_config(doc);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json labeler_j = {
        {"kind",
         labeler.kind == PreferenceLabeler::Kind::Deterministic ? "deterministic"
                                                                : "bradley_terry"},
        {"tau", labeler.tau}};
    nlohmann::json reward_j = reward.to_json();
    nlohmann::json model_j = {
        {"hidden_dims", hidden_dims},
        {"activation", to_string(activation)},
        {"time_features", encoding.sinusoidal_frequencies > 0 ? "sinusoidal" : "raw"},
        {"sinusoidal_frequencies",
         encoding.sinusoidal_frequencies > 0 ? encoding.sinusoidal_frequencies : 4}};
    nlohmann::json clouds = nlohmann::json::array();
    for (const auto& [name, file] : eval_clouds) clouds.push_back({{"name", name}, {"path", file}});
    return {
        {"seed", seed},
        {"output_dir", output_dir},
        {"data",
         {{"n_pairs", n_pairs},
          {"context_dim", context_dim},
          {"reward", reward_j},
          {"reference", reference.to_json()},
          {"labeler", labeler_j}}},
        {"model", model_j},
        {"path", {{"sigma", path.sigma}}},
        {"ode",
         {{"method", ode.method == OdeConfig::Method::Rk4 ? "rk4" : "euler"},
          {"steps", ode.steps}}},
        {"train",
         {{"epochs", train.epochs},
          {"batch_size", train.batch_size},
          {"lr", train.lr},
          {"beta1", train.beta1},
          {"beta2", train.beta2},
          {"eps", train.eps},
          {"dataset_file", train_dataset_file}}},
        {"infer",
         {{"source", infer_source},
          {"labeler_access", labeler_access},
          {"n_samples", infer_n_samples},
          {"checkpoint_file", checkpoint_file}}},
        {"iterate",
         {{"iterations", iterate.iterations},
          {"mode", iterate.mode == IterateConfig::Mode::Retrain ? "retrain" : "reapply"},
          {"pairs_per_iter", iterate.pairs_per_iter}}},
        {"oracle",
         {{"instance", oracle_instance},
          {"tol", oracle_tol},
          {"max_iters", oracle_max_iters},
          {"sweep_instances", sweep_instances},
          {"sweep_points", sweep_points},
          {"sweep_draws", sweep_draws}}},
        {"baseline",
         {{"reward_hidden_dims", reward_hidden_dims},
          {"reward_epochs", reward_epochs},
          {"reward_batch_size", reward_batch_size},
          {"dpo_beta", dpo_beta},
          {"dpo_epochs", dpo_epochs},
          {"dpo_batch_size", dpo_batch_size},
          {"dpo_pairs", dpo_pairs},
          {"dpo_lr", dpo_lr},
          {"grid_points_per_axis", grid_points_per_axis},
          {"grid_halfwidth", grid_halfwidth},
          {"rlhf_beta", rlhf_beta},
          {"rlhf_tau", rlhf_tau},
          {"dataset_file", baseline_dataset_file}}},
        {"eval",
         {{"n_samples", eval_n_samples},
          {"reference_cloud", eval_reference_cloud},
          {"positive_cloud", eval_positive_cloud},
          {"clouds", clouds}}}};
}

}  // namespace pfm
