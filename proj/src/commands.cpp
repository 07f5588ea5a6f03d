#include "pfm/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "pfm/baselines.hpp"
#include "pfm/errors.hpp"
#include "pfm/metrics.hpp"
#include "pfm/oracle.hpp"

namespace fs = std::filesystem;

namespace pfm::cli {

namespace {

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot read '" + p.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Output directory handle: echoes the resolved config on construction and
// maintains manifest.json (merged across staged runs into the same dir).
class RunDir {
public:
    explicit RunDir(const RunConfig& cfg) : dir_(cfg.output_dir) {
        fs::create_directories(dir_);
        std::ofstream os(dir_ / "resolved_config.json", std::ios::binary);
        if (!os) throw IoError("cannot write resolved config in '" + dir_.string() + "'");
        os << cfg.to_json().dump(2) << "\n";
        names_.push_back("resolved_config.json");
    }

    std::string path(const std::string& name) {
        names_.push_back(name);
        return (dir_ / name).string();
    }

    std::string dir() const { return dir_.string(); }

    void finish() {
        std::map<std::string, nlohmann::json> entries;
        fs::path manifest = dir_ / "manifest.json";
        if (fs::exists(manifest)) {
            try {
                nlohmann::json old = nlohmann::json::parse(read_bytes(manifest));
                for (const auto& e : old.at("files"))
                    entries[e.at("name").get<std::string>()] = e;
            } catch (...) {
                entries.clear();  // stale manifest, rebuild from scratch
            }
        }
        for (const auto& name : names_) {
            std::string bytes = read_bytes(dir_ / name);
            char hex[32];
            std::snprintf(hex, sizeof(hex), "%016llx",
                          static_cast<unsigned long long>(fnv1a64(bytes)));
            entries[name] = {{"name", name}, {"bytes", bytes.size()}, {"fnv1a64", hex}};
        }
        nlohmann::json files = nlohmann::json::array();
        for (const auto& [_, e] : entries) files.push_back(e);
        std::ofstream os(manifest, std::ios::binary);
        if (!os) throw IoError("cannot write manifest in '" + dir_.string() + "'");
        os << nlohmann::json{{"files", files}}.dump(2) << "\n";
    }

private:
    fs::path dir_;
    std::vector<std::string> names_;
};

void save_series(const std::string& path, const std::string& value_name,
                 const std::vector<double>& values) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "epoch," << value_name << "\n";
    for (std::size_t i = 0; i < values.size(); ++i)
        os << (i + 1) << "," << format_double(values[i]) << "\n";
    if (!os) throw IoError("write to '" + path + "' failed");
}

void progress(const std::string& line) { std::printf("%s\n", line.c_str()); }

std::string default_path(const RunConfig& cfg, const std::string& configured,
                         const std::string& fallback_name) {
    if (!configured.empty()) return configured;
    return (fs::path(cfg.output_dir) / fallback_name).string();
}

void require_file(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("missing input: " + path);
}

MlpSpec flow_spec_for(const RunConfig& cfg, int point_dim, int context_dim,
                      std::uint64_t init_seed) {
    return field_spec(point_dim, context_dim, cfg.hidden_dims, cfg.activation, init_seed,
                      cfg.encoding);
}

SampleSource make_source(const RunConfig& cfg, bool for_infer_command) {
    SampleSource src;
    src.reference = cfg.reference;
    if (for_infer_command && cfg.infer_source == "p0") {
        if (!cfg.labeler_access)
            throw ConfigError(
                "infer.source = p0 requires labeler access at inference time; "
                "set infer.labeler_access = true");
        src.kind = SampleSource::Kind::NegativeMarginal;
        src.labeler = &cfg.labeler;
    }
    return src;
}

std::vector<Vec> reference_cloud(const RunConfig& cfg, int n) {
    std::vector<Vec> cloud;
    cloud.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RngStream rng(cfg.seed, "ref-cloud", static_cast<std::uint64_t>(i));
        cloud.push_back(gm_sample(cfg.reference, rng));
    }
    return cloud;
}

// Source draws and their pushforwards through a stack of flows, one cloud
// per depth. Sample i always consumes the (seed, "infer", i) stream, so the
// depth-1 cloud matches the plain infer command exactly.
struct ProgressiveClouds {
    std::vector<Vec> source;
    std::vector<std::vector<Vec>> per_depth;
};

ProgressiveClouds push_clouds(const RunConfig& cfg, const SampleSource& src,
                              const std::vector<MlpParams>& flows, int n,
                              const char* stream_label = "infer") {
    ProgressiveClouds out;
    out.source.reserve(static_cast<std::size_t>(n));
    out.per_depth.assign(flows.size(), {});
    for (auto& c : out.per_depth) c.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RngStream rng(cfg.seed, stream_label, static_cast<std::uint64_t>(i));
        Vec y = src.draw(rng);
        out.source.push_back(y);
        for (std::size_t d = 0; d < flows.size(); ++d) {
            y = integrate(flows[d], std::move(y), {}, cfg.ode, cfg.encoding);
            out.per_depth[d].push_back(y);
        }
    }
    return out;
}

std::vector<Vec> positive_cloud_from(const PreferenceDataset& ds, int n) {
    std::vector<Vec> cloud;
    std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(n), ds.triples.size());
    cloud.reserve(count);
    for (std::size_t i = 0; i < count; ++i) cloud.push_back(ds.triples[i].y_plus);
    return cloud;
}

std::vector<Vec> grid_support(int per_axis, double halfwidth, int dim) {
    std::vector<Vec> support;
    if (dim == 1) {
        for (int i = 0; i < per_axis; ++i) {
            double a = per_axis == 1 ? 0.0
                                     : -halfwidth + 2.0 * halfwidth * i / (per_axis - 1.0);
            support.push_back({a});
        }
        return support;
    }
    if (dim == 2) {
        for (int i = 0; i < per_axis; ++i)
            for (int j = 0; j < per_axis; ++j) {
                double a = -halfwidth + 2.0 * halfwidth * i / (per_axis - 1.0);
                double b = -halfwidth + 2.0 * halfwidth * j / (per_axis - 1.0);
                support.push_back({a, b});
            }
        return support;
    }
    throw ConfigError("baseline grid supports 1-D and 2-D points only");
}

DiscreteDist discretized_reference(const RunConfig& cfg, const std::vector<Vec>& support) {
    DiscreteDist ref;
    ref.support = support;
    ref.probs.resize(support.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < support.size(); ++i) {
        ref.probs[i] = gm_pdf(cfg.reference, support[i]);
        sum += ref.probs[i];
    }
    if (!(sum > 0.0))
        throw DegenerateInputError("baseline grid carries no reference mass");
    for (auto& p : ref.probs) p /= sum;
    return ref;
}

struct BaselineArtifacts {
    RewardTrainResult reward;
    DpoTrainResult dpo;
    DiscreteDist ref_grid;
    DiscreteDist rlhf;
    double dpo_rlhf_tv = 0.0;
};

BaselineArtifacts run_baselines(const RunConfig& cfg, RunDir& rd, const PreferenceDataset& ds) {
    BaselineArtifacts out;

    MlpSpec rspec = reward_spec(ds.point_dim, ds.context_dim, cfg.reward_hidden_dims,
                                cfg.activation, derive_seed(cfg.seed, "reward-init"));
    TrainConfig rcfg = cfg.train;
    rcfg.epochs = cfg.reward_epochs;
    rcfg.batch_size = cfg.reward_batch_size;
    rcfg.seed = derive_seed(cfg.seed, "reward-train");
    out.reward = train_reward(ds, rspec, rcfg);
    save_checkpoint(rd.path("reward_model.ckpt"), out.reward.model.net);
    save_series(rd.path("reward_nll.csv"), "nll", out.reward.epoch_nll);
    save_overfit_trace(rd.path("reward_trace.csv"), out.reward.trace);

    auto support = grid_support(cfg.grid_points_per_axis, cfg.grid_halfwidth, ds.point_dim);
    out.ref_grid = discretized_reference(cfg, support);

    PreferenceDataset dpo_ds = collect_pairs(discrete_sampler(out.ref_grid), cfg.labeler,
                                             cfg.dpo_pairs, 0, derive_seed(cfg.seed, "dpo-data"));
    TrainConfig dcfg = cfg.train;
    dcfg.epochs = cfg.dpo_epochs;
    dcfg.batch_size = cfg.dpo_batch_size;
    dcfg.lr = cfg.dpo_lr;
    dcfg.seed = derive_seed(cfg.seed, "dpo-train");
    out.dpo = train_dpo(out.ref_grid, dpo_ds, cfg.dpo_beta, dcfg);
    save_policy(rd.path("dpo_policy.txt"), out.dpo.policy);
    save_series(rd.path("dpo_loss.csv"), "loss", out.dpo.epoch_loss);
    save_overfit_trace(rd.path("dpo_trace.csv"), out.dpo.trace);

    PreferenceLabeler bt;
    bt.kind = PreferenceLabeler::Kind::BradleyTerry;
    bt.tau = cfg.rlhf_tau;
    bt.reward = cfg.reward;
    PreferenceMatrix pm = build_preference_matrix(bt, support);
    out.rlhf = rlhf_optimal(out.ref_grid, pm, cfg.rlhf_beta);
    save_discrete_dist(rd.path("rlhf_optimal.txt"), out.rlhf);

    out.dpo_rlhf_tv = 0.5 * l1_distance(out.dpo.policy.probs(), out.rlhf.probs);

    nlohmann::json summary = {
        {"dpo_rlhf_tv", out.dpo_rlhf_tv},
        {"reward_final_nll", out.reward.epoch_nll.back()},
        {"reward_final_max_gap", out.reward.trace.max_gap.back()},
        {"dpo_final_max_gap", out.dpo.trace.max_gap.back()},
        {"grid_points", support.size()}};
    std::ofstream os(rd.path("baseline_summary.json"), std::ios::binary);
    os << summary.dump(2) << "\n";
    return out;
}

MethodMetrics cloud_metrics(const RunConfig& cfg, const std::string& name,
                            std::span<const Vec> cloud, std::span<const Vec> reference,
                            std::span<const Vec> positive) {
    MethodMetrics m;
    m.n_samples = static_cast<int>(cloud.size());
    m.seed = cfg.seed;
    m.mean_reward = mean_reward(cloud, cfg.reward);
    std::size_t n = std::min(cloud.size(), reference.size());
    m.win_rate_vs_reference = win_rate(cloud.subspan(0, n), reference.subspan(0, n), cfg.labeler,
                                       derive_seed(cfg.seed, "eval-win-" + name));
    m.energy_distance_to_positive = energy_distance(cloud, positive);
    return m;
}

}  // namespace

int cmd_gen_data(const RunConfig& cfg) {
    RunDir rd(cfg);
    PreferenceDataset ds = collect_dataset(cfg.reference, cfg.labeler, cfg.n_pairs,
                                           cfg.context_dim, derive_seed(cfg.seed, "data", 1));
    save_dataset(rd.path("dataset.txt"), ds);
    rd.finish();
    progress("stage=gen-data triples=" + std::to_string(ds.size()) + " out=" + rd.dir());
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    RunDir rd(cfg);
    std::string dataset_path = default_path(cfg, cfg.train_dataset_file, "dataset.txt");
    require_file(dataset_path);
    PreferenceDataset ds = load_dataset(dataset_path);

    MlpSpec spec = flow_spec_for(cfg, ds.point_dim, ds.context_dim,
                                 derive_seed(cfg.seed, "init", 1));
    TrainConfig tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.seed, "train", 1);
    FlowTrainResult res = train_flow(ds, spec, cfg.path, tcfg, cfg.encoding);
    save_checkpoint(rd.path("flow.ckpt"), res.field);
    save_series(rd.path("loss.csv"), "loss", res.epoch_loss);
    rd.finish();
    progress("stage=train epochs=" + std::to_string(cfg.train.epochs) +
             " final_loss=" + format_double(res.epoch_loss.back()));
    return 0;
}

int cmd_infer(const RunConfig& cfg) {
    RunDir rd(cfg);
    if (cfg.context_dim > 0)
        throw ConfigError("infer: conditional inference is not wired in the CLI (context_dim > 0)");
    std::string ckpt = default_path(cfg, cfg.checkpoint_file, "flow.ckpt");
    require_file(ckpt);
    MlpParams field = load_checkpoint(ckpt);
    SampleSource src = make_source(cfg, true);

    ProgressiveClouds clouds = push_clouds(cfg, src, {field}, cfg.infer_n_samples);
    save_cloud(rd.path("samples_source.csv"), clouds.source);
    save_cloud(rd.path("samples_pfm.csv"), clouds.per_depth[0]);
    rd.finish();
    progress("stage=infer source=" + cfg.infer_source +
             " n=" + std::to_string(cfg.infer_n_samples));
    return 0;
}

int cmd_iterate(const RunConfig& cfg) {
    RunDir rd(cfg);
    if (cfg.context_dim > 0)
        throw ConfigError("iterate: conditional iteration is not wired in the CLI");
    SampleSource src = make_source(cfg, false);
    MlpSpec spec = flow_spec_for(cfg, cfg.reference.dim, 0, 0);

    IterateResult res;
    if (cfg.iterate.mode == IterateConfig::Mode::Reapply) {
        std::string ckpt = default_path(cfg, cfg.checkpoint_file, "flow.ckpt");
        require_file(ckpt);
        MlpParams field = load_checkpoint(ckpt);
        res = iterate_pfm(src, nullptr, spec, cfg.path, cfg.train, cfg.ode, cfg.iterate,
                          cfg.seed, &field, cfg.encoding);
        // progressive clouds reuse the same single flow at every depth
        std::vector<MlpParams> stack(static_cast<std::size_t>(cfg.iterate.iterations),
                                     res.flows.front());
        ProgressiveClouds clouds = push_clouds(cfg, src, stack, cfg.infer_n_samples);
        save_cloud(rd.path("samples_source.csv"), clouds.source);
        for (std::size_t d = 0; d < clouds.per_depth.size(); ++d)
            save_cloud(rd.path("samples_iter" + std::to_string(d + 1) + ".csv"),
                       clouds.per_depth[d]);
    } else {
        res = iterate_pfm(src, &cfg.labeler, spec, cfg.path, cfg.train, cfg.ode, cfg.iterate,
                          cfg.seed, nullptr, cfg.encoding);
        for (std::size_t n = 0; n < res.flows.size(); ++n) {
            std::string tag = std::to_string(n + 1);
            save_checkpoint(rd.path("flow_iter" + tag + ".ckpt"), res.flows[n]);
            save_series(rd.path("loss_iter" + tag + ".csv"), "loss", res.iteration_losses[n]);
            save_dataset(rd.path("dataset_iter" + tag + ".txt"), res.iteration_datasets[n]);
        }
        ProgressiveClouds clouds = push_clouds(cfg, src, res.flows, cfg.infer_n_samples);
        save_cloud(rd.path("samples_source.csv"), clouds.source);
        for (std::size_t d = 0; d < clouds.per_depth.size(); ++d)
            save_cloud(rd.path("samples_iter" + std::to_string(d + 1) + ".csv"),
                       clouds.per_depth[d]);
    }
    rd.finish();
    progress("stage=iterate k=" + std::to_string(cfg.iterate.iterations));
    return 0;
}

int cmd_oracle(const RunConfig& cfg) {
    RunDir rd(cfg);
    DiscreteDist ref;
    PreferenceMatrix pm;
    if (cfg.oracle_instance == "builtin:3point_total_order") {
        ref.probs = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
        pm.p = {{0.5, 0.0, 0.0}, {1.0, 0.5, 0.0}, {1.0, 1.0, 0.5}};
    } else if (cfg.oracle_instance == "builtin:constant_half") {
        ref.probs.assign(5, 0.2);
        pm.p.assign(5, std::vector<double>(5, 0.5));
    } else {
        require_file(cfg.oracle_instance);
        std::tie(ref, pm) = load_oracle_instance(cfg.oracle_instance);
    }
    ref.validate();
    pm.validate();

    ConvergenceReport report = check_theorem2(ref, pm, cfg.oracle_tol, cfg.oracle_max_iters);
    DiscreteDist p1 = marginal_positive(ref, pm);
    DiscreteDist p0 = marginal_negative(ref, pm);
    nlohmann::json inst = {{"instance", cfg.oracle_instance},
                           {"n", ref.size()},
                           {"converged", report.converged},
                           {"iterations_used", report.iterations_used},
                           {"final_l1_to_limit", report.final_l1_to_limit},
                           {"limit", report.limit.probs},
                           {"p1", p1.probs},
                           {"p0", p0.probs},
                           {"objective_p1", marginal_objective(p1, ref, pm)}};
    {
        std::ofstream os(rd.path("instance_report.json"), std::ios::binary);
        os << inst.dump(2) << "\n";
    }

    // Theorem 1 sweep: the positive marginal must dominate random simplex
    // draws. Theorem 2 sweep: unique-argmax instances must converge to the
    // argmax point mass with monotone mass along the iterates.
    int th1_pass = 0;
    std::ofstream sweep(rd.path("oracle_sweep.csv"), std::ios::binary);
    sweep << "kind,instance,pass,iterations\n";
    for (int k = 0; k < cfg.sweep_instances; ++k) {
        RngStream rng(cfg.seed, "oracle-sweep-th1", static_cast<std::uint64_t>(k));
        DiscreteDist r;
        r.probs = random_simplex(10, rng);
        PreferenceMatrix m = random_preference_matrix(10, rng);
        DiscreteDist opt = marginal_positive(r, m);
        double best = marginal_objective(opt, r, m);
        bool ok = true;
        for (int d = 0; d < cfg.sweep_draws && ok; ++d) {
            DiscreteDist q;
            q.probs = random_simplex(10, rng);
            if (best < marginal_objective(q, r, m) - 1e-9) ok = false;
        }
        th1_pass += ok;
        sweep << "theorem1," << k << "," << (ok ? 1 : 0) << ",0\n";
    }
    int th2_pass = 0;
    for (int k = 0; k < cfg.sweep_instances; ++k) {
        RngStream rng(cfg.seed, "oracle-sweep-th2", static_cast<std::uint64_t>(k));
        BtInstance bt = random_bt_instance(static_cast<std::size_t>(cfg.sweep_points), rng);
        ConvergenceReport rep =
            check_theorem2(bt.ref, bt.pm, cfg.oracle_tol, cfg.oracle_max_iters);
        bool ok = rep.converged && rep.limit.probs[bt.argmax] == 1.0;
        // monotone mass on the argmax along the trajectory
        DiscreteDist p = bt.ref;
        double prev = p.probs[bt.argmax];
        for (int it = 0; it < rep.iterations_used && ok; ++it) {
            p = marginal_positive(p, bt.pm);
            if (p.probs[bt.argmax] < prev - 1e-15) ok = false;
            prev = p.probs[bt.argmax];
        }
        th2_pass += ok;
        sweep << "theorem2," << k << "," << (ok ? 1 : 0) << "," << rep.iterations_used << "\n";
    }
    sweep.close();

    nlohmann::json summary = {{"theorem1_passes", th1_pass},
                              {"theorem2_passes", th2_pass},
                              {"instances", cfg.sweep_instances},
                              {"all_pass", th1_pass == cfg.sweep_instances &&
                                               th2_pass == cfg.sweep_instances}};
    {
        std::ofstream os(rd.path("oracle_summary.json"), std::ios::binary);
        os << summary.dump(2) << "\n";
    }
    rd.finish();
    progress("stage=oracle theorem1=" + std::to_string(th1_pass) + "/" +
             std::to_string(cfg.sweep_instances) + " theorem2=" + std::to_string(th2_pass) +
             "/" + std::to_string(cfg.sweep_instances));
    return 0;
}

int cmd_baseline(const RunConfig& cfg) {
    RunDir rd(cfg);
    std::string dataset_path = default_path(cfg, cfg.baseline_dataset_file, "dataset.txt");
    require_file(dataset_path);
    PreferenceDataset ds = load_dataset(dataset_path);
    BaselineArtifacts art = run_baselines(cfg, rd, ds);
    rd.finish();
    progress("stage=baseline dpo_rlhf_tv=" + format_double(art.dpo_rlhf_tv));
    return 0;
}

int cmd_eval(const RunConfig& cfg) {
    RunDir rd(cfg);
    std::string ref_path = default_path(cfg, cfg.eval_reference_cloud, "samples_source.csv");
    std::string pos_path = default_path(cfg, cfg.eval_positive_cloud, "samples_positive.csv");
    require_file(ref_path);
    require_file(pos_path);
    std::vector<Vec> reference = load_cloud(ref_path);
    std::vector<Vec> positive = load_cloud(pos_path);

    auto clouds = cfg.eval_clouds;
    if (clouds.empty())
        clouds.emplace_back("pfm", default_path(cfg, "", "samples_pfm.csv"));

    MetricsReport report;
    report.methods["reference"] = cloud_metrics(cfg, "reference", reference, reference, positive);
    for (const auto& [name, file] : clouds) {
        require_file(file);
        std::vector<Vec> cloud = load_cloud(file);
        report.methods[name] = cloud_metrics(cfg, name, cloud, reference, positive);
    }
    save_metrics(rd.path("metrics.json"), rd.path("metrics.csv"), report);
    rd.finish();
    progress("stage=eval methods=" + std::to_string(report.methods.size()));
    return 0;
}

int cmd_repro_8g(const RunConfig& cfg) {
    RunDir rd(cfg);
    auto stage = [](const char* name, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("stage ") + name + ": " + e.what());
        } catch (const UsageError& e) {
            throw UsageError(std::string("stage ") + name + ": " + e.what());
        } catch (const Error& e) {
            throw Error(std::string("stage ") + name + ": " + e.what());
        }
    };

    PreferenceDataset ds;
    stage("gen-data", [&] {
        ds = collect_dataset(cfg.reference, cfg.labeler, cfg.n_pairs, cfg.context_dim,
                             derive_seed(cfg.seed, "data", 1));
        save_dataset(rd.path("dataset.txt"), ds);
    });

    IterateResult iter;
    stage("train", [&] {
        SampleSource src = make_source(cfg, false);
        MlpSpec spec = flow_spec_for(cfg, cfg.reference.dim, 0, 0);
        iter = iterate_pfm(src, &cfg.labeler, spec, cfg.path, cfg.train, cfg.ode, cfg.iterate,
                           cfg.seed, nullptr, cfg.encoding);
        save_checkpoint(rd.path("flow.ckpt"), iter.flows.front());
        save_series(rd.path("loss.csv"), "loss", iter.iteration_losses.front());
        for (std::size_t n = 0; n < iter.flows.size(); ++n) {
            std::string tag = std::to_string(n + 1);
            save_checkpoint(rd.path("flow_iter" + tag + ".ckpt"), iter.flows[n]);
            save_series(rd.path("loss_iter" + tag + ".csv"), "loss", iter.iteration_losses[n]);
            save_dataset(rd.path("dataset_iter" + tag + ".txt"), iter.iteration_datasets[n]);
        }
    });

    std::vector<Vec> ref_cloud, pos_cloud, p0_cloud;
    ProgressiveClouds clouds;
    stage("infer", [&] {
        SampleSource src = make_source(cfg, false);
        clouds = push_clouds(cfg, src, iter.flows, cfg.infer_n_samples);
        save_cloud(rd.path("samples_source.csv"), clouds.source);
        save_cloud(rd.path("samples_pfm.csv"), clouds.per_depth[0]);
        for (std::size_t d = 1; d < clouds.per_depth.size(); ++d)
            save_cloud(rd.path("samples_iter" + std::to_string(d + 1) + ".csv"),
                       clouds.per_depth[d]);

        SampleSource p0_src;
        p0_src.kind = SampleSource::Kind::NegativeMarginal;
        p0_src.reference = cfg.reference;
        p0_src.labeler = &cfg.labeler;
        std::vector<MlpParams> first_flow = {iter.flows.front()};
        ProgressiveClouds p0 = push_clouds(cfg, p0_src, first_flow, cfg.infer_n_samples,
                                           "infer-p0");
        p0_cloud = std::move(p0.per_depth[0]);
        save_cloud(rd.path("samples_p0src.csv"), p0_cloud);

        ref_cloud = reference_cloud(cfg, cfg.eval_n_samples);
        save_cloud(rd.path("samples_ref.csv"), ref_cloud);
        pos_cloud = positive_cloud_from(ds, cfg.eval_n_samples);
        save_cloud(rd.path("samples_positive.csv"), pos_cloud);
    });

    BaselineArtifacts baselines;
    std::vector<Vec> dpo_cloud, rlhf_cloud;
    stage("baseline", [&] {
        baselines = run_baselines(cfg, rd, ds);
        Sampler dpo_draw = discrete_sampler(baselines.dpo.policy.distribution());
        Sampler rlhf_draw = discrete_sampler(baselines.rlhf);
        for (int i = 0; i < cfg.eval_n_samples; ++i) {
            RngStream r1(cfg.seed, "dpo-cloud", static_cast<std::uint64_t>(i));
            dpo_cloud.push_back(dpo_draw(r1));
            RngStream r2(cfg.seed, "rlhf-cloud", static_cast<std::uint64_t>(i));
            rlhf_cloud.push_back(rlhf_draw(r2));
        }
        save_cloud(rd.path("samples_dpo.csv"), dpo_cloud);
        save_cloud(rd.path("samples_rlhf.csv"), rlhf_cloud);
    });

    stage("eval", [&] {
        MetricsReport report;
        report.methods["reference"] =
            cloud_metrics(cfg, "reference", ref_cloud, ref_cloud, pos_cloud);
        report.methods["positive"] =
            cloud_metrics(cfg, "positive", pos_cloud, ref_cloud, pos_cloud);
        report.methods["pfm"] =
            cloud_metrics(cfg, "pfm", clouds.per_depth[0], ref_cloud, pos_cloud);
        for (std::size_t d = 1; d < clouds.per_depth.size(); ++d)
            report.methods["pfm_iter" + std::to_string(d + 1)] =
                cloud_metrics(cfg, "pfm_iter" + std::to_string(d + 1), clouds.per_depth[d],
                              ref_cloud, pos_cloud);
        report.methods["pfm_p0_source"] =
            cloud_metrics(cfg, "pfm_p0_source", p0_cloud, ref_cloud, pos_cloud);
        report.methods["dpo"] = cloud_metrics(cfg, "dpo", dpo_cloud, ref_cloud, pos_cloud);
        report.methods["rlhf"] = cloud_metrics(cfg, "rlhf", rlhf_cloud, ref_cloud, pos_cloud);
        save_metrics(rd.path("metrics.json"), rd.path("metrics.csv"), report);
    });

    rd.finish();
    progress("stage=repro-8g status=done out=" + rd.dir());
    return 0;
}

}  // namespace pfm::cli
