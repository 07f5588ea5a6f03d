#include "pfm/cli.hpp"

#include <cstdio>
#include <functional>

#include <CLI11.hpp>

#include "pfm/commands.hpp"
#include "pfm/errors.hpp"

namespace pfm::cli {

int run(const std::vector<std::string>& args) {
    CLI::App app{"Preference flow matching experiment driver"};
    app.require_subcommand(1);

    struct Common {
        std::string config_path;
        std::string out_dir;
        std::uint64_t seed = 0;
        bool seed_set = false;
        bool out_set = false;
    };

    std::function<int(const RunConfig&)> selected;
    Common common;

    auto add_command = [&](const char* name, const char* desc,
                           int (*fn)(const RunConfig&)) {
        CLI::App* sub = app.add_subcommand(name, desc);
        sub->add_option("--config", common.config_path, "JSON run configuration");
        sub->add_option("--seed", common.seed, "master seed (overrides config)")
            ->each([&](const std::string&) { common.seed_set = true; });
        sub->add_option("--out", common.out_dir, "output directory (overrides config)")
            ->each([&](const std::string&) { common.out_set = true; });
        sub->callback([&selected, fn] { selected = fn; });
        return sub;
    };

    add_command("gen-data", "collect a labeled preference dataset", cmd_gen_data);
    add_command("train", "train the preference flow on a dataset", cmd_train);
    add_command("infer", "push source samples through a trained flow", cmd_infer);
    add_command("iterate", "iterative preference flow refinement", cmd_iterate);
    add_command("oracle", "discrete marginal and fixed-point checks", cmd_oracle);
    add_command("baseline", "reward model, DPO, and analytic optimum", cmd_baseline);
    add_command("eval", "metrics over sample cloud files", cmd_eval);
    add_command("repro-8g", "full 8-Gaussians experiment bundle", cmd_repro_8g);

    try {
        // CLI11 parses argv-style input; prepend a program name.
        std::vector<std::string> reversed;
        for (auto it = args.rbegin(); it != args.rend(); ++it) reversed.push_back(*it);
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::printf("%s", app.help().c_str());
        return 0;
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }

    try {
        RunConfig cfg =
            common.config_path.empty() ? default_config() : load_config_file(common.config_path);
        if (common.seed_set) cfg.seed = common.seed;
        if (common.out_set) cfg.output_dir = common.out_dir;
        return selected(cfg);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

}  // namespace pfm::cli
