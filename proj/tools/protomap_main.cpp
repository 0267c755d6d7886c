// Command-line front end. All functionality goes through the shared C API.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "protomap/protomap.h"

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 42;
    std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "JSON config file")->required();
    cmd->add_option("--seed", args.seed, "master seed (default 42)");
    cmd->add_option("--out", args.out, "output path/directory override");
}

int fail(pm_status status) {
    nlohmann::json err = {{"error",
                           {{"status", pm_status_name(status)},
                            {"code", static_cast<int>(status)},
                            {"message", pm_last_error()}}}};
    std::cerr << err.dump() << std::endl;
    return static_cast<int>(status);
}

class ConfigHandle {
public:
    ~ConfigHandle() { pm_config_free(handle_); }
    pm_status load(const std::string& path) { return pm_config_load(path.c_str(), &handle_); }
    pm_config* get() const { return handle_; }

private:
    pm_config* handle_ = nullptr;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prototype-guided likelihood map toolkit"};
    app.require_subcommand(1);
    app.footer("Config schema:\n" + std::string(pm_config_schema()));

    CommonArgs generate_args, adpen_args, estimator_args, evaluate_args, explain_args;
    CLI::App* generate = app.add_subcommand("generate", "write a synthetic cohort as NDJSON");
    add_common(generate, generate_args);
    CLI::App* train_adpen =
        app.add_subcommand("train-adpen", "train the prototype embedding network on fold 0");
    add_common(train_adpen, adpen_args);
    CLI::App* train_estimator = app.add_subcommand(
        "train-estimator", "train the likelihood-map estimator against a saved adpen checkpoint");
    add_common(train_estimator, estimator_args);
    CLI::App* evaluate =
        app.add_subcommand("evaluate", "run the cross-validated pipeline and report metrics");
    add_common(evaluate, evaluate_args);
    CLI::App* explain = app.add_subcommand(
        "explain", "export the explainable map and morphological differences for one subject");
    add_common(explain, explain_args);

    CLI11_PARSE(app, argc, argv);

    const CommonArgs& args = generate->parsed()          ? generate_args
                             : train_adpen->parsed()     ? adpen_args
                             : train_estimator->parsed() ? estimator_args
                             : evaluate->parsed()        ? evaluate_args
                                                         : explain_args;

    ConfigHandle config;
    if (pm_status status = config.load(args.config_path); status != PM_OK) return fail(status);

    const char* out = args.out.empty() ? nullptr : args.out.c_str();
    pm_status status = PM_OK;
    if (generate->parsed()) {
        status = pm_run_generate(config.get(), args.seed, out);
    } else if (train_adpen->parsed()) {
        status = pm_run_train_adpen(config.get(), args.seed, out);
    } else if (train_estimator->parsed()) {
        status = pm_run_train_estimator(config.get(), args.seed, out);
    } else if (evaluate->parsed()) {
        char* metrics = nullptr;
        status = pm_run_evaluate(config.get(), args.seed, out, &metrics);
        if (metrics != nullptr) {
            std::cout << metrics;
            pm_string_free(metrics);
        }
    } else if (explain->parsed()) {
        status = pm_run_explain(config.get(), args.seed, out);
    }

    return status == PM_OK ? 0 : fail(status);
}
