// dift: command-line driver for the instruction-building and evaluation pipeline.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dift/error.hpp"
#include "dift/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> overrides;
    std::string dataset_dir;
    std::string workdir;
    std::size_t threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_file, "Pipeline config file (INI)");
    cmd->add_option("-s,--set", args.overrides, "Override a config key: section.key=value")->take_all();
    cmd->add_option("--dataset", args.dataset_dir, "Shorthand for --set data.dataset_dir=...");
    cmd->add_option("--workdir", args.workdir, "Shorthand for --set data.workdir=...");
    cmd->add_option("--threads", args.threads, "Shorthand for --set run.threads=...");
}

dift::PipelineConfig resolve(const CommonArgs& args) {
    auto overrides = args.overrides;
    if (!args.dataset_dir.empty()) overrides.push_back("data.dataset_dir=" + args.dataset_dir);
    if (!args.workdir.empty()) overrides.push_back("data.workdir=" + args.workdir);
    if (args.threads > 0) overrides.push_back("run.threads=" + std::to_string(args.threads));
    std::optional<std::filesystem::path> file;
    if (!args.config_file.empty()) file = args.config_file;
    auto config = dift::load_config(file, overrides);
    if (config.dataset_dir.empty()) throw dift::ConfigError("data.dataset_dir is not set");
    return config;
}

void report_stage(std::string_view name, const dift::StageResult& r) {
    std::cout << name << ": " << r.dir.string() << (r.reused ? " (up to date)" : "") << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("dift"));

    CLI::App app{"Discrimination-instruction pipeline for knowledge graph completion"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    CommonArgs args;
    auto* train = app.add_subcommand("train-embeddings", "Train TransE and write a checkpoint");
    auto* build_ft = app.add_subcommand("build-finetune", "Build truncated finetuning instructions from validation");
    auto* build_ev = app.add_subcommand("build-eval", "Build instructions for every test query");
    auto* eval = app.add_subcommand("evaluate", "Rerank with a discriminator backend and report filtered metrics");
    auto* inspect = app.add_subcommand("inspect", "Pretty-print one instruction sample");
    for (auto* cmd : {train, build_ft, build_ev, eval, inspect}) add_common(cmd, args);

    std::string inspect_file;
    std::optional<std::size_t> inspect_index;
    std::optional<std::string> inspect_id;
    inspect->add_option("file", inspect_file, "Instruction file (*.jsonl)")->required();
    inspect->add_option("--index", inspect_index, "Record index (default 0)");
    inspect->add_option("--id", inspect_id, "Record id");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(dift::ErrorKind::Usage);
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (inspect->parsed()) {
            std::optional<std::filesystem::path> file;
            if (!args.config_file.empty()) file = args.config_file;
            const auto config = dift::load_config(file, args.overrides);
            std::cout << dift::inspect_sample(config, inspect_file, inspect_index, inspect_id);
            return 0;
        }
        const auto config = resolve(args);
        if (train->parsed()) {
            report_stage("embeddings", dift::run_train_embeddings(config));
        } else if (build_ft->parsed()) {
            const auto r = dift::run_build(config, dift::BuildKind::Finetune);
            report_stage("build-finetune", r);
        } else if (build_ev->parsed()) {
            report_stage("build-eval", dift::run_build(config, dift::BuildKind::Eval));
        } else if (eval->parsed()) {
            const auto r = dift::run_evaluate(config);
            std::ifstream table(r.dir / "report.txt");
            std::cout << table.rdbuf();
            report_stage("evaluate", r);
        }
    } catch (const dift::Error& e) {
        spdlog::error("{}", e.what());
        return e.exit_code();
    } catch (const std::filesystem::filesystem_error& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(dift::ErrorKind::Data);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return static_cast<int>(dift::ErrorKind::Data);
    }
    return 0;
}
