// tvlab: a desk-scale lab for extracting, injecting, and analyzing
// transferrable in-context task representations in a small transformer.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "tvlab/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tvlab;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::string checkpoint;
    std::string backend;
    int64_t seed = -1;
    int64_t workers = -1;
    std::vector<std::string> tasks;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "pipeline config JSON (default: built-in)");
    cmd->add_option("--out", args.out_dir, "artifact directory")->capture_default_str();
    cmd->add_option("--seed", args.seed, "override the config seed");
    cmd->add_option("--checkpoint", args.checkpoint, "use this checkpoint file");
    cmd->add_option("--workers", args.workers, "worker threads (0 = all cores)");
    cmd->add_option("--backend", args.backend,
                    "wire-protocol address of an external model backend (no adapter bundled)");
}

json load_config(const CommonArgs& args) {
    json j = args.config_path.empty() ? PipelineConfig::default_config_json()
                                      : json::parse(read_text_file(args.config_path));
    if (args.seed >= 0) j["seed"] = args.seed;
    if (args.workers >= 0) j["workers"] = args.workers;
    return j;
}

Pipeline make_pipeline(const CommonArgs& args, json config) {
    if (!args.backend.empty()) {
        fail("--backend: the wire protocol (see README, File formats) is an extension point; "
             "no external-model adapter is bundled, drivers run the in-repo checkpoint");
    }
    auto cfg = PipelineConfig::from_json(config);
    Pipeline pipeline(cfg, args.out_dir);
    if (!args.checkpoint.empty()) {
        fs::create_directories(args.out_dir);
        fs::copy_file(args.checkpoint, fs::path(args.out_dir) / "checkpoint.tvlb",
                      fs::copy_options::overwrite_existing);
        pipeline.use_external_checkpoint();
    }
    return pipeline;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"task-vector laboratory"};
    app.require_subcommand(1);

    CommonArgs run_args, gen_args, train_args, search_args, sweep_args, locality_args,
        probe_args, decay_args, analyze_args, report_args;

    auto* cmd_run = app.add_subcommand("run", "execute the full pipeline from a config");
    add_common(cmd_run, run_args);

    auto* cmd_gen = app.add_subcommand("gen-tasks", "build the vocabulary and task datasets");
    add_common(cmd_gen, gen_args);

    auto* cmd_train = app.add_subcommand("train", "train the in-repo model on task episodes");
    add_common(cmd_train, train_args);

    auto* cmd_search = app.add_subcommand("search-layers", "best-layer search per task");
    add_common(cmd_search, search_args);
    int search_start = -1, search_stride = -1, search_k = -1;
    cmd_search->add_option("--start", search_start, "first candidate layer");
    cmd_search->add_option("--stride", search_stride, "candidate layer stride");
    cmd_search->add_option("--k", search_k, "shots in the extraction prompts");
    cmd_search->add_option("--task", search_args.tasks, "restrict to these tasks");

    auto* cmd_sweep = app.add_subcommand("sweep-k", "zero/recon/few accuracy over k");
    add_common(cmd_sweep, sweep_args);
    std::string sweep_ks;
    cmd_sweep->add_option("--ks", sweep_ks, "comma-separated shot counts (e.g. 0,1,2,4,8,16,32)");
    cmd_sweep->add_option("--task", sweep_args.tasks, "restrict to these tasks");

    auto* cmd_locality = app.add_subcommand("locality", "token-locality grids and role summary");
    add_common(cmd_locality, locality_args);
    int locality_k = -1;
    cmd_locality->add_option("--k", locality_k, "shot count for extraction prompts");
    cmd_locality->add_option("--task", locality_args.tasks, "restrict to these tasks");

    auto* cmd_probe = app.add_subcommand("probe", "task-identity decoding grids");
    add_common(cmd_probe, probe_args);
    int probe_k = -1, probe_n = -1;
    cmd_probe->add_option("--k", probe_k, "shot count for activation prompts");
    cmd_probe->add_option("--n-per-task", probe_n, "token instances per task");

    auto* cmd_decay = app.add_subcommand("decay", "per-unit accuracy over longer generations");
    add_common(cmd_decay, decay_args);
    int decay_k = -1;
    cmd_decay->add_option("--k", decay_k, "shot count");
    cmd_decay->add_option("--task", decay_args.tasks, "restrict to these tasks");

    auto* cmd_analyze = app.add_subcommand("analyze", "task-vector dispersion/magnitude/projection");
    add_common(cmd_analyze, analyze_args);

    auto* cmd_report = app.add_subcommand("report", "emit SVG figures from stage outputs");
    add_common(cmd_report, report_args);

    auto* cmd_verify = app.add_subcommand("verify", "recompute CSV aggregates from records");
    std::string verify_dir = "out";
    cmd_verify->add_option("--out", verify_dir, "artifact directory")->capture_default_str();

    auto* cmd_config = app.add_subcommand("default-config", "print a config to stdout");
    bool smoke = false;
    cmd_config->add_flag("--smoke", smoke, "scaled-down configuration for quick runs");

    if (argc <= 1) {
        std::puts(app.help().c_str());
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (cmd_config->parsed()) {
            const json j =
                smoke ? PipelineConfig::smoke_config_json() : PipelineConfig::default_config_json();
            std::printf("%s\n", j.dump(2).c_str());
            return 0;
        }
        if (cmd_verify->parsed()) {
            auto problems = verify_artifacts(verify_dir);
            if (problems.empty()) {
                std::printf("verify: all table cells match their records\n");
                return 0;
            }
            for (const auto& p : problems) std::printf("verify: MISMATCH %s\n", p.c_str());
            return 1;
        }

        if (cmd_run->parsed()) {
            make_pipeline(run_args, load_config(run_args)).run();
        } else if (cmd_gen->parsed()) {
            make_pipeline(gen_args, load_config(gen_args)).stage_gen();
        } else if (cmd_train->parsed()) {
            make_pipeline(train_args, load_config(train_args)).stage_train();
        } else if (cmd_search->parsed()) {
            json j = load_config(search_args);
            if (search_start >= 0) j["search"]["start"] = search_start;
            if (search_stride >= 0) j["search"]["stride"] = search_stride;
            if (search_k >= 0) j["search"]["k"] = search_k;
            if (!search_args.tasks.empty()) j["search"]["tasks"] = search_args.tasks;
            make_pipeline(search_args, j).stage_search();
        } else if (cmd_sweep->parsed()) {
            json j = load_config(sweep_args);
            if (!sweep_ks.empty()) {
                std::vector<int> ks;
                size_t start = 0;
                while (start <= sweep_ks.size()) {
                    size_t end = sweep_ks.find(',', start);
                    if (end == std::string::npos) end = sweep_ks.size();
                    ks.push_back(std::stoi(sweep_ks.substr(start, end - start)));
                    start = end + 1;
                }
                j["sweep"]["ks"] = ks;
            }
            if (!sweep_args.tasks.empty()) j["sweep"]["tasks"] = sweep_args.tasks;
            make_pipeline(sweep_args, j).stage_sweep();
        } else if (cmd_locality->parsed()) {
            json j = load_config(locality_args);
            if (locality_k >= 0) j["locality"]["k"] = locality_k;
            if (!locality_args.tasks.empty()) j["locality"]["tasks"] = locality_args.tasks;
            make_pipeline(locality_args, j).stage_locality();
        } else if (cmd_probe->parsed()) {
            json j = load_config(probe_args);
            if (probe_k >= 0) j["probes"]["k"] = probe_k;
            if (probe_n >= 0) j["probes"]["n_per_task"] = probe_n;
            make_pipeline(probe_args, j).stage_probes();
        } else if (cmd_decay->parsed()) {
            json j = load_config(decay_args);
            if (decay_k >= 0) j["decay"]["k"] = decay_k;
            if (!decay_args.tasks.empty()) j["decay"]["tasks"] = decay_args.tasks;
            make_pipeline(decay_args, j).stage_decay();
        } else if (cmd_analyze->parsed()) {
            make_pipeline(analyze_args, load_config(analyze_args)).stage_analysis();
        } else if (cmd_report->parsed()) {
            make_pipeline(report_args, load_config(report_args)).stage_report();
        }
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
