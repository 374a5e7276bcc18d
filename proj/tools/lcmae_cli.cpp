#include <CLI11.hpp>
#include <iostream>

#include "lcmae/trainkit.hpp"

using namespace lcmae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

ExperimentPreset resolve_preset(const std::string& config_path, const std::string& preset_name,
                                uint64_t seed, bool seed_set) {
    ExperimentPreset p;
    if (!config_path.empty()) {
        p = load_preset(config_path);
    } else if (!preset_name.empty()) {
        bool found = false;
        for (const auto& b : builtin_presets())
            if (b.name == preset_name) {
                p = b;
                found = true;
                break;
            }
        if (!found) throw ConfigError("no built-in preset named '" + preset_name + "'");
    } else {
        throw ConfigError("provide --config <file.json> or --preset <name>");
    }
    if (seed_set) p.seed = seed;
    return p;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale MAE / LC-MAE laboratory"};
    app.require_subcommand(1);

    std::string config_path, preset_name, out_dir = "out";
    uint64_t seed = 0;
    bool seed_set = false;
    app.add_option("--config", config_path, "experiment config (JSON)")->expected(1);
    app.add_option("--preset", preset_name, "built-in preset name");
    app.add_option("--out", out_dir, "output directory");
    app.add_option_function<uint64_t>(
        "--seed", [&](uint64_t s) { seed = s; seed_set = true; }, "seed override");

    auto* pretrain = app.add_subcommand("pretrain", "train one experiment preset");

    auto* sweep = app.add_subcommand("sweep", "train a family of presets and summarize");
    std::string kind = "mask-ratio";
    sweep->add_option("--kind", kind, "ablation | mask-ratio | decoder-variant | ae-blocks | single-image");

    auto* analyze = app.add_subcommand("analyze", "attention and similarity metrics for a checkpoint");
    std::string ckpt_path, ref_path;
    int64_t images = 16;
    analyze->add_option("--checkpoint", ckpt_path, "checkpoint container")->required();
    analyze->add_option("--ref-features", ref_path, "reference feature dump (checkpoint container)");
    analyze->add_option("--images", images, "images to analyze");

    auto* report = app.add_subcommand("report", "render CSV metrics into SVG plots");
    std::string metrics_dir;
    report->add_option("--in", metrics_dir, "directory with metrics CSVs")->required();

    auto* presets_cmd = app.add_subcommand("presets", "list built-in presets or write one to JSON");
    std::string emit_name;
    presets_cmd->add_option("--emit", emit_name, "write this preset to <out>/<name>.json");

    CLI11_PARSE(app, argc, argv);

    try {
        if (pretrain->parsed()) {
            const ExperimentPreset p = resolve_preset(config_path, preset_name, seed, seed_set);
            const TrainOutcome o = train(p, out_dir);
            std::cout << "trained '" << p.name << "' for " << p.steps << " steps";
            if (o.last_mae) std::cout << ", final l_mae " << *o.last_mae;
            if (o.collapsed) std::cout << ", collapse declared at step " << o.collapse_step;
            std::cout << "\ncheckpoint: " << o.checkpoint_path << "\n";
            if (o.diverged) {
                std::cerr << "training diverged (non-finite loss); last good checkpoint kept\n";
                return kExitDiverged;
            }
            return kExitOk;
        }
        if (sweep->parsed()) {
            const ExperimentPreset p = resolve_preset(config_path, preset_name, seed, seed_set);
            const int failures = run_sweep(kind, p, out_dir);
            std::cout << "sweep '" << kind << "' done, " << failures << " failed point(s), summary in "
                      << out_dir << "/summary.csv\n";
            return kExitOk;
        }
        if (analyze->parsed()) {
            const ExperimentPreset p = resolve_preset(config_path, preset_name, seed, seed_set);
            const ParamStore<float> params = load_params(ckpt_path);
            const Dataset ds = open_dataset(p.data);
            AnalysisOptions opts;
            opts.images = images;
            opts.ref_features_path = ref_path;
            analyze_model(p, params, ds, opts, out_dir);
            std::cout << "analysis written to " << out_dir << "/analysis.csv\n";
            return kExitOk;
        }
        if (report->parsed()) {
            emit_report(metrics_dir, out_dir);
            std::cout << "plots written to " << out_dir << "\n";
            return kExitOk;
        }
        if (presets_cmd->parsed()) {
            if (emit_name.empty()) {
                for (const auto& b : builtin_presets()) std::cout << b.name << "\n";
            } else {
                for (const auto& b : builtin_presets())
                    if (b.name == emit_name) {
                        std::filesystem::create_directories(out_dir);
                        const std::string path = out_dir + "/" + emit_name + ".json";
                        save_preset(b, path);
                        std::cout << path << "\n";
                        return kExitOk;
                    }
                throw ConfigError("no built-in preset named '" + emit_name + "'");
            }
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
