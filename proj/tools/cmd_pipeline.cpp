#include "commands.hpp"
#include "wlens/pipeline.hpp"

namespace wlens::cli {

void setup_pipeline_command(CLI::App& app, int* exit_code) {
    (void)exit_code;

    auto config_path = std::make_shared<std::string>();
    auto overrides = std::make_shared<std::vector<std::string>>();
    auto base = std::make_shared<std::string>();
    auto finetuned = std::make_shared<std::vector<std::string>>();
    auto out_dir = std::make_shared<std::string>();
    auto seed = std::make_shared<std::int64_t>(-1);
    auto print_report = std::make_shared<bool>(false);

    auto* cmd = app.add_subcommand(
        "pipeline",
        "run the full diagnostic chain (sparsity, masks, cross-run agreement, spectral "
        "drift, selection-mask overlap) from a config file");
    cmd->add_option("--config", *config_path, "declarative config file");
    cmd->add_option("--set", *overrides, "override, e.g. pipeline.eta=1e-3 (repeatable)");
    cmd->add_option("--base", *base, "override pipeline.base");
    cmd->add_option("--finetuned", *finetuned, "override pipeline.finetuned");
    cmd->add_option("--out", *out_dir, "override pipeline.output");
    cmd->add_option("--seed", *seed, "override pipeline.seed");
    cmd->add_flag("--print", *print_report, "print report.json to stdout as well");

    cmd->callback([=] {
        ConfigFile file = config_path->empty() ? ConfigFile::parse_string("")
                                               : ConfigFile::parse_file(*config_path);
        for (const auto& o : *overrides) file.apply_override(o);
        // dedicated flags win over --set and over the file
        if (!base->empty()) file.set("pipeline", "base", *base);
        if (!finetuned->empty()) {
            std::string joined;
            for (const auto& f : *finetuned) {
                if (!joined.empty()) joined += ", ";
                joined += f;
            }
            file.set("pipeline", "finetuned", joined);
        }
        if (!out_dir->empty()) file.set("pipeline", "output", *out_dir);
        if (*seed >= 0) file.set("pipeline", "seed", std::to_string(*seed));

        const PipelineConfig cfg = PipelineConfig::from_config(file);
        const auto problems = cfg.validate();
        if (!problems.empty()) {
            std::string msg = "invalid pipeline configuration:";
            for (const auto& p : problems) msg += "\n  - " + p;
            throw ConfigError(msg);
        }

        const Report report = run_pipeline(cfg);
        if (*print_report) std::printf("%s", report.to_string().c_str());
        std::fprintf(stderr, "pipeline report written to %s/report.json\n",
                     cfg.output_dir.c_str());
    });
}

}  // namespace wlens::cli
