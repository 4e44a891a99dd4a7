#pragma once

#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wlens/report.hpp"
#include "wlens/tensor_io.hpp"

namespace wlens::cli {

// Exit codes shared by every subcommand: 0 ok, 1 analysis findings
// (bound violations, failed invariance), 2 config error, 3 I/O error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFindings = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

struct FilterOptions {
    std::vector<std::string> include;
    std::vector<std::string> exclude;
    bool all = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--include", include, "layer glob(s) to include");
        cmd->add_option("--exclude", exclude, "layer glob(s) to exclude");
        cmd->add_flag("--all", all,
                      "include every tensor (rank-1 too) instead of linear layers only");
    }

    LayerFilter build() const {
        LayerFilter f = all ? LayerFilter::everything() : LayerFilter::linear_only();
        if (!include.empty()) f.include = include;
        if (!exclude.empty()) f.exclude = exclude;
        return f;
    }
};

struct OutputOptions {
    std::string out_path;
    std::string csv_path;

    void attach(CLI::App* cmd) {
        cmd->add_option("-o,--out", out_path, "write the JSON report here (default: stdout)");
        cmd->add_option("--csv", csv_path, "also write a flattened CSV of the report blocks");
    }

    void emit(const Report& report) const;
};

// Subcommand registration. Each callback stores its exit code in *exit_code.
void setup_diff_commands(CLI::App& app, int* exit_code);
void setup_spectral_commands(CLI::App& app, int* exit_code);
void setup_mask_commands(CLI::App& app, int* exit_code);
void setup_intervene_commands(CLI::App& app, int* exit_code);
void setup_theory_commands(CLI::App& app, int* exit_code);
void setup_pipeline_command(CLI::App& app, int* exit_code);

}  // namespace wlens::cli
