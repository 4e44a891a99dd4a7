#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>

#include "commands.hpp"
#include "wlens/errors.hpp"
#include "wlens/version.hpp"

namespace wlens::cli {

void OutputOptions::emit(const Report& report) const {
    if (out_path.empty()) {
        std::cout << report.to_string();
    } else {
        report.save(out_path);
    }
    if (!csv_path.empty()) {
        std::ofstream csv(csv_path, std::ios::trunc);
        if (!csv) throw IoError("cannot create " + csv_path);
        for (const auto& block : report.json()["blocks"]) csv << Report::block_to_csv(block);
    }
}

}  // namespace wlens::cli

int main(int argc, char** argv) {
    using namespace wlens;
    using namespace wlens::cli;

    CLI::App app{"weight-space diagnostics for fine-tuned checkpoints"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    int exit_code = kExitOk;
    setup_diff_commands(app, &exit_code);
    setup_spectral_commands(app, &exit_code);
    setup_mask_commands(app, &exit_code);
    setup_intervene_commands(app, &exit_code);
    setup_theory_commands(app, &exit_code);
    setup_pipeline_command(app, &exit_code);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DomainError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DtypeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ArityError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return exit_code;
}
