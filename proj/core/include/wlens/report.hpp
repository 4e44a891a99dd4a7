#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "wlens/version.hpp"

namespace wlens {

// Deterministic JSON report. Blocks keep insertion order, every numeric
// block carries the formula it used, and nothing time- or host-dependent is
// ever written, so identical configs reproduce byte-identical files.
class Report {
public:
    explicit Report(std::uint64_t seed) {
        root_["schema_version"] = kReportSchemaVersion;
        root_["tool"] = "wlens";
        root_["tool_version"] = kToolVersion;
        root_["seed"] = seed;
        root_["blocks"] = nlohmann::ordered_json::array();
    }

    void echo_config(nlohmann::ordered_json cfg) { root_["config"] = std::move(cfg); }

    nlohmann::ordered_json& add_block(const std::string& kind, const std::string& formula) {
        nlohmann::ordered_json block;
        block["kind"] = kind;
        block["formula"] = formula;
        root_["blocks"].push_back(std::move(block));
        return root_["blocks"].back();
    }

    const nlohmann::ordered_json& json() const { return root_; }
    std::string to_string() const { return root_.dump(2) + "\n"; }

    void save(const std::string& path) const;

    // Flattened CSV twin of one block: a "path,value" row per leaf, with
    // numbers printed by the same serializer as the JSON encoding.
    static std::string block_to_csv(const nlohmann::ordered_json& block);

private:
    nlohmann::ordered_json root_;
};

}  // namespace wlens
