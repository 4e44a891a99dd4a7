#include "wlens/report.hpp"

#include <fstream>

#include "wlens/errors.hpp"

namespace wlens {

void Report::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create report file " + path);
    out << to_string();
    if (!out) throw IoError("write failed for " + path);
}

namespace {

void flatten(const nlohmann::ordered_json& node, const std::string& prefix, std::string& out) {
    if (node.is_object()) {
        for (const auto& [key, value] : node.items())
            flatten(value, prefix.empty() ? key : prefix + "." + key, out);
    } else if (node.is_array()) {
        std::size_t i = 0;
        for (const auto& value : node) flatten(value, prefix + "[" + std::to_string(i++) + "]", out);
    } else {
        out += prefix;
        out += ',';
        if (node.is_string())
            out += node.get<std::string>();
        else
            out += node.dump();
        out += '\n';
    }
}

}  // namespace

std::string Report::block_to_csv(const nlohmann::ordered_json& block) {
    std::string out = "path,value\n";
    flatten(block, "", out);
    return out;
}

}  // namespace wlens
