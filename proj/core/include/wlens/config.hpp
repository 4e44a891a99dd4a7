#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wlens/diff.hpp"
#include "wlens/recipes.hpp"
#include "wlens/tensor_io.hpp"

namespace wlens {

// Declarative key/value tables: "[section]" headers, "key = value" lines,
// '#' comments, comma-separated lists. Flag overrides arrive as
// "section.key=value" strings and win over file contents.
class ConfigFile {
public:
    static ConfigFile parse_file(const std::string& path);
    static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

    void set(const std::string& section, const std::string& key, const std::string& value);
    void apply_override(const std::string& assignment);  // "section.key=value"

    std::optional<std::string> get(const std::string& section, const std::string& key) const;
    std::vector<std::string> get_list(const std::string& section, const std::string& key) const;
    std::vector<std::string> sections() const;
    bool has_section(const std::string& section) const;

private:
    // section -> ordered (key, value) pairs; later duplicates override.
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> data_;

    std::vector<std::pair<std::string, std::string>>* find_section(const std::string& name);
    const std::vector<std::pair<std::string, std::string>>* find_section(
        const std::string& name) const;
};

struct NamedRecipe {
    std::string label;
    MaskRecipe recipe;
    std::string matched_to;  // random_matched: label of the reference recipe
};

struct PipelineConfig {
    std::string base;
    std::vector<std::string> finetuned;
    std::string output_dir = "wlens-out";
    std::uint64_t seed = 0;

    LayerFilter filter = LayerFilter::linear_only();
    bool report_all_tensors = true;  // also report sparsity with rank-1 tensors included

    double eta = 1e-3;
    DiffMode diff_mode_hint = DiffMode::bf16_probe;

    std::vector<std::size_t> k_list = {64};
    std::size_t profile_window = 3;

    std::vector<NamedRecipe> recipes;  // empty -> the five standard designs

    unsigned workers = 0;           // probe / IO parallelism (0 = auto)
    unsigned spectral_workers = 1;  // decompositions in flight at once

    static PipelineConfig from_config(const ConfigFile& file);
    static PipelineConfig from_file(const std::string& path,
                                    const std::vector<std::string>& overrides = {});

    // Standard five designs at alpha = 0.5 with k = max(k_list).
    void install_default_recipes();

    // Every problem found, not just the first; empty means valid.
    std::vector<std::string> validate() const;
};

}  // namespace wlens
