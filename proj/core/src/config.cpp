#include "wlens/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "wlens/rng.hpp"

namespace wlens {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": cannot parse number '" + s + "'");
    }
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw ConfigError(what + ": cannot parse integer '" + s + "'");
    return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(what + ": cannot parse boolean '" + s + "'");
}

}  // namespace

std::vector<std::pair<std::string, std::string>>* ConfigFile::find_section(
    const std::string& name) {
    for (auto& [sec, kvs] : data_)
        if (sec == name) return &kvs;
    return nullptr;
}

const std::vector<std::pair<std::string, std::string>>* ConfigFile::find_section(
    const std::string& name) const {
    for (const auto& [sec, kvs] : data_)
        if (sec == name) return &kvs;
    return nullptr;
}

ConfigFile ConfigFile::parse_string(const std::string& text, const std::string& origin) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!cfg.find_section(section)) cfg.data_.push_back({section, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
        cfg.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
}

void ConfigFile::set(const std::string& section, const std::string& key,
                     const std::string& value) {
    auto* kvs = find_section(section);
    if (!kvs) {
        data_.push_back({section, {}});
        kvs = &data_.back().second;
    }
    for (auto& [k, v] : *kvs)
        if (k == key) {
            v = value;
            return;
        }
    kvs->push_back({key, value});
}

void ConfigFile::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + assignment);
    const std::string path = trim(assignment.substr(0, eq));
    const std::string value = trim(assignment.substr(eq + 1));
    const auto dot = path.rfind('.');
    if (dot == std::string::npos)
        throw ConfigError("override must look like section.key=value: " + assignment);
    set(path.substr(0, dot), path.substr(dot + 1), value);
}

std::optional<std::string> ConfigFile::get(const std::string& section,
                                           const std::string& key) const {
    const auto* kvs = find_section(section);
    if (!kvs) return std::nullopt;
    for (const auto& [k, v] : *kvs)
        if (k == key) return v;
    return std::nullopt;
}

std::vector<std::string> ConfigFile::get_list(const std::string& section,
                                              const std::string& key) const {
    const auto v = get(section, key);
    return v ? split_list(*v) : std::vector<std::string>{};
}

std::vector<std::string> ConfigFile::sections() const {
    std::vector<std::string> out;
    for (const auto& [sec, kvs] : data_) out.push_back(sec);
    return out;
}

bool ConfigFile::has_section(const std::string& section) const {
    return find_section(section) != nullptr;
}

void PipelineConfig::install_default_recipes() {
    const std::size_t k = k_list.empty() ? 64 : *std::max_element(k_list.begin(), k_list.end());
    recipes.clear();
    MaskRecipe principal{MaskKind::principal, k, 0.5, 0.5, 0};
    MaskRecipe complement{MaskKind::principal_complement, k, 0.5, 0.5, 0};
    MaskRecipe low{MaskKind::low_magnitude, k, 0.5, 0.5, 0};
    MaskRecipe safe{MaskKind::safe, k, 0.5, 0.5, 0};
    MaskRecipe random{MaskKind::random_matched, k, 0.5, 0.5, split_seed(seed, "random_matched")};
    recipes.push_back({"principal", principal, ""});
    recipes.push_back({"principal_complement", complement, ""});
    recipes.push_back({"low_magnitude", low, ""});
    recipes.push_back({"safe", safe, ""});
    recipes.push_back({"random_matched_safe", random, "safe"});
}

PipelineConfig PipelineConfig::from_config(const ConfigFile& file) {
    PipelineConfig cfg;
    if (const auto v = file.get("pipeline", "base")) cfg.base = *v;
    cfg.finetuned = file.get_list("pipeline", "finetuned");
    if (const auto v = file.get("pipeline", "output")) cfg.output_dir = *v;
    if (const auto v = file.get("pipeline", "seed")) cfg.seed = parse_u64(*v, "pipeline.seed");
    if (const auto v = file.get("pipeline", "eta")) cfg.eta = parse_double(*v, "pipeline.eta");
    if (const auto v = file.get("pipeline", "mode")) {
        if (*v == "bf16") cfg.diff_mode_hint = DiffMode::bf16_probe;
        else if (*v == "f32") cfg.diff_mode_hint = DiffMode::f32_exact;
        else throw ConfigError("pipeline.mode must be bf16 or f32");
    }
    if (const auto v = file.get("pipeline", "k")) {
        cfg.k_list.clear();
        for (const auto& item : split_list(*v))
            cfg.k_list.push_back(parse_u64(item, "pipeline.k"));
    }
    if (const auto v = file.get("pipeline", "window"))
        cfg.profile_window = parse_u64(*v, "pipeline.window");
    if (const auto v = file.get("pipeline", "workers"))
        cfg.workers = static_cast<unsigned>(parse_u64(*v, "pipeline.workers"));
    if (const auto v = file.get("pipeline", "spectral_workers"))
        cfg.spectral_workers = static_cast<unsigned>(parse_u64(*v, "pipeline.spectral_workers"));
    if (const auto v = file.get("pipeline", "report_all_tensors"))
        cfg.report_all_tensors = parse_bool(*v, "pipeline.report_all_tensors");

    if (file.has_section("filter")) {
        LayerFilter f;
        f.include = file.get_list("filter", "include");
        if (f.include.empty()) f.include = {"*"};
        f.exclude = file.get_list("filter", "exclude");
        if (const auto v = file.get("filter", "min_rank"))
            f.min_rank = parse_u64(*v, "filter.min_rank");
        cfg.filter = f;
    }

    for (const auto& sec : file.sections()) {
        if (sec.rfind("mask ", 0) != 0) continue;
        NamedRecipe named;
        named.label = trim(sec.substr(5));
        if (const auto v = file.get(sec, "kind"))
            named.recipe.kind = mask_kind_from_name(*v);
        else
            throw ConfigError("[" + sec + "] needs a kind");
        named.recipe.k = cfg.k_list.empty()
                             ? 64
                             : *std::max_element(cfg.k_list.begin(), cfg.k_list.end());
        if (const auto v = file.get(sec, "k")) named.recipe.k = parse_u64(*v, sec + ".k");
        if (const auto v = file.get(sec, "alpha"))
            named.recipe.alpha = parse_double(*v, sec + ".alpha");
        named.recipe.alpha_low = named.recipe.alpha;
        if (const auto v = file.get(sec, "alpha_low"))
            named.recipe.alpha_low = parse_double(*v, sec + ".alpha_low");
        named.recipe.seed = split_seed(cfg.seed, named.label);
        if (const auto v = file.get(sec, "seed")) named.recipe.seed = parse_u64(*v, sec + ".seed");
        if (const auto v = file.get(sec, "matched_to")) named.matched_to = *v;
        cfg.recipes.push_back(std::move(named));
    }
    if (cfg.recipes.empty()) cfg.install_default_recipes();
    return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path,
                                         const std::vector<std::string>& overrides) {
    ConfigFile file = ConfigFile::parse_file(path);
    for (const auto& o : overrides) file.apply_override(o);
    return from_config(file);
}

std::vector<std::string> PipelineConfig::validate() const {
    std::vector<std::string> problems;
    namespace fs = std::filesystem;
    if (base.empty())
        problems.push_back("pipeline.base: no base checkpoint given");
    else if (!fs::exists(base))
        problems.push_back("pipeline.base: no such file: " + base);
    if (finetuned.empty()) problems.push_back("pipeline.finetuned: no finetuned checkpoints");
    for (const auto& f : finetuned)
        if (!fs::exists(f)) problems.push_back("pipeline.finetuned: no such file: " + f);
    if (output_dir.empty()) problems.push_back("pipeline.output: empty output directory");
    if (!(eta > 0.0) || !(eta < std::ldexp(1.0, -9)))
        problems.push_back("pipeline.eta: must lie in (0, 2^-9)");
    if (k_list.empty()) problems.push_back("pipeline.k: need at least one rank");
    for (const auto k : k_list)
        if (k < 1) problems.push_back("pipeline.k: ranks must be >= 1");
    if (profile_window == 0 || profile_window % 2 == 0)
        problems.push_back("pipeline.window: smoothing window must be odd");
    if (filter.min_rank < 1 || filter.min_rank > 2)
        problems.push_back("filter.min_rank: must be 1 or 2");
    for (const auto& named : recipes) {
        try {
            named.recipe.validate();
        } catch (const ConfigError& e) {
            problems.push_back("mask " + named.label + ": " + e.what());
        }
        if (named.recipe.kind == MaskKind::random_matched) {
            if (named.matched_to.empty()) {
                problems.push_back("mask " + named.label +
                                   ": random_matched needs matched_to = <recipe label>");
            } else {
                const bool found =
                    std::any_of(recipes.begin(), recipes.end(), [&](const NamedRecipe& r) {
                        return r.label == named.matched_to &&
                               r.recipe.kind != MaskKind::random_matched;
                    });
                if (!found)
                    problems.push_back("mask " + named.label + ": matched_to references '" +
                                       named.matched_to + "', which is not a concrete recipe");
            }
        }
    }
    return problems;
}

}  // namespace wlens
