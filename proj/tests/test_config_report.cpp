#include <doctest.h>

#include <fstream>
#include <sstream>

#include "support/fixtures.hpp"
#include "wlens/config.hpp"
#include "wlens/pipeline.hpp"

using namespace wlens;
using namespace wlens::testing;

TEST_CASE("config files parse sections, lists, and comments") {
    const std::string text = R"(
# top comment
[pipeline]
base = base.safetensors
finetuned = a.safetensors, b.safetensors  # two runs
eta = 1e-3
k = 8, 16

[filter]
exclude = *embed*, *lm_head*
min_rank = 2

[mask p50]
kind = principal
alpha = 0.5
)";
    const ConfigFile cfg = ConfigFile::parse_string(text);
    CHECK(cfg.get("pipeline", "base") == std::string("base.safetensors"));
    CHECK(cfg.get_list("pipeline", "finetuned") ==
          std::vector<std::string>{"a.safetensors", "b.safetensors"});
    CHECK(cfg.get_list("filter", "exclude") ==
          std::vector<std::string>{"*embed*", "*lm_head*"});
    CHECK(cfg.has_section("mask p50"));
    CHECK_FALSE(cfg.get("pipeline", "missing").has_value());
}

TEST_CASE("overrides win over file values") {
    ConfigFile cfg = ConfigFile::parse_string("[pipeline]\nseed = 1\n");
    cfg.apply_override("pipeline.seed=42");
    CHECK(cfg.get("pipeline", "seed") == std::string("42"));
    cfg.apply_override("filter.min_rank=1");
    CHECK(cfg.get("filter", "min_rank") == std::string("1"));
    CHECK_THROWS_AS(cfg.apply_override("nonsense"), ConfigError);
}

TEST_CASE("malformed config lines raise errors") {
    CHECK_THROWS_AS(ConfigFile::parse_string("[unterminated\n"), ConfigError);
    CHECK_THROWS_AS(ConfigFile::parse_string("key without equals\n"), ConfigError);
}

TEST_CASE("pipeline config materializes typed fields and default recipes") {
    const std::string text = R"(
[pipeline]
base = base.safetensors
finetuned = ft.safetensors
seed = 7
k = 4, 8
)";
    const PipelineConfig cfg = PipelineConfig::from_config(ConfigFile::parse_string(text));
    CHECK(cfg.seed == 7);
    CHECK(cfg.k_list == std::vector<std::size_t>{4, 8});
    REQUIRE(cfg.recipes.size() == 5);  // the five standard designs
    CHECK(cfg.recipes[0].recipe.kind == MaskKind::principal);
    CHECK(cfg.recipes[3].recipe.kind == MaskKind::safe);
    CHECK(cfg.recipes[4].recipe.kind == MaskKind::random_matched);
    CHECK(cfg.recipes[4].matched_to == "safe");
    CHECK(cfg.recipes[0].recipe.k == 8);  // defaults to max spectral k
}

TEST_CASE("validation reports every problem at once") {
    PipelineConfig cfg;
    cfg.base = "/nonexistent/base";
    cfg.finetuned = {"/nonexistent/ft"};
    cfg.eta = 1.0;
    cfg.profile_window = 2;
    cfg.k_list.clear();
    const auto problems = cfg.validate();
    CHECK(problems.size() >= 4);
}

TEST_CASE("csv twin of a block prints numbers identically to the json") {
    Report report(3);
    auto& block = report.add_block("demo", "x = y");
    block["value"] = 0.1;
    block["nested"]["pi"] = 3.141592653589793;
    block["list"] = {1.5, 2.25};

    const std::string csv = Report::block_to_csv(report.json()["blocks"][0]);
    CHECK(csv.find("value," + nlohmann::json(0.1).dump()) != std::string::npos);
    CHECK(csv.find("nested.pi," + nlohmann::json(3.141592653589793).dump()) !=
          std::string::npos);
    CHECK(csv.find("list[1]," + nlohmann::json(2.25).dump()) != std::string::npos);
}

TEST_CASE("pipeline runs end to end on a small fixture and is deterministic") {
    TempDir dir("pipe");
    Rng rng(271);

    // base + two finetuned runs over two layers with planted changes
    const auto q = random_bf16_matrix("model.layers.0.self_attn.q_proj.weight", 12, 10, rng);
    const auto v = random_bf16_matrix("model.layers.0.self_attn.v_proj.weight", 10, 10, rng);
    write_checkpoint(dir.file("base.safetensors"), {q, v});

    std::vector<std::size_t> stripe;  // rows 2 and 5 hot in every run
    for (std::size_t c = 0; c < 10; ++c) {
        stripe.push_back(2 * 10 + c);
        stripe.push_back(5 * 10 + c);
    }
    for (int run = 0; run < 2; ++run) {
        auto q1 = bump_entries(q, stripe);
        std::vector<std::size_t> extra;
        for (std::size_t i = 0; i < q.size(); ++i)
            if (rng.uniform() < 0.05) extra.push_back(i);
        q1 = bump_entries(q1, extra);
        const auto v1 = bump_entries(v, {0, 11, 22});
        write_checkpoint(dir.file("ft" + std::to_string(run) + ".safetensors"), {q1, v1});
    }

    PipelineConfig cfg;
    cfg.base = dir.file("base.safetensors");
    cfg.finetuned = {dir.file("ft0.safetensors"), dir.file("ft1.safetensors")};
    cfg.output_dir = dir.file("out");
    cfg.seed = 5;
    cfg.k_list = {3};
    cfg.report_all_tensors = false;
    cfg.install_default_recipes();

    const Report first = run_pipeline(cfg);
    const std::string first_text = first.to_string();

    // byte-identical on a second run
    const Report second = run_pipeline(cfg);
    CHECK(second.to_string() == first_text);

    const auto& root = first.json();
    CHECK(root["schema_version"] == 1);
    REQUIRE(root["blocks"].size() > 3);

    bool saw_sparsity = false, saw_jaccard = false, saw_overlap = false;
    for (const auto& block : root["blocks"]) {
        const std::string kind = block["kind"];
        if (kind == "sparsity") {
            saw_sparsity = true;
            CHECK(block["global"]["sparsity"].get<double>() > 0.5);
            CHECK(block["formula"].is_string());
        }
        if (kind == "jaccard") {
            saw_jaccard = true;
            const auto& layers = block["layers"];
            REQUIRE(layers.size() >= 1);
            // planted stripes push agreement above the independent baseline
            CHECK(block["mean_off_diagonal"].get<double>() >
                  block["mean_baseline_off_diagonal"].get<double>());
        }
        if (kind == "overlap") saw_overlap = true;
    }
    CHECK(saw_sparsity);
    CHECK(saw_jaccard);
    CHECK(saw_overlap);

    // the emitted report file parses and matches
    std::ifstream in(dir.file("out") + "/report.json");
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str() == first_text);
}

TEST_CASE("pipeline rejects invalid configs with the full problem list") {
    PipelineConfig cfg;
    cfg.base = "/nonexistent";
    cfg.finetuned = {};
    try {
        run_pipeline(cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("pipeline.base") != std::string::npos);
        CHECK(msg.find("pipeline.finetuned") != std::string::npos);
    }
}

TEST_CASE("pipeline isolates per-layer failures") {
    TempDir dir("pipefail");
    Rng rng(277);
    const auto good = random_bf16_matrix("model.layers.0.self_attn.q_proj.weight", 8, 8, rng);
    const auto odd = random_bf16_matrix("model.layers.1.self_attn.q_proj.weight", 8, 8, rng);
    write_checkpoint(dir.file("base.safetensors"), {good, odd});

    // second checkpoint has a shape mismatch on the second layer
    const auto good1 = bump_entries(good, {0, 1});
    const auto odd1 = random_bf16_matrix("model.layers.1.self_attn.q_proj.weight", 8, 9, rng);
    write_checkpoint(dir.file("ft.safetensors"), {good1, odd1});

    PipelineConfig cfg;
    cfg.base = dir.file("base.safetensors");
    cfg.finetuned = {dir.file("ft.safetensors")};
    cfg.output_dir = dir.file("out");
    cfg.k_list = {2};
    cfg.report_all_tensors = false;
    cfg.install_default_recipes();

    const Report rep = run_pipeline(cfg);
    bool found_error = false;
    for (const auto& block : rep.json()["blocks"]) {
        if (block["kind"] == "sparsity") {
            CHECK(block["errors"].size() == 1);
            CHECK(block["layers"].size() == 1);  // the healthy layer still reports
            found_error = true;
        }
    }
    CHECK(found_error);
}
