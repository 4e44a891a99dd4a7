#include <doctest.h>

#include <fstream>

#include "support/fixtures.hpp"
#include "wlens/tensor_io.hpp"

using namespace wlens;
using wlens::testing::TempDir;

namespace {

std::vector<std::uint8_t> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string three_tensor_fixture(const TempDir& dir) {
    std::vector<WeightMatrix> tensors;
    tensors.push_back(WeightMatrix::quantize_bf16("model.layers.0.self_attn.q_proj.weight", 2, 2,
                                                  {1.0, 2.0, 3.0, 4.0}));
    tensors.push_back(WeightMatrix::quantize_bf16("model.layers.0.self_attn.k_proj.weight", 2, 2,
                                                  {5.0, 6.0, 7.0, 8.0}));
    tensors.push_back(WeightMatrix::from_f32("model.embed_tokens.weight", 4, 2,
                                             {0.f, 1.f, 2.f, 3.f, 4.f, 5.f, 6.f, 7.f}));
    const std::string path = dir.file("fixture.safetensors");
    write_checkpoint(path, tensors);
    return path;
}

}  // namespace

TEST_CASE("fixture archive opens with three index entries") {
    TempDir dir("tio");
    const auto h = open_checkpoint(three_tensor_fixture(dir));
    CHECK(h.entries.size() == 3);
    CHECK(h.total_params == 4 + 4 + 8);
    CHECK(h.entries[0].name == "model.layers.0.self_attn.q_proj.weight");
    CHECK(h.entries[2].dtype == "F32");
}

TEST_CASE("empty file fails to parse") {
    TempDir dir("tio");
    const std::string path = dir.file("empty.safetensors");
    std::ofstream(path).close();
    CHECK_THROWS_AS(open_checkpoint(path), ParseError);
}

TEST_CASE("declared range past EOF is an integrity error") {
    TempDir dir("tio");
    const std::string path = dir.file("trunc.safetensors");
    const std::string header =
        R"({"w":{"dtype":"F32","shape":[4,4],"data_offsets":[0,64]}})";
    std::ofstream out(path, std::ios::binary);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    out.write("\0\0\0\0", 4);  // only 4 payload bytes, 64 declared
    out.close();
    CHECK_THROWS_AS(open_checkpoint(path), IntegrityError);
}

TEST_CASE("header/shape disagreement is an integrity error") {
    TempDir dir("tio");
    const std::string path = dir.file("bad.safetensors");
    const std::string header =
        R"({"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,12]}})";
    std::ofstream out(path, std::ios::binary);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    out.write(std::string(12, '\0').data(), 12);
    out.close();
    CHECK_THROWS_AS(open_checkpoint(path), IntegrityError);
}

TEST_CASE("malformed header JSON is a parse error") {
    TempDir dir("tio");
    const std::string path = dir.file("garbage.safetensors");
    const std::string header = "{not json";
    std::ofstream out(path, std::ios::binary);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    out.close();
    CHECK_THROWS_AS(open_checkpoint(path), ParseError);
}

TEST_CASE("layer filters select by glob and rank") {
    TempDir dir("tio");
    std::vector<WeightMatrix> tensors;
    tensors.push_back(WeightMatrix::quantize_bf16("model.layers.0.self_attn.q_proj.weight", 2, 2,
                                                  {1, 2, 3, 4}));
    tensors.push_back(WeightMatrix::quantize_bf16("model.layers.0.self_attn.v_proj.weight", 2, 2,
                                                  {1, 2, 3, 4}));
    tensors.push_back(WeightMatrix::quantize_bf16("model.embed_tokens.weight", 2, 2, {1, 2, 3, 4}));
    WeightMatrix bias = WeightMatrix::quantize_bf16("model.layers.0.input_norm.weight", 2, 1, {1, 2});
    bias.stored_rank1 = true;
    tensors.push_back(bias);
    const std::string path = dir.file("filters.safetensors");
    write_checkpoint(path, tensors);
    const auto h = open_checkpoint(path);

    LayerFilter only_q;
    only_q.include = {"*.q_proj.weight"};
    CHECK(list_layers(h, only_q) ==
          std::vector<std::string>{"model.layers.0.self_attn.q_proj.weight"});

    LayerFilter no_embed;
    no_embed.exclude = {"*embed*"};
    no_embed.min_rank = 1;
    CHECK(list_layers(h, no_embed).size() == 3);

    LayerFilter rank2;
    rank2.min_rank = 2;
    CHECK(list_layers(h, rank2).size() == 3);  // the norm vector drops out

    LayerFilter everything = LayerFilter::everything();
    CHECK(list_layers(h, everything).size() == 4);
}

TEST_CASE("bf16 payloads load bit-exactly and round-trip") {
    TempDir dir("tio");
    const std::string path = three_tensor_fixture(dir);
    const auto h = open_checkpoint(path);
    const auto w = load_matrix(h, "model.layers.0.self_attn.q_proj.weight");
    CHECK(w.dtype == Dtype::bf16);
    CHECK(w.value_at(0, 0) == 1.0f);
    CHECK(w.value_at(1, 1) == 4.0f);
    CHECK(w.codes == std::vector<std::uint16_t>{Bf16::from_float(1.f).bits(),
                                                Bf16::from_float(2.f).bits(),
                                                Bf16::from_float(3.f).bits(),
                                                Bf16::from_float(4.f).bits()});

    // re-serializing the loaded tensors reproduces payload bytes exactly
    std::vector<WeightMatrix> reloaded;
    for (const auto& e : h.entries) reloaded.push_back(load_matrix(h, e.name, true));
    const std::string copy = dir.file("copy.safetensors");
    write_checkpoint(copy, reloaded);
    const auto h2 = open_checkpoint(copy);
    for (const auto& e : h.entries) CHECK(read_raw(h, e.name) == read_raw(h2, e.name));
}

TEST_CASE("missing layer raises NotFound") {
    TempDir dir("tio");
    const auto h = open_checkpoint(three_tensor_fixture(dir));
    CHECK_THROWS_AS(load_matrix(h, "nope"), NotFound);
}

TEST_CASE("unsupported dtype is listed but refuses to load") {
    TempDir dir("tio");
    const std::string path = dir.file("int8.safetensors");
    const std::string header =
        R"({"q":{"dtype":"I8","shape":[2,2],"data_offsets":[0,4]}})";
    std::ofstream out(path, std::ios::binary);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    out.write("\1\2\3\4", 4);
    out.close();
    const auto h = open_checkpoint(path);
    CHECK(h.entries.size() == 1);
    CHECK_THROWS_AS(load_matrix(h, "q"), UnsupportedDtype);
}

TEST_CASE("f16 tensors widen to f32 with the flag set") {
    TempDir dir("tio");
    const std::string path = dir.file("half.safetensors");
    // 1.0 in binary16 is 0x3C00; 2.0 is 0x4000.
    const std::string header =
        R"({"h":{"dtype":"F16","shape":[1,2],"data_offsets":[0,4]}})";
    std::ofstream out(path, std::ios::binary);
    std::uint64_t len = header.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out << header;
    const std::uint16_t payload[2] = {0x3C00, 0x4000};
    out.write(reinterpret_cast<const char*>(payload), 4);
    out.close();
    const auto w = load_matrix(open_checkpoint(path), "h");
    CHECK(w.dtype == Dtype::f32);
    CHECK(w.widened_from_f16);
    CHECK(w.value_at(0, 0) == 1.0f);
    CHECK(w.value_at(0, 1) == 2.0f);
}

TEST_CASE("rank-1 tensors need the explicit opt-in") {
    TempDir dir("tio");
    WeightMatrix bias = WeightMatrix::quantize_bf16("b", 3, 1, {1, 2, 3});
    bias.stored_rank1 = true;
    const std::string path = dir.file("bias.safetensors");
    write_checkpoint(path, {bias});
    const auto h = open_checkpoint(path);
    CHECK_THROWS_AS(load_matrix(h, "b"), ShapeError);
    const auto w = load_matrix(h, "b", true);
    CHECK(w.rows == 3);
    CHECK(w.cols == 1);
}

TEST_CASE("two opens of the same file give identical indices") {
    TempDir dir("tio");
    const std::string path = three_tensor_fixture(dir);
    const auto a = open_checkpoint(path);
    const auto b = open_checkpoint(path);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].name == b.entries[i].name);
        CHECK(a.entries[i].begin == b.entries[i].begin);
        CHECK(a.entries[i].end == b.entries[i].end);
    }
}

TEST_CASE("glob matching corner cases") {
    CHECK(glob_match("*", "anything"));
    CHECK(glob_match("*.q_proj.weight", "model.layers.7.self_attn.q_proj.weight"));
    CHECK_FALSE(glob_match("*.q_proj.weight", "model.layers.7.self_attn.k_proj.weight"));
    CHECK(glob_match("model.layers.?.mlp*", "model.layers.3.mlp.up_proj.weight"));
    CHECK_FALSE(glob_match("model.layers.?.mlp*", "model.layers.12.mlp.up_proj.weight"));
    CHECK(glob_match("", ""));
    CHECK_FALSE(glob_match("", "x"));
}
