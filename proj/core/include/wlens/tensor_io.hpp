#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wlens/tensor.hpp"

namespace wlens {

// Archive layout: 8-byte little-endian header length, a JSON metadata block
// mapping tensor name -> {dtype, shape, data_offsets}, then the contiguous
// raw payload. Offsets are relative to the end of the header. This is the
// layout public checkpoints ship in, so files written here load elsewhere
// and vice versa.

struct TensorEntry {
    std::string name;
    std::string dtype;            // on-disk dtype string: BF16, F32, F16
    std::vector<std::size_t> shape;  // rank 1 or 2
    std::uint64_t begin = 0;      // payload-relative byte range
    std::uint64_t end = 0;

    std::size_t numel() const {
        std::size_t n = 1;
        for (const auto d : shape) n *= d;
        return n;
    }
    std::size_t rank() const { return shape.size(); }
};

// Immutable after open; safe to share across parallel workers. Each
// load_matrix call opens its own stream, so concurrent loads of disjoint
// layers need no coordination.
struct CheckpointHandle {
    std::string path;
    std::uint64_t header_bytes = 0;     // JSON block size
    std::uint64_t payload_offset = 0;   // 8 + header_bytes
    std::uint64_t file_size = 0;
    std::vector<TensorEntry> entries;   // metadata order
    std::map<std::string, std::size_t> index;  // name -> entries position
    std::size_t total_params = 0;

    const TensorEntry& entry(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) != 0; }
};

struct LayerFilter {
    std::vector<std::string> include = {"*"};
    std::vector<std::string> exclude;
    std::size_t min_rank = 2;

    // Matches Table-style "linear layers only" conventions: drop embeddings,
    // the LM head and every rank-1 tensor.
    static LayerFilter linear_only() {
        LayerFilter f;
        f.exclude = {"*embed*", "*lm_head*"};
        f.min_rank = 2;
        return f;
    }
    static LayerFilter everything() {
        LayerFilter f;
        f.min_rank = 1;
        return f;
    }
};

// Glob with '*' and '?'; used by LayerFilter.
bool glob_match(const std::string& pattern, const std::string& text);

// Parses and validates the header. No tensor payload is read.
CheckpointHandle open_checkpoint(const std::string& path);

// Names matching include minus exclude, rank >= min_rank, in archive order.
std::vector<std::string> list_layers(const CheckpointHandle& h, const LayerFilter& f);

// Bit-exact load. bf16 stays bf16; f16 is widened to f32 and flagged.
// Rank-1 tensors are refused unless allow_rank1 is set (they load as n x 1).
WeightMatrix load_matrix(const CheckpointHandle& h, const std::string& layer,
                         bool allow_rank1 = false);

// Raw payload passthrough for byte-identical copies.
std::vector<std::uint8_t> read_raw(const CheckpointHandle& h, const std::string& layer);

// Streaming archive writer; tensors appear in add() order.
class ArchiveWriter {
public:
    void add(const WeightMatrix& w);
    void add_raw(const std::string& name, const std::string& dtype,
                 const std::vector<std::size_t>& shape, std::vector<std::uint8_t> payload);
    void write(const std::string& path) const;

private:
    struct Pending {
        std::string name;
        std::string dtype;
        std::vector<std::size_t> shape;
        std::vector<std::uint8_t> payload;
    };
    std::vector<Pending> pending_;
};

void write_checkpoint(const std::string& path, const std::vector<WeightMatrix>& tensors);

}  // namespace wlens
