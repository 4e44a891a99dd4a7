#include "wlens/tensor_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace wlens {

namespace {

using ordered_json = nlohmann::ordered_json;

std::uint64_t read_le_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

void write_le_u64(std::ofstream& out, std::uint64_t v) {
    std::uint8_t buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), 8);
}

// 0 for dtypes this tool cannot decode; such tensors stay listed in the
// index but refuse to load.
std::size_t dtype_byte_width(const std::string& dtype) {
    if (dtype == "BF16" || dtype == "F16") return 2;
    if (dtype == "F32") return 4;
    return 0;
}

// IEEE binary16 -> binary32, exact.
float f16_to_f32(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h >> 15) << 31;
    std::uint32_t exp = (h >> 10) & 0x1F;
    std::uint32_t mant = h & 0x3FF;
    std::uint32_t out;
    if (exp == 0x1F) {
        out = sign | 0x7F800000u | (mant << 13);
    } else if (exp == 0) {
        if (mant == 0) {
            out = sign;
        } else {
            exp = 127 - 15 + 1;
            while ((mant & 0x400) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3FF;
            out = sign | (exp << 23) | (mant << 13);
        }
    } else {
        out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
    }
    float f;
    std::memcpy(&f, &out, sizeof(f));
    return f;
}

std::vector<std::uint8_t> read_range(const std::string& path, std::uint64_t offset,
                                     std::uint64_t length) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    in.seekg(static_cast<std::streamoff>(offset));
    std::vector<std::uint8_t> buf(length);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(length));
    if (in.gcount() != static_cast<std::streamsize>(length))
        throw IntegrityError("short read in " + path);
    return buf;
}

}  // namespace

const TensorEntry& CheckpointHandle::entry(const std::string& name) const {
    const auto it = index.find(name);
    if (it == index.end()) throw NotFound("no tensor named '" + name + "' in " + path);
    return entries[it->second];
}

bool glob_match(const std::string& pattern, const std::string& text) {
    std::size_t p = 0, t = 0, star = std::string::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

CheckpointHandle open_checkpoint(const std::string& path) {
    std::error_code ec;
    const auto fsize = std::filesystem::file_size(path, ec);
    if (ec) throw IoError("cannot stat " + path + ": " + ec.message());
    if (fsize < 8) throw ParseError(path + ": too small to hold an archive header");

    const auto head = read_range(path, 0, 8);
    const std::uint64_t header_bytes = read_le_u64(head.data());
    if (header_bytes == 0 || header_bytes > fsize - 8)
        throw ParseError(path + ": declared header length is out of range");

    const auto header_raw = read_range(path, 8, header_bytes);
    ordered_json meta;
    try {
        meta = ordered_json::parse(header_raw.begin(), header_raw.end());
    } catch (const std::exception& e) {
        throw ParseError(path + ": malformed header JSON: " + e.what());
    }
    if (!meta.is_object()) throw ParseError(path + ": header is not a JSON object");

    CheckpointHandle h;
    h.path = path;
    h.header_bytes = header_bytes;
    h.payload_offset = 8 + header_bytes;
    h.file_size = fsize;

    const std::uint64_t payload_size = fsize - h.payload_offset;
    for (const auto& [name, desc] : meta.items()) {
        if (name == "__metadata__") continue;
        TensorEntry e;
        e.name = name;
        try {
            e.dtype = desc.at("dtype").get<std::string>();
            for (const auto& d : desc.at("shape")) e.shape.push_back(d.get<std::size_t>());
            const auto& off = desc.at("data_offsets");
            e.begin = off.at(0).get<std::uint64_t>();
            e.end = off.at(1).get<std::uint64_t>();
        } catch (const std::exception& ex) {
            throw ParseError(path + ": bad descriptor for tensor '" + name + "': " + ex.what());
        }
        if (e.rank() < 1 || e.rank() > 2)
            throw ParseError(path + ": tensor '" + name + "' has unsupported rank " +
                             std::to_string(e.rank()));
        if (e.end < e.begin || e.end > payload_size)
            throw IntegrityError(path + ": tensor '" + name + "' range extends past end of file");
        const std::size_t width = dtype_byte_width(e.dtype);
        if (width != 0 && e.end - e.begin != e.numel() * width)
            throw IntegrityError(path + ": tensor '" + name +
                                 "' payload size disagrees with shape");
        h.index.emplace(e.name, h.entries.size());
        h.total_params += e.numel();
        h.entries.push_back(std::move(e));
    }
    return h;
}

std::vector<std::string> list_layers(const CheckpointHandle& h, const LayerFilter& f) {
    std::vector<std::string> out;
    for (const auto& e : h.entries) {
        if (e.rank() < f.min_rank) continue;
        bool included = false;
        for (const auto& pat : f.include)
            if (glob_match(pat, e.name)) {
                included = true;
                break;
            }
        if (!included) continue;
        bool excluded = false;
        for (const auto& pat : f.exclude)
            if (glob_match(pat, e.name)) {
                excluded = true;
                break;
            }
        if (!excluded) out.push_back(e.name);
    }
    return out;
}

WeightMatrix load_matrix(const CheckpointHandle& h, const std::string& layer, bool allow_rank1) {
    const TensorEntry& e = h.entry(layer);
    if (e.rank() == 1 && !allow_rank1)
        throw ShapeError("tensor '" + layer + "' is rank-1; pass allow_rank1 to load it");

    const std::size_t rows = e.shape[0];
    const std::size_t cols = e.rank() == 2 ? e.shape[1] : 1;
    const auto raw = read_raw(h, layer);

    WeightMatrix w;
    if (e.dtype == "BF16") {
        std::vector<std::uint16_t> codes(e.numel());
        std::memcpy(codes.data(), raw.data(), raw.size());
        w = WeightMatrix::from_bf16_codes(layer, rows, cols, std::move(codes));
    } else if (e.dtype == "F32") {
        std::vector<float> vals(e.numel());
        std::memcpy(vals.data(), raw.data(), raw.size());
        w = WeightMatrix::from_f32(layer, rows, cols, std::move(vals));
    } else if (e.dtype == "F16") {
        std::vector<std::uint16_t> half(e.numel());
        std::memcpy(half.data(), raw.data(), raw.size());
        std::vector<float> vals(e.numel());
        for (std::size_t i = 0; i < half.size(); ++i) vals[i] = f16_to_f32(half[i]);
        w = WeightMatrix::from_f32(layer, rows, cols, std::move(vals));
        w.widened_from_f16 = true;
    } else {
        throw UnsupportedDtype("tensor '" + layer + "' has unsupported dtype " + e.dtype);
    }
    w.stored_rank1 = e.rank() == 1;
    return w;
}

std::vector<std::uint8_t> read_raw(const CheckpointHandle& h, const std::string& layer) {
    const TensorEntry& e = h.entry(layer);
    return read_range(h.path, h.payload_offset + e.begin, e.end - e.begin);
}

void ArchiveWriter::add(const WeightMatrix& w) {
    Pending p;
    p.name = w.name;
    if (w.stored_rank1 && w.cols == 1)
        p.shape = {w.rows};
    else
        p.shape = {w.rows, w.cols};
    if (w.dtype == Dtype::bf16) {
        p.dtype = "BF16";
        p.payload.resize(w.codes.size() * 2);
        std::memcpy(p.payload.data(), w.codes.data(), p.payload.size());
    } else {
        p.dtype = "F32";
        p.payload.resize(w.values.size() * 4);
        std::memcpy(p.payload.data(), w.values.data(), p.payload.size());
    }
    pending_.push_back(std::move(p));
}

void ArchiveWriter::add_raw(const std::string& name, const std::string& dtype,
                            const std::vector<std::size_t>& shape,
                            std::vector<std::uint8_t> payload) {
    pending_.push_back(Pending{name, dtype, shape, std::move(payload)});
}

void ArchiveWriter::write(const std::string& path) const {
    ordered_json meta = ordered_json::object();
    std::uint64_t offset = 0;
    for (const auto& p : pending_) {
        ordered_json desc;
        desc["dtype"] = p.dtype;
        desc["shape"] = p.shape;
        desc["data_offsets"] = {offset, offset + p.payload.size()};
        meta[p.name] = std::move(desc);
        offset += p.payload.size();
    }
    const std::string header = meta.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    write_le_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& p : pending_)
        out.write(reinterpret_cast<const char*>(p.payload.data()),
                  static_cast<std::streamsize>(p.payload.size()));
    if (!out) throw IoError("write failed for " + path);
}

void write_checkpoint(const std::string& path, const std::vector<WeightMatrix>& tensors) {
    ArchiveWriter w;
    for (const auto& t : tensors) w.add(t);
    w.write(path);
}

}  // namespace wlens
