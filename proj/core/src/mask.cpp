#include "wlens/mask.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace wlens {

std::vector<std::pair<std::size_t, std::size_t>> Mask::coordinates() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    out.reserve(count_);
    for (std::size_t w = 0; w < words_.size(); ++w) {
        std::uint64_t word = words_[w];
        while (word) {
            const int b = std::countr_zero(word);
            const std::size_t i = w * 64 + static_cast<std::size_t>(b);
            out.emplace_back(i / cols_, i % cols_);
            word &= word - 1;
        }
    }
    return out;
}

void Mask::recount() {
    std::size_t c = 0;
    for (const auto w : words_) c += static_cast<std::size_t>(std::popcount(w));
    count_ = c;
}

void Mask::clear_tail() {
    const std::size_t used = size() & 63;
    if (used != 0 && !words_.empty()) words_.back() &= (1ull << used) - 1;
}

Mask Mask::union_of(const Mask& a, const Mask& b) {
    if (!a.same_dims(b)) throw ShapeError("mask union: dimension mismatch");
    Mask out = a;
    for (std::size_t i = 0; i < out.words_.size(); ++i) out.words_[i] |= b.words_[i];
    out.recount();
    return out;
}

Mask Mask::intersect(const Mask& a, const Mask& b) {
    if (!a.same_dims(b)) throw ShapeError("mask intersect: dimension mismatch");
    Mask out = a;
    for (std::size_t i = 0; i < out.words_.size(); ++i) out.words_[i] &= b.words_[i];
    out.recount();
    return out;
}

Mask Mask::difference(const Mask& a, const Mask& b) {
    if (!a.same_dims(b)) throw ShapeError("mask difference: dimension mismatch");
    Mask out = a;
    for (std::size_t i = 0; i < out.words_.size(); ++i) out.words_[i] &= ~b.words_[i];
    out.recount();
    return out;
}

Mask Mask::complement(const Mask& a) {
    Mask out = a;
    for (auto& w : out.words_) w = ~w;
    out.clear_tail();
    out.recount();
    return out;
}

namespace {

constexpr char kMagic[4] = {'W', 'M', 'S', 'K'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T v) {
    std::uint8_t buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<std::uint8_t>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::string& path) {
    std::uint8_t buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (in.gcount() != sizeof(T)) throw IntegrityError("truncated mask file: " + path);
    T v = 0;
    for (std::size_t i = sizeof(T); i-- > 0;) v = static_cast<T>((v << 8) | buf[i]);
    return v;
}

}  // namespace

void save_mask(const Mask& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, m.layer_name().size());
    out.write(m.layer_name().data(), static_cast<std::streamsize>(m.layer_name().size()));
    put<std::uint64_t>(out, m.rows());
    put<std::uint64_t>(out, m.cols());
    put<std::uint64_t>(out, m.count());
    const std::size_t nbytes = (m.size() + 7) / 8;
    std::vector<std::uint8_t> payload(nbytes, 0);
    const auto& words = m.words();
    for (std::size_t i = 0; i < nbytes; ++i)
        payload[i] = static_cast<std::uint8_t>(words[i / 8] >> (8 * (i % 8)));
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(nbytes));
    if (!out) throw IoError("write failed for " + path);
}

Mask load_mask(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError(path + ": not a mask file");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion)
        throw ParseError(path + ": unsupported mask version " + std::to_string(version));
    const auto name_len = get<std::uint64_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (in.gcount() != static_cast<std::streamsize>(name_len))
        throw IntegrityError("truncated mask file: " + path);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    const auto declared = get<std::uint64_t>(in, path);

    Mask m(name, rows, cols);
    const std::size_t nbytes = (m.size() + 7) / 8;
    std::vector<std::uint8_t> payload(nbytes);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(nbytes));
    if (in.gcount() != static_cast<std::streamsize>(nbytes))
        throw IntegrityError("truncated mask payload: " + path);
    for (std::size_t i = 0; i < m.size(); ++i)
        if ((payload[i / 8] >> (i % 8)) & 1u) m.set_linear(i, true);
    if (m.count() != declared)
        throw IntegrityError(path + ": header set count disagrees with payload");
    return m;
}

}  // namespace wlens
