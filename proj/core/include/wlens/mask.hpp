#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wlens/errors.hpp"

namespace wlens {

// Boolean m x n grid, bit-packed row-major (bit index r*n + c, LSB-first
// within each 64-bit word). Serves both as the changed-coordinate mask of a
// checkpoint diff and as a selection-mask value for set algebra; the set-bit
// count is cached so density queries never rescan.
class Mask {
public:
    Mask() = default;
    Mask(std::string layer_name, std::size_t rows, std::size_t cols)
        : layer_(std::move(layer_name)),
          rows_(rows),
          cols_(cols),
          words_((rows * cols + 63) / 64, 0) {}

    const std::string& layer_name() const { return layer_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return rows_ * cols_; }
    std::size_t count() const { return count_; }
    double density() const { return size() == 0 ? 0.0 : static_cast<double>(count_) / size(); }

    bool test(std::size_t r, std::size_t c) const {
        const std::size_t i = r * cols_ + c;
        return (words_[i >> 6] >> (i & 63)) & 1u;
    }

    void set(std::size_t r, std::size_t c, bool v) {
        const std::size_t i = r * cols_ + c;
        const std::uint64_t bit = 1ull << (i & 63);
        const bool cur = words_[i >> 6] & bit;
        if (cur == v) return;
        if (v) {
            words_[i >> 6] |= bit;
            ++count_;
        } else {
            words_[i >> 6] &= ~bit;
            --count_;
        }
    }

    void set_linear(std::size_t i, bool v) { set(i / cols_, i % cols_, v); }
    bool test_linear(std::size_t i) const { return test(i / cols_, i % cols_); }

    // Sorted (row, col) coordinates of set bits.
    std::vector<std::pair<std::size_t, std::size_t>> coordinates() const;

    const std::vector<std::uint64_t>& words() const { return words_; }

    bool same_dims(const Mask& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    static Mask union_of(const Mask& a, const Mask& b);
    static Mask intersect(const Mask& a, const Mask& b);
    static Mask difference(const Mask& a, const Mask& b);  // a minus b
    static Mask complement(const Mask& a);

    friend bool operator==(const Mask& a, const Mask& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.words_ == b.words_;
    }

private:
    void recount();
    void clear_tail();

    std::string layer_;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::size_t count_ = 0;
    std::vector<std::uint64_t> words_;
};

// On-disk format: magic "WMSK", u32 version, u64 name length, name bytes,
// u64 rows, u64 cols, u64 set-bit count, then ceil(rows*cols/8) payload
// bytes (row-major bits, LSB-first within each byte).
void save_mask(const Mask& m, const std::string& path);
Mask load_mask(const std::string& path);

}  // namespace wlens
