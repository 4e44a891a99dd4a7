#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "wlens/rng.hpp"
#include "wlens/tensor.hpp"
#include "wlens/tensor_io.hpp"

namespace wlens::testing {

// Unique scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("wlens-" + tag + "-" + std::to_string(++counter) + "-" +
                 std::to_string(::getpid()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string file(const std::string& name) const { return (path_ / name).string(); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline WeightMatrix random_bf16_matrix(const std::string& name, std::size_t rows,
                                       std::size_t cols, Rng& rng, double scale = 1.0) {
    std::vector<double> vals(rows * cols);
    for (auto& v : vals) v = scale * rng.gaussian();
    return WeightMatrix::quantize_bf16(name, rows, cols, vals);
}

inline WeightMatrix random_f32_matrix(const std::string& name, std::size_t rows,
                                      std::size_t cols, Rng& rng, double scale = 1.0) {
    std::vector<float> vals(rows * cols);
    for (auto& v : vals) v = static_cast<float>(scale * rng.gaussian());
    return WeightMatrix::from_f32(name, rows, cols, std::move(vals));
}

// Bumps each selected entry by at least one ULP so the stored code is
// guaranteed to move.
inline WeightMatrix bump_entries(const WeightMatrix& w, const std::vector<std::size_t>& indices) {
    WeightMatrix out = w;
    for (const auto i : indices) {
        const Bf16 cur = Bf16::from_bits(out.codes[i]);
        double v = cur.to_double();
        const double step = ulp_bf16(cur) * (v >= 0 ? 1.0 : -1.0);
        out.codes[i] = Bf16::from_double(v + step).bits();
        if (out.codes[i] == w.codes[i])  // landed back on the same code: push further
            out.codes[i] = Bf16::from_double(v + 2.0 * step).bits();
    }
    return out;
}

}  // namespace wlens::testing
