#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wlens/bf16.hpp"
#include "wlens/errors.hpp"

namespace wlens {

enum class Dtype { bf16, f32 };

inline const char* dtype_name(Dtype d) { return d == Dtype::bf16 ? "BF16" : "F32"; }

// One named 2-D layer tensor, row-major, rows = output dim. bf16 payloads
// are kept as stored 16-bit codes so diffs stay bit-exact; f32 payloads are
// kept as-is. A 1-D tensor (bias, norm) is represented as n x 1.
struct WeightMatrix {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    Dtype dtype = Dtype::f32;
    bool widened_from_f16 = false;
    bool stored_rank1 = false;  // loaded from a rank-1 archive entry

    std::vector<std::uint16_t> codes;  // populated when dtype == bf16
    std::vector<float> values;         // populated when dtype == f32

    std::size_t size() const { return rows * cols; }

    Bf16 bf16_at(std::size_t r, std::size_t c) const {
        return Bf16::from_bits(codes[r * cols + c]);
    }

    float value_at(std::size_t r, std::size_t c) const {
        const std::size_t i = r * cols + c;
        return dtype == Dtype::bf16 ? Bf16::from_bits(codes[i]).to_float() : values[i];
    }

    double value_at_f64(std::size_t r, std::size_t c) const {
        return static_cast<double>(value_at(r, c));
    }

    static WeightMatrix from_f32(std::string name, std::size_t rows, std::size_t cols,
                                 std::vector<float> data) {
        if (data.size() != rows * cols)
            throw ShapeError("WeightMatrix: payload size does not match rows*cols");
        WeightMatrix w;
        w.name = std::move(name);
        w.rows = rows;
        w.cols = cols;
        w.dtype = Dtype::f32;
        w.values = std::move(data);
        return w;
    }

    static WeightMatrix from_bf16_codes(std::string name, std::size_t rows, std::size_t cols,
                                        std::vector<std::uint16_t> data) {
        if (data.size() != rows * cols)
            throw ShapeError("WeightMatrix: payload size does not match rows*cols");
        WeightMatrix w;
        w.name = std::move(name);
        w.rows = rows;
        w.cols = cols;
        w.dtype = Dtype::bf16;
        w.codes = std::move(data);
        return w;
    }

    // Quantizes each value round-to-nearest-even into bf16 storage.
    static WeightMatrix quantize_bf16(std::string name, std::size_t rows, std::size_t cols,
                                      const std::vector<double>& data) {
        if (data.size() != rows * cols)
            throw ShapeError("WeightMatrix: payload size does not match rows*cols");
        std::vector<std::uint16_t> codes(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) codes[i] = Bf16::from_double(data[i]).bits();
        return from_bf16_codes(std::move(name), rows, cols, std::move(codes));
    }
};

// Dense f64 copy for spectral work.
inline Eigen::MatrixXd to_f64(const WeightMatrix& w) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(w.rows), static_cast<Eigen::Index>(w.cols));
    for (std::size_t r = 0; r < w.rows; ++r)
        for (std::size_t c = 0; c < w.cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = w.value_at_f64(r, c);
    return m;
}

inline WeightMatrix from_f64(const std::string& name, const Eigen::MatrixXd& m,
                             Dtype dtype = Dtype::f32) {
    const auto rows = static_cast<std::size_t>(m.rows());
    const auto cols = static_cast<std::size_t>(m.cols());
    if (dtype == Dtype::f32) {
        std::vector<float> data(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
                data[r * cols + c] = static_cast<float>(m(static_cast<Eigen::Index>(r),
                                                          static_cast<Eigen::Index>(c)));
        return WeightMatrix::from_f32(name, rows, cols, std::move(data));
    }
    std::vector<std::uint16_t> codes(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
            codes[r * cols + c] =
                Bf16::from_double(m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)))
                    .bits();
    return WeightMatrix::from_bf16_codes(name, rows, cols, std::move(codes));
}

}  // namespace wlens
