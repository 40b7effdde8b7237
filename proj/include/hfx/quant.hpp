#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace hfx {

// Symmetric per-row absmax quantization of a weight matrix: integer codes in
// [-qmax, qmax] plus one f64 scale per row. A zero row gets scale 0 and
// dequantizes to exact zeros.
struct QuantTensor {
    size_t rows = 0;
    size_t cols = 0;
    int bits = 8;  // 8 or 4
    std::vector<int8_t> codes;
    std::vector<double> scales;

    static int qmax_for(int bits) { return bits == 8 ? 127 : 7; }

    static QuantTensor quantize(const std::vector<double>& data, size_t rows, size_t cols,
                                int bits) {
        QuantTensor q;
        q.rows = rows;
        q.cols = cols;
        q.bits = bits;
        q.codes.resize(rows * cols);
        q.scales.resize(rows);
        const double qmax = qmax_for(bits);
        for (size_t i = 0; i < rows; ++i) {
            double absmax = 0.0;
            for (size_t j = 0; j < cols; ++j) {
                absmax = std::max(absmax, std::abs(data[i * cols + j]));
            }
            const double scale = absmax / qmax;
            q.scales[i] = scale;
            for (size_t j = 0; j < cols; ++j) {
                if (scale == 0.0) {
                    q.codes[i * cols + j] = 0;
                } else {
                    const double c = std::round(data[i * cols + j] / scale);
                    q.codes[i * cols + j] = static_cast<int8_t>(c);
                }
            }
        }
        return q;
    }

    std::vector<double> dequantize() const {
        std::vector<double> out(rows * cols);
        for (size_t i = 0; i < rows; ++i) {
            const double scale = scales[i];
            for (size_t j = 0; j < cols; ++j) {
                out[i * cols + j] = static_cast<double>(codes[i * cols + j]) * scale;
            }
        }
        return out;
    }
};

}  // namespace hfx
