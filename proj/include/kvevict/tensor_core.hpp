#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kvevict {

/// Dense row-major matrix of 32-bit floats.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0F) {}

    float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    void append_row(std::span<const float> values);
    // Keeps the rows whose index is flagged true, preserving order.
    void retain_rows(const std::vector<bool>& keep);

    bool operator==(const Matrix&) const = default;
};

using ProbRow = std::vector<float>;

/// Dot product with 64-bit accumulation in index order.
double dot(std::span<const float> a, std::span<const float> b);

/// Standard matrix product. Each output element accumulates in double over
/// the shared dimension in ascending order. Throws InvalidInput on a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Numerically stable softmax (max subtraction, 64-bit normalizer).
ProbRow softmax_row(std::span<const float> logits);

struct AttentionOutput {
    std::vector<float> output;
    ProbRow probs;
};

/// Scaled dot-product attention of one query over the retained keys:
/// probs = softmax(q.k_j * scale), output = sum_j probs_j v_j.
AttentionOutput attention_step(std::span<const float> query, const Matrix& keys,
                               const Matrix& values, float scale);

}  // namespace kvevict
