#include "kvevict/tensor_core.hpp"

#include <algorithm>
#include <cmath>

#include "kvevict/errors.hpp"

namespace kvevict {

void Matrix::append_row(std::span<const float> values) {
    if (values.size() != cols) {
        throw InvalidInput("append_row: row width does not match matrix columns");
    }
    data.insert(data.end(), values.begin(), values.end());
    ++rows;
}

void Matrix::retain_rows(const std::vector<bool>& keep) {
    if (keep.size() != rows) {
        throw InvalidInput("retain_rows: mask length does not match row count");
    }
    std::size_t out = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!keep[r]) {
            continue;
        }
        if (out != r) {
            std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                        data.begin() + static_cast<std::ptrdiff_t>(out * cols));
        }
        ++out;
    }
    rows = out;
    data.resize(rows * cols);
}

double dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw InvalidInput("matmul: inner dimensions differ");
    }
    Matrix out(a.rows, b.cols);
    std::vector<double> acc(b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double lhs = a(i, k);
            const float* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                acc[j] += lhs * static_cast<double>(brow[j]);
            }
        }
        for (std::size_t j = 0; j < b.cols; ++j) {
            out(i, j) = static_cast<float>(acc[j]);
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols, m.rows);
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
            t(c, r) = m(r, c);
        }
    }
    return t;
}

ProbRow softmax_row(std::span<const float> logits) {
    if (logits.empty()) {
        throw InvalidInput("softmax_row: empty input");
    }
    const float max = *std::max_element(logits.begin(), logits.end());
    std::vector<double> e(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        e[i] = std::exp(static_cast<double>(logits[i]) - static_cast<double>(max));
        total += e[i];
    }
    ProbRow probs(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        probs[i] = static_cast<float>(e[i] / total);
    }
    return probs;
}

AttentionOutput attention_step(std::span<const float> query, const Matrix& keys,
                               const Matrix& values, float scale) {
    if (keys.rows == 0) {
        throw InvalidInput("attention_step: empty key set");
    }
    if (keys.rows != values.rows || keys.cols != query.size() || values.cols != keys.cols) {
        throw InvalidInput("attention_step: key/value/query shapes disagree");
    }
    std::vector<float> logits(keys.rows);
    for (std::size_t j = 0; j < keys.rows; ++j) {
        logits[j] = static_cast<float>(dot(query, keys.row(j)) * static_cast<double>(scale));
    }
    AttentionOutput result;
    result.probs = softmax_row(logits);

    // Same accumulation order as matmul(probs as 1xn, values).
    std::vector<double> acc(values.cols, 0.0);
    for (std::size_t j = 0; j < values.rows; ++j) {
        const double p = result.probs[j];
        for (std::size_t c = 0; c < values.cols; ++c) {
            acc[c] += p * static_cast<double>(values(j, c));
        }
    }
    result.output.assign(acc.begin(), acc.end());
    return result;
}

}  // namespace kvevict
