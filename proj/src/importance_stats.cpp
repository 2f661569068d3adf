#include "kvevict/importance_stats.hpp"

#include "kvevict/errors.hpp"

namespace kvevict {

namespace {

template <typename T>
void compact(std::vector<T>& values, const std::vector<bool>& keep) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (keep[i]) {
            values[out++] = values[i];
        }
    }
    values.resize(out);
}

}  // namespace

void ImportanceStats::add_slot() {
    acc.push_back(0.0);
    acc_sq.push_back(0.0);
    count.push_back(0);
    quant_acc.push_back(0);
    last.push_back(0.0);
}

void ImportanceStats::update(std::span<const float> probs, bool skip_last) {
    const std::size_t n = size();
    if (probs.size() != n) {
        throw InvalidInput("update_stats: attention row length does not match slot count");
    }
    const std::size_t limit = (skip_last && n > 0) ? n - 1 : n;
    // Compared in float so a uniform row (1/n rounded to float) never counts.
    const float mean = static_cast<float>(1.0 / static_cast<double>(n));
    for (std::size_t i = 0; i < limit; ++i) {
        const double p = probs[i];
        acc[i] += p;
        acc_sq[i] += p * p;
        count[i] += 1;
        last[i] = p;
        if (probs[i] > mean) {
            quant_acc[i] += 1;
        }
    }
}

void ImportanceStats::retain(const std::vector<bool>& keep) {
    if (keep.size() != size()) {
        throw InvalidInput("retain: mask length does not match slot count");
    }
    compact(acc, keep);
    compact(acc_sq, keep);
    compact(count, keep);
    compact(quant_acc, keep);
    compact(last, keep);
}

}  // namespace kvevict
