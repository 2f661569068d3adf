#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kvevict {

using Position = std::uint32_t;

/// Per-slot streaming accumulators over the attention each cached token has
/// received. Slots are aligned with a HeadCache's positions.
///
/// acc/acc_sq/last back AAS, MAS, the std scope and LTAS; quant_acc counts
/// rows in which the slot received strictly more than 1/n; count is the
/// number of rows that included the slot.
struct ImportanceStats {
    std::vector<double> acc;
    std::vector<double> acc_sq;
    std::vector<std::uint32_t> count;
    std::vector<std::uint32_t> quant_acc;
    std::vector<double> last;

    std::size_t size() const { return acc.size(); }

    void add_slot();
    // Adds one attention row (one entry per slot). With skip_last, the newest
    // slot's entry is ignored; used to exclude a token's own self-attention.
    void update(std::span<const float> probs, bool skip_last = false);
    void retain(const std::vector<bool>& keep);

    bool operator==(const ImportanceStats&) const = default;
};

}  // namespace kvevict
