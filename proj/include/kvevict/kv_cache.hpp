#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvevict/importance_stats.hpp"
#include "kvevict/policies.hpp"
#include "kvevict/tensor_core.hpp"

namespace kvevict {

/// How the per-head token budget is given before it is resolved against a
/// sequence length.
struct BudgetSpec {
    enum class Mode { Rate, Tokens };

    Mode mode = Mode::Rate;
    double rate = 1.0;
    std::size_t tokens = 0;
    std::size_t block_size = 1;
    // Overrides the default r = B/2 for sized scopes without an explicit size.
    std::optional<std::size_t> scope_size;

    static BudgetSpec from_rate(double rate, std::size_t block = 1);
    static BudgetSpec from_tokens(std::size_t tokens, std::size_t block = 1);
};

struct ResolvedBudget {
    std::size_t budget = 0;  // B
    std::size_t block = 1;   // b
    Policy policy;           // scope size filled in
};

/// Resolves B and r for a sequence of `length` tokens.
///
/// Rate mode: base = ceil(rate * length), r defaults to base / 2 and
/// B = max(base, protected + b). Token mode: B is taken as given and a
/// budget below protected + b is a ConfigError.
ResolvedBudget resolve_budget(const BudgetSpec& spec, const Policy& policy, std::size_t length);

/// Retained keys/values of one (layer, kv head) with aligned importance
/// statistics. Positions ascend with slot index.
class HeadCache {
public:
    HeadCache(std::size_t head_dim, std::size_t budget);

    std::size_t size() const { return positions_.size(); }
    std::size_t budget() const { return budget_; }
    std::size_t head_dim() const { return keys_.cols; }
    bool full() const { return size() >= budget_; }

    std::span<const Position> positions() const { return positions_; }
    const Matrix& keys() const { return keys_; }
    const Matrix& values() const { return values_; }
    const ImportanceStats& stats() const { return stats_; }

    /// Throws ContractViolation when full or when pos does not exceed the
    /// last retained position.
    void append(Position pos, std::span<const float> key, std::span<const float> value);

    /// Folds one attention row (over the current slots) into the statistics.
    /// With count_self false, the entry of a slot appended since the last
    /// update is skipped.
    void update_stats(std::span<const float> probs, bool count_self = true);

    /// Removes the how_many least important slots inside the policy's scope
    /// and returns their positions, ascending.
    std::vector<Position> evict(const Policy& policy, std::size_t how_many,
                                const EvictionContext& ctx = {});

    /// Removes the given slots (ascending, unique).
    void remove_slots(std::span<const std::size_t> slots);

private:
    std::size_t budget_;
    std::vector<Position> positions_;
    Matrix keys_;
    Matrix values_;
    ImportanceStats stats_;
    bool fresh_ = false;
};

struct EvictionEvent {
    std::size_t step = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::vector<Position> evicted;

    bool operator==(const EvictionEvent&) const = default;
};

struct CacheOptions {
    bool count_self_attention = true;
    std::uint64_t seed = 0;
};

/// Floats of statistics storage: acc, acc_sq and count per retained slot.
struct StatsOverhead {
    std::size_t per_kv_head = 0;      // L * H_kv * B * 3
    std::size_t mha_equivalent = 0;   // L * H * B * 3
};

StatsOverhead statistics_overhead(std::size_t layers, std::size_t query_heads,
                                  std::size_t kv_heads, std::size_t budget);

/// All head caches of one sequence sharing one budget and policy. Heads
/// evict independently and may retain different positions.
class CacheSet {
public:
    CacheSet(std::size_t layers, std::size_t kv_heads, std::size_t head_dim,
             ResolvedBudget budget, CacheOptions options = {});

    std::size_t layers() const { return layers_; }
    std::size_t kv_heads() const { return kv_heads_; }
    std::size_t budget() const { return budget_.budget; }
    std::size_t block() const { return budget_.block; }
    const Policy& policy() const { return budget_.policy; }
    const CacheOptions& options() const { return options_; }

    HeadCache& head(std::size_t layer, std::size_t kv_head);
    const HeadCache& head(std::size_t layer, std::size_t kv_head) const;

    /// Called before the token at `step` is appended: every full head
    /// evicts one block of b slots.
    void make_room(std::size_t step);

    /// Updates one head's statistics from the rows of the query heads that
    /// share it (group-averaged).
    void record_attention(std::size_t layer, std::size_t kv_head, std::span<const ProbRow> rows);

    const std::vector<EvictionEvent>& events() const { return events_; }
    std::size_t peak_size() const { return peak_; }
    void note_size();

    /// One line per head: "layer head pos:acc:acc_sq:count ...".
    std::string dump() const;

private:
    std::size_t layers_;
    std::size_t kv_heads_;
    ResolvedBudget budget_;
    CacheOptions options_;
    std::vector<HeadCache> heads_;
    std::vector<EvictionEvent> events_;
    std::size_t peak_ = 0;
};

}  // namespace kvevict
