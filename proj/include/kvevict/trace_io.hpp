#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kvevict/kv_cache.hpp"
#include "kvevict/policies.hpp"
#include "kvevict/toy_model.hpp"

namespace kvevict {

inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr double kTraceRowTolerance = 1e-4;

struct TraceHeader {
    std::uint32_t version = kTraceVersion;
    std::uint32_t layers = 0;
    std::uint32_t query_heads = 0;
    std::uint32_t kv_heads = 0;
    std::uint32_t head_dim = 0;
    std::uint32_t steps = 0;
    std::string source;

    bool operator==(const TraceHeader&) const = default;
};

/// Attention row of one query head at one step over the positions that
/// head could see.
struct TraceRecord {
    std::uint32_t step = 0;
    std::uint16_t layer = 0;
    std::uint16_t head = 0;
    std::vector<Position> positions;
    ProbRow probs;

    bool operator==(const TraceRecord&) const = default;
};

/// Records are kept in (step, layer, query head) order.
struct AttentionTrace {
    TraceHeader header;
    std::vector<TraceRecord> records;

    const TraceRecord& record(std::size_t step, std::size_t layer, std::size_t head) const {
        return records[(step * header.layers + layer) * header.query_heads + head];
    }

    bool operator==(const AttentionTrace&) const = default;
};

/// Checks ordering, coverage, ascending positions within {0..step} and row
/// sums within tolerance. Throws ParseError naming the offending record.
void validate_trace(const AttentionTrace& trace, double tolerance = kTraceRowTolerance);

/// Binary little-endian: "KVAT", u32 header length, key=value header lines,
/// then per record u32 step, u16 layer, u16 head, u32 n, n x u32 positions,
/// n x f32 probs. Written atomically.
void write_trace(const AttentionTrace& trace, const std::filesystem::path& path);
AttentionTrace read_trace(const std::filesystem::path& path,
                          double tolerance = kTraceRowTolerance);

/// Packs the attention rows of a toy-model generation into a trace.
AttentionTrace trace_from_generation(const ModelConfig& config, const GenerationResult& run,
                                     std::string source);

/// The recorded row restricted to `retained` and rescaled to sum to 1; the
/// row itself, untouched, when nothing is masked.
/// Retained positions missing from the row get zero; an all-zero
/// restriction falls back to uniform.
ProbRow mask_renormalize(const TraceRecord& record, std::span<const Position> retained);

/// Steps a cache set through a recorded trace, feeding masked rows as the
/// attention each head receives.
class Replayer {
public:
    Replayer(const AttentionTrace& trace, const Policy& policy, const BudgetSpec& budget,
             CacheOptions options = {});

    bool done() const { return step_ >= trace_->header.steps; }
    std::size_t step() const { return step_; }
    const CacheSet& caches() const { return caches_; }
    const ResolvedBudget& budget() const { return budget_; }

    void advance();

private:
    const AttentionTrace* trace_;
    ResolvedBudget budget_;
    CacheSet caches_;
    std::size_t step_ = 0;
};

struct HeadSnapshot {
    std::vector<Position> positions;
    ImportanceStats stats;

    bool operator==(const HeadSnapshot&) const = default;
};

struct ReplayResult {
    ResolvedBudget budget;
    std::size_t layers = 0;
    std::size_t kv_heads = 0;
    // [(step * layers + layer) * kv_heads + kv_head]
    std::vector<std::vector<Position>> retained;
    std::vector<EvictionEvent> events;
    std::vector<HeadSnapshot> final_stats;  // [layer * kv_heads + kv_head]

    const std::vector<Position>& retained_at(std::size_t step, std::size_t layer,
                                             std::size_t kv_head) const {
        return retained[(step * layers + layer) * kv_heads + kv_head];
    }

    bool operator==(const ReplayResult& other) const {
        return budget.budget == other.budget.budget && budget.block == other.budget.block &&
               budget.policy == other.budget.policy && layers == other.layers &&
               kv_heads == other.kv_heads && retained == other.retained &&
               events == other.events && final_stats == other.final_stats;
    }
};

ReplayResult replay(const AttentionTrace& trace, const Policy& policy, const BudgetSpec& budget,
                    CacheOptions options = {});

}  // namespace kvevict
