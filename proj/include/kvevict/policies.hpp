#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvevict/importance_stats.hpp"
#include "kvevict/tensor_core.hpp"

namespace kvevict {

enum class Importance { Random, Recency, AAS, AQAS, LTAS, MAS };

struct ImportanceMethod {
    Importance kind = Importance::MAS;
    std::uint64_t seed = 0;  // Random only

    bool operator==(const ImportanceMethod&) const = default;
};

enum class Scope { All, LocalWindow, SinkPlusRecency, TopStd };

inline constexpr std::size_t kSinkTokens = 4;

struct ScopeMethod {
    Scope kind = Scope::All;
    // Protected set size for LocalWindow/TopStd. Unset means "half the
    // budget", filled in when the budget is resolved.
    std::optional<std::size_t> size;

    // Number of slots this scope shields from eviction once the cache is full.
    std::size_t protected_count() const;

    bool operator==(const ScopeMethod&) const = default;
};

struct Policy {
    std::string name;
    ImportanceMethod importance;
    ScopeMethod scope;

    bool operator==(const Policy&) const = default;
};

/// Identifies one eviction event; seeds Random importance so runs replay exactly.
struct EvictionContext {
    std::uint64_t seed = 0;
    std::size_t layer = 0;
    std::size_t head = 0;
    std::size_t step = 0;
};

/// The six canonical compositions: random, streamllm, scissorhands, h2o, tova, roco.
const std::vector<std::string>& canonical_policy_names();

/// Parses a canonical name or an "importance+scope" composition such as
/// "mas+window(8)", "aas+std", "ltas+all", "recency+sink". Throws ConfigError.
Policy parse_policy(std::string_view spec, std::uint64_t seed = 0);

std::string to_string(Importance kind);
std::string to_string(const ScopeMethod& scope);

/// Per-slot importance; higher means more important.
std::vector<double> importance_scores(const ImportanceStats& stats,
                                      std::span<const Position> positions,
                                      const ImportanceMethod& method,
                                      const EvictionContext& ctx = {});

/// sqrt(acc_sq/count - (acc/count)^2) per slot; 0 for count 0 and for
/// negative radicands from rounding.
std::vector<double> std_scores(const ImportanceStats& stats);

/// Slots shielded by the scope, ascending. |result| = min(protected size, n).
std::vector<std::size_t> protected_slots(const ScopeMethod& scope,
                                         std::span<const Position> positions,
                                         const ImportanceStats& stats);

/// Complement of protected_slots, ascending. Throws ConfigError when empty.
std::vector<std::size_t> eviction_scope(const ScopeMethod& scope,
                                        std::span<const Position> positions,
                                        const ImportanceStats& stats);

/// The how_many candidates with the smallest scores; equal scores evict the
/// older position first. Returned ascending by slot index.
std::vector<std::size_t> select_victims(std::span<const double> scores,
                                        std::span<const Position> positions,
                                        std::span<const std::size_t> candidates,
                                        std::size_t how_many);

/// Elementwise mean of the g query-head rows sharing one kv head.
ProbRow group_average(std::span<const ProbRow> rows);

}  // namespace kvevict
