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
#include "kvevict/trace_io.hpp"

namespace kvevict {

/// |a ∩ b| / |a ∪ b| over ascending position lists; 1.0 when both are empty.
double jaccard(std::span<const Position> a, std::span<const Position> b);

/// The k positions a method ranks highest over `stats`: everything except
/// the n - k victims select_victims would pick from the whole cache.
std::vector<Position> top_positions(const ImportanceStats& stats,
                                    std::span<const Position> positions,
                                    const ImportanceMethod& method, std::size_t k,
                                    const EvictionContext& ctx);

struct AgreementCurve {
    double mean = 0.0;             // over steps x layers x kv heads
    std::vector<double> per_step;  // mean over layers x kv heads
    std::size_t samples = 0;
};

/// Replays `trace` under `local` with `budget`, and in lockstep under a
/// never-evicting cache. At every step and head, compares the retained set
/// with the top-|retained| positions `global_method` picks from full-cache
/// statistics.
AgreementCurve agreement_with_full_cache(const AttentionTrace& trace, const Policy& local,
                                         const ImportanceMethod& global_method,
                                         const BudgetSpec& budget, CacheOptions options = {});

struct ConsistencyEntry {
    double budget = 0.0;
    std::string method;
    AgreementCurve curve;
};

struct ConsistencyReport {
    std::vector<ConsistencyEntry> entries;
    std::vector<double> skipped_budgets;  // resolved to B < 1
};

/// Jaccard consistency of each importance method against its own
/// full-cache variant, eviction scope r = 0.
ConsistencyReport consistency_experiment(const AttentionTrace& trace,
                                         std::span<const double> budgets,
                                         std::span<const ImportanceMethod> methods,
                                         std::uint64_t seed = 0);

struct StdPoint {
    std::size_t step = 0;
    double std = 0.0;
};

/// Running standard deviation of the group-averaged attention `position`
/// receives at each step from `position` onward, over the full recorded rows.
std::vector<StdPoint> std_trajectory(const AttentionTrace& trace, Position position,
                                     std::size_t layer, std::size_t kv_head);

/// log p(target) under softmax(logits), in double.
double log_prob(std::span<const float> logits, TokenId target);

struct PerplexityResult {
    double perplexity = 0.0;
    double nll_sum = 0.0;
    std::size_t targets = 0;
};

/// exp of the mean next-token negative log-likelihood with eviction active.
/// Sequences shorter than two tokens contribute no targets. Rate budgets
/// resolve against each sequence's length.
PerplexityResult perplexity(const ToyModel& model, std::span<const std::vector<TokenId>> corpus,
                            const Policy& policy, const BudgetSpec& budget,
                            CacheOptions options = {});

/// Fraction of positions where the two sequences agree, over the longer length.
double token_agreement(std::span<const TokenId> a, std::span<const TokenId> b);

/// Seeded token ids in [1, vocab).
std::vector<TokenId> random_tokens(std::uint64_t seed, std::size_t length, std::uint32_t vocab);

/// Pseudo-text from the model itself: a random first token, then ids drawn
/// from softmax(logits) with the end-of-sequence id excluded. Full cache.
std::vector<TokenId> sample_sequence(const ToyModel& model, std::size_t length,
                                     std::uint64_t seed);

/// Full-cache trace of a seeded model prefilling `length` seeded tokens.
AttentionTrace toy_trace(const ModelConfig& config, std::size_t length, std::uint64_t token_seed);

struct SweepPoint {
    std::string scope;  // "window" or "std"
    std::size_t r = 0;
    double value = 0.0;
};

struct SweepReport {
    std::vector<SweepPoint> points;
    double window_sensitivity = 0.0;  // max - min over r
    std::vector<std::size_t> skipped;
    double std_sensitivity = 0.0;
};

/// MAS with LocalWindow(r) and TopStd(r): mean Jaccard against full-cache
/// MAS over the traces (replay mode).
SweepReport scope_sweep_replay(std::span<const AttentionTrace> traces, std::size_t budget_tokens,
                               std::size_t block, std::span<const std::size_t> scope_sizes);

/// MAS with LocalWindow(r) and TopStd(r): perplexity with eviction active (live mode).
SweepReport scope_sweep_live(const ToyModel& model, std::span<const std::vector<TokenId>> corpus,
                             std::size_t budget_tokens, std::size_t block,
                             std::span<const std::size_t> scope_sizes);

struct BlockSweepPoint {
    std::size_t block = 1;
    double agreement = 0.0;         // token agreement with full-cache generation
    std::size_t eviction_events = 0;
    std::size_t peak_size = 0;
};

/// Prefill-heavy generation under one policy for several block sizes.
std::vector<BlockSweepPoint> block_sweep(const ToyModel& model,
                                         std::span<const std::vector<TokenId>> prompts,
                                         std::size_t max_new, const Policy& policy,
                                         double budget_rate, std::span<const std::size_t> blocks);

struct CsvRow {
    std::string experiment;
    std::string method;
    std::string budget;
    std::string r;
    std::string b;
    std::string seed;
    std::string metric;
    double value = 0.0;
};

/// Header "experiment,method,budget,r,b,seed,metric,value"; written atomically.
void write_csv(const std::filesystem::path& path, std::span<const CsvRow> rows);
std::string format_csv(std::span<const CsvRow> rows);

}  // namespace kvevict
