#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kvevict/kv_cache.hpp"
#include "kvevict/tensor_core.hpp"

namespace kvevict {

using TokenId = std::uint32_t;

inline constexpr TokenId kEndOfSequence = 0;

struct ModelConfig {
    std::uint32_t layers = 4;
    std::uint32_t query_heads = 4;
    std::uint32_t kv_heads = 4;
    std::uint32_t head_dim = 16;
    std::uint32_t vocab = 256;
    std::uint32_t max_position = 4096;
    std::uint64_t seed = 0;

    std::size_t model_dim() const { return std::size_t{query_heads} * head_dim; }
    std::size_t kv_dim() const { return std::size_t{kv_heads} * head_dim; }
    std::size_t ffn_dim() const { return 4 * model_dim(); }
    std::size_t group_size() const { return query_heads / kv_heads; }

    /// Throws ConfigError when a count is zero, head_dim is odd or
    /// kv_heads does not divide query_heads.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
    Matrix wq;    // d x d
    Matrix wk;    // d x (H_kv d')
    Matrix wv;    // d x (H_kv d')
    Matrix wo;    // d x d
    Matrix w_up;  // d x 4d
    Matrix w_down;  // 4d x d

    bool operator==(const LayerWeights&) const = default;
};

/// Pre-norm decoder-only transformer with RMS normalization, rotary
/// positions and a SiLU feed-forward. Immutable after construction.
struct ToyModel {
    ModelConfig config;
    Matrix embeddings;   // V x d
    std::vector<LayerWeights> layers;
    Matrix unembedding;  // d x V

    std::size_t parameter_count() const;

    bool operator==(const ToyModel&) const = default;
};

/// Seeded Gaussian weights with standard deviation 1/sqrt(d).
ToyModel init_model(const ModelConfig& config);

void save_model(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_model(const std::filesystem::path& path);

/// Rotates consecutive pairs of `head` by angle position * 10000^(-2i/d').
void apply_rotary(std::span<float> head, std::size_t position);

/// x / sqrt(mean(x^2) + eps), accumulated in double.
std::vector<float> rms_norm(std::span<const float> x);

struct StepOutput {
    std::vector<float> logits;
    std::vector<ProbRow> attention;              // [layer * H + query_head]
    std::vector<std::vector<Position>> retained;  // [layer * H_kv + kv_head]

    const ProbRow& row(std::size_t layer, std::size_t query_head, std::size_t query_heads) const {
        return attention[layer * query_heads + query_head];
    }
};

/// Runs one token through the model. Appends its key/value to every head
/// cache (which must have room) and attends over the retained keys. Does
/// not touch statistics or evict.
StepOutput forward_step(const ToyModel& model, TokenId token, Position position,
                        CacheSet& caches);

/// Lowest token id among the maximal logits.
TokenId greedy_token(std::span<const float> logits);

/// One sequence under constrained inference: each fed token evicts (when a
/// head is full), runs forward and updates statistics with group-averaged
/// attention.
class Session {
public:
    Session(const ToyModel& model, CacheSet caches);

    StepOutput feed(TokenId token);

    Position position() const { return position_; }
    const CacheSet& caches() const { return caches_; }

private:
    const ToyModel* model_;
    CacheSet caches_;
    Position position_ = 0;
};

struct GenerationResult {
    std::vector<TokenId> tokens;  // prompt followed by generated ids
    std::vector<StepOutput> steps;
    ResolvedBudget budget;
    std::size_t peak_size = 0;
    std::vector<EvictionEvent> events;
};

/// Prefills the prompt token by token, then greedily decodes up to max_new
/// tokens or until the end-of-sequence id. Rate budgets resolve against
/// prompt length + max_new.
GenerationResult generate(const ToyModel& model, std::span<const TokenId> prompt,
                          std::size_t max_new, const Policy& policy, const BudgetSpec& budget,
                          CacheOptions options = {});

}  // namespace kvevict
