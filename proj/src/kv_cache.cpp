#include "kvevict/kv_cache.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "kvevict/errors.hpp"

namespace kvevict {

BudgetSpec BudgetSpec::from_rate(double rate, std::size_t block) {
    BudgetSpec spec;
    spec.mode = Mode::Rate;
    spec.rate = rate;
    spec.block_size = block;
    return spec;
}

BudgetSpec BudgetSpec::from_tokens(std::size_t tokens, std::size_t block) {
    BudgetSpec spec;
    spec.mode = Mode::Tokens;
    spec.tokens = tokens;
    spec.block_size = block;
    return spec;
}

ResolvedBudget resolve_budget(const BudgetSpec& spec, const Policy& policy, std::size_t length) {
    if (spec.block_size == 0) {
        throw ConfigError("block size must be at least 1");
    }
    std::size_t base = 0;
    if (spec.mode == BudgetSpec::Mode::Rate) {
        if (!(spec.rate > 0.0 && spec.rate <= 1.0)) {
            throw ConfigError(fmt::format("budget rate {} outside (0, 1]", spec.rate));
        }
        // The epsilon keeps 0.3 * 10 from rounding up to 4.
        base = static_cast<std::size_t>(
            std::ceil(spec.rate * static_cast<double>(length) - 1e-9));
    } else {
        base = spec.tokens;
    }
    if (base == 0) {
        throw ConfigError("resolved budget is zero tokens");
    }

    ResolvedBudget out;
    out.block = spec.block_size;
    out.policy = policy;
    auto& scope = out.policy.scope;
    if ((scope.kind == Scope::LocalWindow || scope.kind == Scope::TopStd) && !scope.size) {
        scope.size = spec.scope_size ? *spec.scope_size : base / 2;
    }
    const std::size_t minimum = scope.protected_count() + spec.block_size;
    if (spec.mode == BudgetSpec::Mode::Rate) {
        out.budget = std::max(base, minimum);
    } else {
        if (base < minimum) {
            throw ConfigError(fmt::format(
                "budget {} is below protected scope {} plus block {}", base,
                scope.protected_count(), spec.block_size));
        }
        out.budget = base;
    }
    return out;
}

HeadCache::HeadCache(std::size_t head_dim, std::size_t budget)
    : budget_(budget), keys_(0, head_dim), values_(0, head_dim) {
    if (budget == 0) {
        throw ConfigError("head cache budget must be positive");
    }
}

void HeadCache::append(Position pos, std::span<const float> key, std::span<const float> value) {
    if (full()) {
        throw ContractViolation(
            fmt::format("append at position {} into a full cache (B = {})", pos, budget_));
    }
    if (!positions_.empty() && pos <= positions_.back()) {
        throw ContractViolation(fmt::format("append position {} does not follow {}", pos,
                                            positions_.back()));
    }
    keys_.append_row(key);
    values_.append_row(value);
    positions_.push_back(pos);
    stats_.add_slot();
    fresh_ = true;
}

void HeadCache::update_stats(std::span<const float> probs, bool count_self) {
    stats_.update(probs, fresh_ && !count_self);
    fresh_ = false;
}

std::vector<Position> HeadCache::evict(const Policy& policy, std::size_t how_many,
                                       const EvictionContext& ctx) {
    if (how_many == 0) {
        return {};
    }
    const auto candidates = eviction_scope(policy.scope, positions_, stats_);
    if (candidates.size() < how_many) {
        throw ConfigError(fmt::format("scope {} offers {} candidates, {} evictions requested",
                                      to_string(policy.scope), candidates.size(), how_many));
    }
    const auto scores = importance_scores(stats_, positions_, policy.importance, ctx);
    const auto victims = select_victims(scores, positions_, candidates, how_many);
    std::vector<Position> evicted;
    evicted.reserve(victims.size());
    for (auto slot : victims) {
        evicted.push_back(positions_[slot]);
    }
    remove_slots(victims);
    return evicted;
}

void HeadCache::remove_slots(std::span<const std::size_t> slots) {
    std::vector<bool> keep(size(), true);
    for (auto s : slots) {
        if (s >= size()) {
            throw InvalidInput("remove_slots: slot out of range");
        }
        keep[s] = false;
    }
    if (fresh_ && !keep.back()) {
        fresh_ = false;
    }
    std::size_t out = 0;
    for (std::size_t i = 0; i < positions_.size(); ++i) {
        if (keep[i]) {
            positions_[out++] = positions_[i];
        }
    }
    positions_.resize(out);
    keys_.retain_rows(keep);
    values_.retain_rows(keep);
    stats_.retain(keep);
}

StatsOverhead statistics_overhead(std::size_t layers, std::size_t query_heads,
                                  std::size_t kv_heads, std::size_t budget) {
    return {layers * kv_heads * budget * 3, layers * query_heads * budget * 3};
}

CacheSet::CacheSet(std::size_t layers, std::size_t kv_heads, std::size_t head_dim,
                   ResolvedBudget budget, CacheOptions options)
    : layers_(layers), kv_heads_(kv_heads), budget_(std::move(budget)), options_(options) {
    if (layers == 0 || kv_heads == 0) {
        throw ConfigError("cache set needs at least one layer and one kv head");
    }
    if (budget_.budget < budget_.policy.scope.protected_count() + budget_.block) {
        throw ConfigError(fmt::format("budget {} leaves no room to evict a block of {}",
                                      budget_.budget, budget_.block));
    }
    heads_.reserve(layers * kv_heads);
    for (std::size_t i = 0; i < layers * kv_heads; ++i) {
        heads_.emplace_back(head_dim, budget_.budget);
    }
}

HeadCache& CacheSet::head(std::size_t layer, std::size_t kv_head) {
    return heads_.at(layer * kv_heads_ + kv_head);
}

const HeadCache& CacheSet::head(std::size_t layer, std::size_t kv_head) const {
    return heads_.at(layer * kv_heads_ + kv_head);
}

void CacheSet::make_room(std::size_t step) {
    for (std::size_t l = 0; l < layers_; ++l) {
        for (std::size_t h = 0; h < kv_heads_; ++h) {
            auto& cache = head(l, h);
            if (!cache.full()) {
                continue;
            }
            const EvictionContext ctx{options_.seed, l, h, step};
            auto evicted = cache.evict(budget_.policy, budget_.block, ctx);
            events_.push_back({step, l, h, std::move(evicted)});
        }
    }
}

void CacheSet::record_attention(std::size_t layer, std::size_t kv_head,
                                std::span<const ProbRow> rows) {
    auto& cache = head(layer, kv_head);
    if (rows.size() == 1) {
        cache.update_stats(rows.front(), options_.count_self_attention);
    } else {
        cache.update_stats(group_average(rows), options_.count_self_attention);
    }
}

void CacheSet::note_size() {
    for (const auto& h : heads_) {
        peak_ = std::max(peak_, h.size());
    }
}

std::string CacheSet::dump() const {
    std::string out;
    for (std::size_t l = 0; l < layers_; ++l) {
        for (std::size_t h = 0; h < kv_heads_; ++h) {
            const auto& cache = head(l, h);
            const auto& st = cache.stats();
            out += fmt::format("{} {}", l, h);
            for (std::size_t i = 0; i < cache.size(); ++i) {
                out += fmt::format(" {}:{}:{}:{}", cache.positions()[i], st.acc[i], st.acc_sq[i],
                                   st.count[i]);
            }
            out += '\n';
        }
    }
    return out;
}

}  // namespace kvevict
