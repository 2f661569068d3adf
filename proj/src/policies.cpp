#include "kvevict/policies.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "kvevict/errors.hpp"

namespace kvevict {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30U)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27U)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31U);
}

std::uint64_t event_seed(const ImportanceMethod& method, const EvictionContext& ctx) {
    std::uint64_t h = splitmix64(method.seed ^ ctx.seed);
    h = splitmix64(h ^ ctx.layer);
    h = splitmix64(h ^ ctx.head);
    return splitmix64(h ^ ctx.step);
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

Importance parse_importance(std::string_view name) {
    if (name == "random") return Importance::Random;
    if (name == "recency") return Importance::Recency;
    if (name == "aas") return Importance::AAS;
    if (name == "aqas") return Importance::AQAS;
    if (name == "ltas") return Importance::LTAS;
    if (name == "mas") return Importance::MAS;
    throw ConfigError(fmt::format("unknown importance method '{}'", name));
}

ScopeMethod parse_scope(const std::string& text) {
    std::string name = text;
    std::optional<std::size_t> size;
    if (const auto open = text.find('('); open != std::string::npos) {
        if (text.back() != ')') {
            throw ConfigError(fmt::format("malformed scope '{}'", text));
        }
        name = text.substr(0, open);
        const std::string arg = text.substr(open + 1, text.size() - open - 2);
        std::size_t value = 0;
        const auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), value);
        if (ec != std::errc{} || ptr != arg.data() + arg.size()) {
            throw ConfigError(fmt::format("scope size '{}' is not a count", arg));
        }
        size = value;
    }
    if (name == "all") return {Scope::All, std::nullopt};
    if (name == "sink") return {Scope::SinkPlusRecency, std::nullopt};
    if (name == "window") return {Scope::LocalWindow, size};
    if (name == "std" || name == "topstd") return {Scope::TopStd, size};
    throw ConfigError(fmt::format("unknown eviction scope '{}'", name));
}

}  // namespace

std::size_t ScopeMethod::protected_count() const {
    switch (kind) {
        case Scope::All:
            return 0;
        case Scope::SinkPlusRecency:
            return kSinkTokens;
        case Scope::LocalWindow:
        case Scope::TopStd:
            if (!size) {
                throw ConfigError("scope size unresolved; resolve the budget first");
            }
            return *size;
    }
    return 0;
}

const std::vector<std::string>& canonical_policy_names() {
    static const std::vector<std::string> names = {"random", "streamllm", "scissorhands",
                                                   "h2o",    "tova",      "roco"};
    return names;
}

Policy parse_policy(std::string_view spec, std::uint64_t seed) {
    const std::string name = lower(spec);
    if (name == "random") return {name, {Importance::Random, seed}, {Scope::All, {}}};
    if (name == "streamllm") return {name, {Importance::Recency, seed}, {Scope::SinkPlusRecency, {}}};
    if (name == "scissorhands") return {name, {Importance::AQAS, seed}, {Scope::LocalWindow, {}}};
    if (name == "h2o") return {name, {Importance::AAS, seed}, {Scope::LocalWindow, {}}};
    if (name == "tova") return {name, {Importance::LTAS, seed}, {Scope::All, {}}};
    if (name == "roco") return {name, {Importance::MAS, seed}, {Scope::TopStd, {}}};

    const auto plus = name.find('+');
    if (plus == std::string::npos) {
        throw ConfigError(fmt::format("unknown policy '{}'", spec));
    }
    Policy policy;
    policy.name = name;
    policy.importance = {parse_importance(name.substr(0, plus)), seed};
    policy.scope = parse_scope(name.substr(plus + 1));
    return policy;
}

std::string to_string(Importance kind) {
    switch (kind) {
        case Importance::Random: return "random";
        case Importance::Recency: return "recency";
        case Importance::AAS: return "aas";
        case Importance::AQAS: return "aqas";
        case Importance::LTAS: return "ltas";
        case Importance::MAS: return "mas";
    }
    return "?";
}

std::string to_string(const ScopeMethod& scope) {
    const auto sized = [&](const char* name) {
        return scope.size ? fmt::format("{}({})", name, *scope.size) : std::string(name);
    };
    switch (scope.kind) {
        case Scope::All: return "all";
        case Scope::SinkPlusRecency: return "sink";
        case Scope::LocalWindow: return sized("window");
        case Scope::TopStd: return sized("std");
    }
    return "?";
}

std::vector<double> importance_scores(const ImportanceStats& stats,
                                      std::span<const Position> positions,
                                      const ImportanceMethod& method,
                                      const EvictionContext& ctx) {
    const std::size_t n = stats.size();
    if (positions.size() != n) {
        throw InvalidInput("importance_scores: positions and stats disagree in length");
    }
    std::vector<double> scores(n);
    switch (method.kind) {
        case Importance::Random: {
            std::mt19937_64 rng(event_seed(method, ctx));
            for (auto& s : scores) {
                s = static_cast<double>(rng() >> 11U) * 0x1.0p-53;
            }
            break;
        }
        case Importance::Recency:
            std::copy(positions.begin(), positions.end(), scores.begin());
            break;
        case Importance::AAS:
            scores = stats.acc;
            break;
        case Importance::AQAS:
            std::copy(stats.quant_acc.begin(), stats.quant_acc.end(), scores.begin());
            break;
        case Importance::LTAS:
            scores = stats.last;
            break;
        case Importance::MAS:
            for (std::size_t i = 0; i < n; ++i) {
                scores[i] = stats.count[i] == 0 ? 0.0 : stats.acc[i] / stats.count[i];
            }
            break;
    }
    return scores;
}

std::vector<double> std_scores(const ImportanceStats& stats) {
    std::vector<double> out(stats.size(), 0.0);
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats.count[i] == 0) {
            continue;
        }
        const double c = stats.count[i];
        const double mean = stats.acc[i] / c;
        const double radicand = stats.acc_sq[i] / c - mean * mean;
        out[i] = radicand > 0.0 ? std::sqrt(radicand) : 0.0;
    }
    return out;
}

std::vector<std::size_t> protected_slots(const ScopeMethod& scope,
                                         std::span<const Position> positions,
                                         const ImportanceStats& stats) {
    const std::size_t n = positions.size();
    const std::size_t k = std::min(scope.protected_count(), n);
    std::vector<std::size_t> slots;
    switch (scope.kind) {
        case Scope::All:
            break;
        case Scope::SinkPlusRecency:
            slots.resize(k);
            std::iota(slots.begin(), slots.end(), 0);
            break;
        case Scope::LocalWindow:
            // Positions ascend with slot index, so the window is the tail.
            slots.resize(k);
            std::iota(slots.begin(), slots.end(), n - k);
            break;
        case Scope::TopStd: {
            const auto stds = std_scores(stats);
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                if (stds[a] != stds[b]) return stds[a] > stds[b];
                return positions[a] > positions[b];
            });
            slots.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
            std::sort(slots.begin(), slots.end());
            break;
        }
    }
    return slots;
}

std::vector<std::size_t> eviction_scope(const ScopeMethod& scope,
                                        std::span<const Position> positions,
                                        const ImportanceStats& stats) {
    const auto shielded = protected_slots(scope, positions, stats);
    std::vector<bool> is_protected(positions.size(), false);
    for (auto s : shielded) {
        is_protected[s] = true;
    }
    std::vector<std::size_t> candidates;
    candidates.reserve(positions.size() - shielded.size());
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (!is_protected[i]) {
            candidates.push_back(i);
        }
    }
    if (candidates.empty()) {
        throw ConfigError(fmt::format("eviction scope {} leaves no candidates among {} slots",
                                      to_string(scope), positions.size()));
    }
    return candidates;
}

std::vector<std::size_t> select_victims(std::span<const double> scores,
                                        std::span<const Position> positions,
                                        std::span<const std::size_t> candidates,
                                        std::size_t how_many) {
    if (how_many == 0 || candidates.size() < how_many) {
        throw ConfigError(fmt::format("cannot select {} victims from {} candidates", how_many,
                                      candidates.size()));
    }
    std::vector<std::size_t> order(candidates.begin(), candidates.end());
    const auto less = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] < scores[b];
        return positions[a] < positions[b];
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(how_many),
                      order.end(), less);
    order.resize(how_many);
    std::sort(order.begin(), order.end());
    return order;
}

ProbRow group_average(std::span<const ProbRow> rows) {
    if (rows.empty()) {
        throw InvalidInput("group_average: no rows");
    }
    const std::size_t n = rows.front().size();
    for (const auto& row : rows) {
        if (row.size() != n) {
            throw InvalidInput("group_average: ragged rows");
        }
    }
    if (rows.size() == 1) {
        return rows.front();
    }
    ProbRow out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (const auto& row : rows) {
            sum += row[i];
        }
        out[i] = static_cast<float>(sum / static_cast<double>(rows.size()));
    }
    return out;
}

}  // namespace kvevict
