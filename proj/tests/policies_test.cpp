#include "kvevict/policies.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "kvevict/errors.hpp"
#include "oracles.hpp"

namespace kvevict {
namespace {

ImportanceStats stats_from(const std::vector<double>& acc, const std::vector<double>& acc_sq,
                           const std::vector<std::uint32_t>& count) {
    ImportanceStats st;
    for (std::size_t i = 0; i < acc.size(); ++i) st.add_slot();
    st.acc = acc;
    st.acc_sq = acc_sq;
    st.count = count;
    return st;
}

std::vector<std::size_t> all_slots(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

// Random rows fed to both the streaming stats and a history oracle.
struct RandomCache {
    std::vector<Position> positions;
    ImportanceStats stats;
    oracle::HistoryAccumulator history;
};

RandomCache random_cache(std::mt19937_64& rng, std::size_t n, std::size_t steps) {
    RandomCache c;
    std::uniform_real_distribution<float> logit(-3, 3);
    for (std::size_t i = 0; i < n; ++i) {
        c.positions.push_back(static_cast<Position>(3 * i + 1));
        c.stats.add_slot();
        c.history.add_slot();
    }
    for (std::size_t s = 0; s < steps; ++s) {
        std::vector<float> z(n);
        for (auto& v : z) v = logit(rng);
        const auto p = softmax_row(z);
        c.stats.update(p);
        c.history.update(p);
    }
    return c;
}

TEST(ImportanceScores, MasIsDirectQuotient) {
    const auto st = stats_from({0.6}, {0.2}, {2});
    const std::vector<Position> pos{5};
    const auto s = importance_scores(st, pos, {Importance::MAS, 0});
    EXPECT_DOUBLE_EQ(s[0], 0.3);
}

TEST(ImportanceScores, RecencyOrdersByPosition) {
    const auto st = stats_from({1, 1, 1}, {1, 1, 1}, {1, 1, 1});
    const std::vector<Position> pos{3, 7, 9};
    const auto s = importance_scores(st, pos, {Importance::Recency, 0});
    EXPECT_LT(s[0], s[1]);
    EXPECT_LT(s[1], s[2]);
}

TEST(ImportanceScores, ArgminMatchesHistoryReplay) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        auto c = random_cache(rng, 32, 40);
        for (auto kind : {Importance::AAS, Importance::AQAS, Importance::LTAS, Importance::MAS}) {
            const auto scores = importance_scores(c.stats, c.positions, {kind, 0});
            const auto victim = select_victims(scores, c.positions, all_slots(32), 1)[0];
            std::size_t best = 0;
            const auto oracle_score = [&](std::size_t i) {
                switch (kind) {
                    case Importance::AAS: return c.history.acc(i);
                    case Importance::AQAS: return static_cast<double>(c.history.quant(i));
                    case Importance::LTAS: return c.history.last(i);
                    default: return c.history.mean(i);
                }
            };
            for (std::size_t i = 1; i < 32; ++i)
                if (oracle_score(i) < oracle_score(best) - 1e-12) best = i;
            EXPECT_NEAR(oracle_score(victim), oracle_score(best), 1e-9) << to_string(kind);
        }
    }
}

TEST(ImportanceScores, RandomIsSeededPerEvent) {
    const auto st = stats_from({0, 0, 0, 0}, {0, 0, 0, 0}, {1, 1, 1, 1});
    const std::vector<Position> pos{0, 1, 2, 3};
    const ImportanceMethod method{Importance::Random, 42};
    const EvictionContext ctx{0, 1, 2, 3};
    EXPECT_EQ(importance_scores(st, pos, method, ctx), importance_scores(st, pos, method, ctx));
    EXPECT_NE(importance_scores(st, pos, method, ctx),
              importance_scores(st, pos, method, {0, 1, 2, 4}));
}

TEST(StdScores, TwoSampleHistory) {
    const auto st = stats_from({0.6}, {0.2}, {2});
    EXPECT_NEAR(std_scores(st)[0], 0.1, 1e-9);
    EXPECT_NEAR(oracle::population_std({0.2, 0.4}), 0.1, 1e-12);
}

TEST(StdScores, ConstantHistoryIsZero) {
    ImportanceStats st;
    st.add_slot();
    for (int i = 0; i < 9; ++i) st.update(std::vector<float>{1.0F});
    auto st4 = stats_from({0.25 * 7}, {0.0625 * 7}, {7});
    EXPECT_EQ(std_scores(st)[0], 0.0);
    EXPECT_NEAR(std_scores(st4)[0], 0.0, 1e-9);
}

TEST(StdScores, SingleSampleIsZero) {
    const auto st = stats_from({0.37}, {0.37 * 0.37}, {1});
    EXPECT_NEAR(std_scores(st)[0], 0.0, 1e-9);
}

TEST(EvictionScope, WindowZeroKeepsEverySlot) {
    const auto st = stats_from({1, 1, 1}, {1, 1, 1}, {1, 1, 1});
    const std::vector<Position> pos{0, 1, 2};
    EXPECT_EQ(eviction_scope({Scope::LocalWindow, 0}, pos, st), all_slots(3));
}

TEST(EvictionScope, SinksProtectFirstFour) {
    ImportanceStats st;
    std::vector<Position> pos;
    for (Position p = 0; p < 8; ++p) {
        pos.push_back(p);
        st.add_slot();
    }
    st.update(std::vector<float>(8, 0.125F));
    const auto cands = eviction_scope({Scope::SinkPlusRecency, {}}, pos, st);
    EXPECT_EQ(cands, (std::vector<std::size_t>{4, 5, 6, 7}));
    const auto scores = importance_scores(st, pos, {Importance::Recency, 0});
    EXPECT_EQ(pos[select_victims(scores, pos, cands, 1)[0]], 4U);
}

TEST(EvictionScope, TopStdExcludesLargestStd) {
    // std values: 0.1, 0.0, 0.3, 0.2, 0.05, 0.15
    const std::vector<double> means{0.3, 0.2, 0.4, 0.3, 0.1, 0.25};
    const std::vector<double> stds{0.1, 0.0, 0.3, 0.2, 0.05, 0.15};
    std::vector<double> acc, acc_sq;
    for (std::size_t i = 0; i < 6; ++i) {
        acc.push_back(means[i] * 4);
        acc_sq.push_back((stds[i] * stds[i] + means[i] * means[i]) * 4);
    }
    const auto st = stats_from(acc, acc_sq, {4, 4, 4, 4, 4, 4});
    const std::vector<Position> pos{0, 1, 2, 3, 4, 5};
    const auto shielded = protected_slots({Scope::TopStd, 2}, pos, st);
    std::vector<std::size_t> order = all_slots(6);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return stds[a] > stds[b]; });
    std::vector<std::size_t> expected(order.begin(), order.begin() + 2);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(shielded, expected);
    EXPECT_EQ(eviction_scope({Scope::TopStd, 2}, pos, st), (std::vector<std::size_t>{0, 1, 4, 5}));
}

TEST(EvictionScope, TopStdTieProtectsRecent) {
    const auto st = stats_from({1, 1, 1}, {1, 1, 1}, {1, 1, 1});
    const std::vector<Position> pos{2, 5, 9};
    EXPECT_EQ(protected_slots({Scope::TopStd, 1}, pos, st), (std::vector<std::size_t>{2}));
}

TEST(EvictionScope, EmptyScopeIsConfigError) {
    const auto st = stats_from({1, 1}, {1, 1}, {1, 1});
    const std::vector<Position> pos{0, 1};
    EXPECT_THROW(eviction_scope({Scope::LocalWindow, 2}, pos, st), ConfigError);
    EXPECT_THROW(eviction_scope({Scope::TopStd, 5}, pos, st), ConfigError);
    EXPECT_THROW(eviction_scope({Scope::LocalWindow, std::nullopt}, pos, st), ConfigError);
}

TEST(EvictionScope, TopStdPartitionsSlots) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + rng() % 40;
        const std::size_t r = rng() % 50;
        auto c = random_cache(rng, n, 1 + rng() % 20);
        const auto shielded = protected_slots({Scope::TopStd, r}, c.positions, c.stats);
        EXPECT_EQ(shielded.size(), std::min(r, n));
        if (r < n) {
            auto cands = eviction_scope({Scope::TopStd, r}, c.positions, c.stats);
            std::vector<std::size_t> merged;
            std::merge(shielded.begin(), shielded.end(), cands.begin(), cands.end(),
                       std::back_inserter(merged));
            EXPECT_EQ(merged, all_slots(n));
        }
    }
}

TEST(SelectVictims, Argmin) {
    const std::vector<double> scores{0.5, 0.1, 0.9};
    const std::vector<Position> pos{0, 1, 2};
    EXPECT_EQ(select_victims(scores, pos, all_slots(3), 1), (std::vector<std::size_t>{1}));
}

TEST(SelectVictims, TiesEvictOlder) {
    const std::vector<double> scores(5, 0.2);
    const std::vector<Position> pos{4, 8, 9, 11, 30};
    EXPECT_EQ(select_victims(scores, pos, all_slots(5), 1), (std::vector<std::size_t>{0}));
    EXPECT_EQ(select_victims(scores, pos, std::vector<std::size_t>{2, 3, 4}, 2),
              (std::vector<std::size_t>{2, 3}));
}

TEST(SelectVictims, MatchesFullSortOracle) {
    std::mt19937_64 rng(8);
    std::uniform_int_distribution<int> coarse(0, 4);  // forces ties
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> scores(8);
        for (auto& s : scores) s = coarse(rng) * 0.25;
        const std::vector<Position> pos{1, 2, 3, 5, 8, 13, 21, 34};
        std::vector<std::size_t> order = all_slots(8);
        std::stable_sort(order.begin(), order.end(),
                         [&](auto a, auto b) { return scores[a] < scores[b]; });
        std::vector<std::size_t> expected(order.begin(), order.begin() + 3);
        std::sort(expected.begin(), expected.end());
        EXPECT_EQ(select_victims(scores, pos, all_slots(8), 3), expected);
    }
}

TEST(SelectVictims, ScaleInvariant) {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> scores(12);
        for (auto& s : scores) s = u(rng);
        std::vector<Position> pos(12);
        std::iota(pos.begin(), pos.end(), 0);
        auto scaled = scores;
        const double k = 0.5 + 10 * u(rng);
        for (auto& s : scaled) s *= k;
        EXPECT_EQ(select_victims(scores, pos, all_slots(12), 4),
                  select_victims(scaled, pos, all_slots(12), 4));
    }
}

TEST(SelectVictims, InsufficientCandidates) {
    const std::vector<double> scores{1, 2};
    const std::vector<Position> pos{0, 1};
    EXPECT_THROW(select_victims(scores, pos, all_slots(2), 3), ConfigError);
}

TEST(Policies, BoundsOnQuantizedAndLastScores) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
        auto c = random_cache(rng, 1 + rng() % 30, 1 + rng() % 30);
        const auto aqas = importance_scores(c.stats, c.positions, {Importance::AQAS, 0});
        const auto ltas = importance_scores(c.stats, c.positions, {Importance::LTAS, 0});
        for (std::size_t i = 0; i < c.positions.size(); ++i) {
            EXPECT_LE(aqas[i], c.stats.count[i]);
            EXPECT_GE(ltas[i], 0.0);
            EXPECT_LE(ltas[i], 1.0);
        }
    }
}

TEST(GroupAverage, SingleRowIsIdentity) {
    const std::vector<ProbRow> rows{{0.1F, 0.7F, 0.2F}};
    EXPECT_EQ(group_average(rows), rows[0]);
}

TEST(GroupAverage, SymmetricRows) {
    const std::vector<ProbRow> rows{{1, 0}, {0, 1}};
    EXPECT_EQ(group_average(rows), (ProbRow{0.5F, 0.5F}));
}

TEST(GroupAverage, MatchesDoubleMean) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> logit(-4, 4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<ProbRow> rows;
        for (int g = 0; g < 4; ++g) {
            std::vector<float> z(17);
            for (auto& v : z) v = logit(rng);
            rows.push_back(softmax_row(z));
        }
        const auto avg = group_average(rows);
        double total = 0.0;
        for (std::size_t i = 0; i < 17; ++i) {
            double m = 0.0;
            for (const auto& r : rows) m += static_cast<double>(r[i]);
            EXPECT_NEAR(avg[i], m / 4.0, 1e-7);
            total += avg[i];
        }
        EXPECT_NEAR(total, 1.0, 1e-5);
    }
}

TEST(GroupAverage, RejectsRaggedRows) {
    const std::vector<ProbRow> rows{{0.5F, 0.5F}, {1.0F}};
    EXPECT_THROW(group_average(rows), InvalidInput);
}

TEST(ParsePolicy, CanonicalBindings) {
    const auto check = [](const char* name, Importance imp, Scope scope) {
        const auto p = parse_policy(name);
        EXPECT_EQ(p.importance.kind, imp) << name;
        EXPECT_EQ(p.scope.kind, scope) << name;
    };
    check("random", Importance::Random, Scope::All);
    check("streamllm", Importance::Recency, Scope::SinkPlusRecency);
    check("scissorhands", Importance::AQAS, Scope::LocalWindow);
    check("h2o", Importance::AAS, Scope::LocalWindow);
    check("tova", Importance::LTAS, Scope::All);
    check("roco", Importance::MAS, Scope::TopStd);
    EXPECT_EQ(canonical_policy_names().size(), 6U);
}

TEST(ParsePolicy, Compositions) {
    const auto p = parse_policy("mas+window(8)");
    EXPECT_EQ(p.importance.kind, Importance::MAS);
    EXPECT_EQ(p.scope, (ScopeMethod{Scope::LocalWindow, 8}));
    EXPECT_EQ(parse_policy("AAS+std").scope, (ScopeMethod{Scope::TopStd, std::nullopt}));
    EXPECT_EQ(parse_policy("recency+sink").scope.kind, Scope::SinkPlusRecency);
    EXPECT_EQ(parse_policy("random", 9).importance.seed, 9U);
}

TEST(ParsePolicy, RejectsUnknown) {
    EXPECT_THROW(parse_policy("lru"), ConfigError);
    EXPECT_THROW(parse_policy("mas+ring(3)"), ConfigError);
    EXPECT_THROW(parse_policy("mas+window(x)"), ConfigError);
    EXPECT_THROW(parse_policy("foo+all"), ConfigError);
}

}  // namespace
}  // namespace kvevict
