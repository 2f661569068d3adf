#include "kvevict/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <fmt/format.h>

#include "kvevict/errors.hpp"

namespace kvevict {

double jaccard(std::span<const Position> a, std::span<const Position> b) {
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    std::size_t i = 0;
    std::size_t j = 0;
    std::size_t common = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) {
            ++common;
            ++i;
            ++j;
        } else if (a[i] < b[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return static_cast<double>(common) / static_cast<double>(a.size() + b.size() - common);
}

std::vector<Position> top_positions(const ImportanceStats& stats,
                                    std::span<const Position> positions,
                                    const ImportanceMethod& method, std::size_t k,
                                    const EvictionContext& ctx) {
    const std::size_t n = positions.size();
    if (k >= n) {
        return {positions.begin(), positions.end()};
    }
    const auto scores = importance_scores(stats, positions, method, ctx);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) {
        all[i] = i;
    }
    const auto victims = select_victims(scores, positions, all, n - k);
    std::vector<Position> kept;
    kept.reserve(k);
    std::size_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (v < victims.size() && victims[v] == i) {
            ++v;
            continue;
        }
        kept.push_back(positions[i]);
    }
    return kept;
}

AgreementCurve agreement_with_full_cache(const AttentionTrace& trace, const Policy& local,
                                         const ImportanceMethod& global_method,
                                         const BudgetSpec& budget, CacheOptions options) {
    const auto& h = trace.header;
    Replayer constrained(trace, local, budget, options);
    const Policy full_policy{"full", global_method, {Scope::All, std::nullopt}};
    Replayer full(trace, full_policy, BudgetSpec::from_rate(1.0), options);

    AgreementCurve curve;
    curve.per_step.reserve(h.steps);
    double total = 0.0;
    while (!constrained.done()) {
        const std::size_t t = constrained.step();
        constrained.advance();
        full.advance();
        double step_sum = 0.0;
        for (std::size_t l = 0; l < h.layers; ++l) {
            for (std::size_t kv = 0; kv < h.kv_heads; ++kv) {
                const auto retained = constrained.caches().head(l, kv).positions();
                const auto& reference = full.caches().head(l, kv);
                const EvictionContext ctx{options.seed, l, kv, t};
                const auto top = top_positions(reference.stats(), reference.positions(),
                                               global_method, retained.size(), ctx);
                step_sum += jaccard(retained, top);
            }
        }
        const std::size_t heads = std::size_t{h.layers} * h.kv_heads;
        curve.per_step.push_back(step_sum / static_cast<double>(heads));
        total += step_sum;
        curve.samples += heads;
    }
    curve.mean = curve.samples == 0 ? 1.0 : total / static_cast<double>(curve.samples);
    return curve;
}

ConsistencyReport consistency_experiment(const AttentionTrace& trace,
                                         std::span<const double> budgets,
                                         std::span<const ImportanceMethod> methods,
                                         std::uint64_t seed) {
    ConsistencyReport report;
    for (double rate : budgets) {
        if (!(rate > 0.0 && rate <= 1.0) ||
            std::ceil(rate * static_cast<double>(trace.header.steps) - 1e-9) < 1.0) {
            report.skipped_budgets.push_back(rate);
            continue;
        }
        for (const auto& method : methods) {
            const Policy local{to_string(method.kind), method, {Scope::LocalWindow, 0}};
            CacheOptions options;
            options.seed = seed;
            report.entries.push_back(
                {rate, to_string(method.kind),
                 agreement_with_full_cache(trace, local, method, BudgetSpec::from_rate(rate),
                                           options)});
        }
    }
    return report;
}

std::vector<StdPoint> std_trajectory(const AttentionTrace& trace, Position position,
                                     std::size_t layer, std::size_t kv_head) {
    const auto& h = trace.header;
    if (position >= h.steps || layer >= h.layers || kv_head >= h.kv_heads) {
        throw InvalidInput("std_trajectory: position, layer or head out of range");
    }
    const std::size_t group = h.query_heads / h.kv_heads;
    ImportanceStats stats;
    stats.add_slot();
    std::vector<StdPoint> out;
    std::vector<ProbRow> rows(group);
    for (std::size_t t = position; t < h.steps; ++t) {
        const auto& first = trace.record(t, layer, kv_head * group);
        const auto it = std::lower_bound(first.positions.begin(), first.positions.end(), position);
        if (it == first.positions.end() || *it != position) {
            break;
        }
        const auto slot = static_cast<std::size_t>(it - first.positions.begin());
        for (std::size_t g = 0; g < group; ++g) {
            rows[g] = trace.record(t, layer, kv_head * group + g).probs;
        }
        const float p = group_average(rows)[slot];
        stats.acc[0] += p;
        stats.acc_sq[0] += static_cast<double>(p) * p;
        stats.count[0] += 1;
        out.push_back({t, std_scores(stats)[0]});
    }
    return out;
}

double log_prob(std::span<const float> logits, TokenId target) {
    const double max = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (float z : logits) {
        total += std::exp(static_cast<double>(z) - max);
    }
    return static_cast<double>(logits[target]) - max - std::log(total);
}

PerplexityResult perplexity(const ToyModel& model, std::span<const std::vector<TokenId>> corpus,
                            const Policy& policy, const BudgetSpec& budget, CacheOptions options) {
    const auto& cfg = model.config;
    PerplexityResult result;
    for (const auto& seq : corpus) {
        if (seq.size() < 2) {
            continue;
        }
        const auto resolved = resolve_budget(budget, policy, seq.size());
        Session session(model, CacheSet(cfg.layers, cfg.kv_heads, cfg.head_dim, resolved, options));
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            const auto out = session.feed(seq[i]);
            result.nll_sum -= log_prob(out.logits, seq[i + 1]);
            ++result.targets;
        }
    }
    if (result.targets == 0) {
        throw InvalidInput("perplexity: corpus has no next-token targets");
    }
    result.perplexity = std::exp(result.nll_sum / static_cast<double>(result.targets));
    return result;
}

double token_agreement(std::span<const TokenId> a, std::span<const TokenId> b) {
    const std::size_t longest = std::max(a.size(), b.size());
    if (longest == 0) {
        return 1.0;
    }
    std::size_t same = 0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
        same += a[i] == b[i] ? 1 : 0;
    }
    return static_cast<double>(same) / static_cast<double>(longest);
}

std::vector<TokenId> random_tokens(std::uint64_t seed, std::size_t length, std::uint32_t vocab) {
    if (vocab < 2) {
        throw InvalidInput("random_tokens: vocabulary needs a non-EOS id");
    }
    std::mt19937_64 rng(seed);
    std::vector<TokenId> out(length);
    for (auto& t : out) {
        t = static_cast<TokenId>(1 + rng() % (vocab - 1));
    }
    return out;
}

AttentionTrace toy_trace(const ModelConfig& config, std::size_t length, std::uint64_t token_seed) {
    const auto model = init_model(config);
    const auto prompt = random_tokens(token_seed, length, config.vocab);
    const auto run = generate(model, prompt, 0, parse_policy("roco"), BudgetSpec::from_rate(1.0));
    return trace_from_generation(config, run, fmt::format("toy:seed={}", config.seed));
}

std::vector<TokenId> sample_sequence(const ToyModel& model, std::size_t length,
                                     std::uint64_t seed) {
    std::vector<TokenId> out;
    if (length == 0) return out;
    std::mt19937_64 rng(seed);
    const auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
    const std::uint32_t vocab = model.config.vocab;
    if (vocab < 2) {
        throw InvalidInput("sample_sequence: vocabulary needs a non-EOS id");
    }
    out.push_back(static_cast<TokenId>(1 + rng() % (vocab - 1)));
    const auto budget = resolve_budget(BudgetSpec::from_tokens(length), parse_policy("random"),
                                       length);
    Session session(model, CacheSet(model.config.layers, model.config.kv_heads,
                                    model.config.head_dim, budget));
    std::vector<double> p(vocab);
    while (out.size() < length) {
        const auto step = session.feed(out.back());
        const double peak = *std::max_element(step.logits.begin() + 1, step.logits.end());
        double total = 0.0;
        p[0] = 0.0;
        for (std::uint32_t v = 1; v < vocab; ++v) {
            p[v] = std::exp(static_cast<double>(step.logits[v]) - peak);
            total += p[v];
        }
        double u = uniform() * total;
        TokenId pick = vocab - 1;
        for (std::uint32_t v = 1; v < vocab; ++v) {
            if (u < p[v]) {
                pick = v;
                break;
            }
            u -= p[v];
        }
        out.push_back(pick);
    }
    return out;
}

namespace {

void finish_sensitivity(SweepReport& report) {
    const auto spread = [&](const std::string& scope) {
        double lo = 0.0;
        double hi = 0.0;
        bool any = false;
        for (const auto& p : report.points) {
            if (p.scope != scope) continue;
            lo = any ? std::min(lo, p.value) : p.value;
            hi = any ? std::max(hi, p.value) : p.value;
            any = true;
        }
        return hi - lo;
    };
    report.window_sensitivity = spread("window");
    report.std_sensitivity = spread("std");
}

std::vector<std::size_t> usable_sizes(std::span<const std::size_t> sizes, std::size_t budget,
                                      std::size_t block, SweepReport& report) {
    std::vector<std::size_t> ok;
    for (auto r : sizes) {
        if (r + block > budget) {
            report.skipped.push_back(r);
        } else {
            ok.push_back(r);
        }
    }
    return ok;
}

}  // namespace

SweepReport scope_sweep_replay(std::span<const AttentionTrace> traces, std::size_t budget_tokens,
                               std::size_t block, std::span<const std::size_t> scope_sizes) {
    SweepReport report;
    const ImportanceMethod mas{Importance::MAS, 0};
    for (auto r : usable_sizes(scope_sizes, budget_tokens, block, report)) {
        for (auto [kind, label] : {std::pair{Scope::LocalWindow, "window"}, {Scope::TopStd, "std"}}) {
            const Policy policy{fmt::format("mas+{}({})", label, r), mas, {kind, r}};
            double sum = 0.0;
            for (const auto& trace : traces) {
                sum += agreement_with_full_cache(trace, policy, mas,
                                                 BudgetSpec::from_tokens(budget_tokens, block))
                           .mean;
            }
            report.points.push_back({label, r, sum / static_cast<double>(traces.size())});
        }
    }
    finish_sensitivity(report);
    return report;
}

SweepReport scope_sweep_live(const ToyModel& model, std::span<const std::vector<TokenId>> corpus,
                             std::size_t budget_tokens, std::size_t block,
                             std::span<const std::size_t> scope_sizes) {
    SweepReport report;
    const ImportanceMethod mas{Importance::MAS, 0};
    for (auto r : usable_sizes(scope_sizes, budget_tokens, block, report)) {
        for (auto [kind, label] : {std::pair{Scope::LocalWindow, "window"}, {Scope::TopStd, "std"}}) {
            const Policy policy{fmt::format("mas+{}({})", label, r), mas, {kind, r}};
            const auto ppl =
                perplexity(model, corpus, policy, BudgetSpec::from_tokens(budget_tokens, block));
            report.points.push_back({label, r, ppl.perplexity});
        }
    }
    finish_sensitivity(report);
    return report;
}

std::vector<BlockSweepPoint> block_sweep(const ToyModel& model,
                                         std::span<const std::vector<TokenId>> prompts,
                                         std::size_t max_new, const Policy& policy,
                                         double budget_rate, std::span<const std::size_t> blocks) {
    std::vector<std::vector<TokenId>> reference;
    for (const auto& prompt : prompts) {
        reference.push_back(
            generate(model, prompt, max_new, policy, BudgetSpec::from_rate(1.0)).tokens);
    }
    std::vector<BlockSweepPoint> out;
    for (auto b : blocks) {
        BlockSweepPoint point;
        point.block = b;
        double agree = 0.0;
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const auto run =
                generate(model, prompts[i], max_new, policy, BudgetSpec::from_rate(budget_rate, b));
            agree += token_agreement(run.tokens, reference[i]);
            point.eviction_events += run.events.size();
            point.peak_size = std::max(point.peak_size, run.peak_size);
        }
        point.agreement = prompts.empty() ? 1.0 : agree / static_cast<double>(prompts.size());
        out.push_back(point);
    }
    return out;
}

std::string format_csv(std::span<const CsvRow> rows) {
    std::string out = "experiment,method,budget,r,b,seed,metric,value\n";
    for (const auto& r : rows) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", r.experiment, r.method, r.budget, r.r, r.b,
                           r.seed, r.metric, r.value);
    }
    return out;
}

void write_csv(const std::filesystem::path& path, std::span<const CsvRow> rows) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error(fmt::format("cannot open {} for writing", tmp.string()));
        }
        out << format_csv(rows);
        if (!out) {
            throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace kvevict
