// kvevict: toy-model generation, trace replay and the eviction experiments.
// Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>

#include "kvevict/analysis.hpp"
#include "kvevict/errors.hpp"
#include "kvevict/kv_cache.hpp"
#include "kvevict/policies.hpp"
#include "kvevict/toy_model.hpp"
#include "kvevict/trace_io.hpp"

namespace fs = std::filesystem;
using namespace kvevict;

namespace {

struct BudgetFlags {
    std::optional<double> rate;
    std::optional<std::size_t> tokens;
    std::optional<std::size_t> window;
    std::size_t block = 1;
};

void add_budget_flags(CLI::App* cmd, BudgetFlags& f, bool with_tokens = true) {
    auto* rate = cmd->add_option("--budget-rate", f.rate, "budget as a fraction of sequence length");
    if (with_tokens) {
        auto* tokens = cmd->add_option("--budget-tokens", f.tokens, "budget B in tokens per head");
        rate->excludes(tokens);
    }
    cmd->add_option("--window", f.window, "scope size r (default B/2)");
    cmd->add_option("--block", f.block, "eviction block size b")->check(CLI::PositiveNumber);
}

BudgetSpec to_spec(const BudgetFlags& f, double default_rate) {
    BudgetSpec spec = f.tokens ? BudgetSpec::from_tokens(*f.tokens, f.block)
                               : BudgetSpec::from_rate(f.rate.value_or(default_rate), f.block);
    spec.scope_size = f.window;
    return spec;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    const char* env = std::getenv("KVEVICT_SEED");
    if (env == nullptr || *env == '\0') return 0;
    try {
        std::size_t used = 0;
        const auto v = std::stoull(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument(env);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("KVEVICT_SEED is not an unsigned integer: '{}'", env));
    }
}

std::vector<TokenId> parse_tokens(const std::string& text, const std::string& where) {
    std::istringstream in(text);
    std::vector<TokenId> out;
    std::string word;
    while (in >> word) {
        std::size_t used = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(word, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != word.size() || v > UINT32_MAX) {
            throw ConfigError(fmt::format("{}: '{}' is not a token id", where, word));
        }
        out.push_back(static_cast<TokenId>(v));
    }
    return out;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(fmt::format("cannot read {}", path.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// One sequence per non-empty line.
std::vector<std::vector<TokenId>> read_corpus(const fs::path& path) {
    std::istringstream in(slurp(path));
    std::vector<std::vector<TokenId>> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        auto seq = parse_tokens(line, fmt::format("{}:{}", path.string(), n));
        if (!seq.empty()) out.push_back(std::move(seq));
    }
    if (out.empty()) throw ConfigError(fmt::format("{} holds no sequences", path.string()));
    return out;
}

std::vector<std::vector<TokenId>> sampled_corpus(const ToyModel& model, std::size_t count,
                                                 std::size_t length, std::uint64_t seed) {
    std::vector<std::vector<TokenId>> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(sample_sequence(model, length, seed + i));
    return out;
}

std::string join_ids(std::span<const TokenId> ids) {
    return fmt::format("{}", fmt::join(ids, " "));
}

std::string num(double v) { return fmt::format("{}", v); }

std::vector<AttentionTrace> load_traces(const std::vector<std::string>& paths) {
    std::vector<AttentionTrace> out;
    for (const auto& p : paths) out.push_back(read_trace(p));
    return out;
}

// ---- init-model ----

struct InitArgs {
    ModelConfig config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_init_model(InitArgs& a) {
    a.config.seed = resolve_seed(a.seed);
    const auto model = init_model(a.config);
    save_model(model, a.out);
    fmt::print("wrote {} ({} parameters)\n", a.out, model.parameter_count());
    return 0;
}

// ---- generate ----

struct GenerateArgs {
    std::string model;
    std::string prompt;
    std::optional<std::string> text;
    std::size_t max_new = 32;
    std::string policy = "roco";
    BudgetFlags budget;
    std::optional<std::uint64_t> seed;
    bool no_evict = false;
    bool no_self = false;
    std::string trace;
    bool report = false;
};

int cmd_generate(GenerateArgs& a) {
    const auto model = load_model(a.model);
    std::vector<TokenId> prompt;
    if (a.text) {
        if (model.config.vocab < 256) {
            throw ConfigError("--text maps bytes to ids and needs a vocabulary of at least 256");
        }
        for (unsigned char c : *a.text) prompt.push_back(c);
    } else {
        prompt = parse_tokens(slurp(a.prompt), a.prompt);
    }
    if (prompt.empty()) throw ConfigError("prompt is empty");

    const auto seed = resolve_seed(a.seed);
    const auto policy = parse_policy(a.policy, seed);
    BudgetSpec spec = a.no_evict ? BudgetSpec::from_rate(1.0, a.budget.block) : to_spec(a.budget, 0.5);
    if (!a.no_evict) spec.scope_size = a.budget.window;
    CacheOptions options;
    options.seed = seed;
    options.count_self_attention = !a.no_self;

    const auto run = generate(model, prompt, a.max_new, policy, spec, options);
    fmt::print("{}\n", join_ids(std::span(run.tokens).subspan(prompt.size())));

    if (!a.trace.empty()) {
        write_trace(trace_from_generation(model.config, run, fmt::format("kvevict:{}", a.model)),
                    a.trace);
    }
    if (a.report) {
        std::size_t evicted = 0;
        for (const auto& e : run.events) evicted += e.evicted.size();
        fmt::print("policy {}\n", run.budget.policy.name);
        fmt::print("scope {}\n", to_string(run.budget.policy.scope));
        fmt::print("budget {}\n", run.budget.budget);
        fmt::print("block {}\n", run.budget.block);
        fmt::print("steps {}\n", run.steps.size());
        fmt::print("eviction_events {}\n", run.events.size());
        fmt::print("evicted_tokens {}\n", evicted);
        fmt::print("peak_size {}\n", run.peak_size);
        const auto& c = model.config;
        for (std::size_t l = 0; l < c.layers; ++l) {
            for (std::size_t h = 0; h < c.kv_heads; ++h) {
                std::size_t peak = 0;
                for (const auto& s : run.steps) {
                    peak = std::max(peak, s.retained[l * c.kv_heads + h].size());
                }
                fmt::print("head_peak {} {} {}\n", l, h, peak);
            }
        }
    }
    return 0;
}

// ---- replay ----

struct ReplayArgs {
    std::string trace;
    std::string policy = "roco";
    BudgetFlags budget;
    std::optional<std::uint64_t> seed;
    bool no_self = false;
    std::string out;
};

int cmd_replay(ReplayArgs& a) {
    const auto trace = read_trace(a.trace);
    const auto seed = resolve_seed(a.seed);
    CacheOptions options;
    options.seed = seed;
    options.count_self_attention = !a.no_self;
    const auto policy = parse_policy(a.policy, seed);
    const auto spec = to_spec(a.budget, 0.5);
    const auto result = replay(trace, policy, spec, options);

    std::size_t evicted = 0;
    for (const auto& e : result.events) evicted += e.evicted.size();
    fmt::print("policy {} scope {} budget {} block {}\n", result.budget.policy.name,
               to_string(result.budget.policy.scope), result.budget.budget, result.budget.block);
    fmt::print("steps {} eviction_events {} evicted_tokens {}\n", trace.header.steps,
               result.events.size(), evicted);
    for (std::size_t l = 0; l < result.layers; ++l) {
        for (std::size_t h = 0; h < result.kv_heads; ++h) {
            const auto& snap = result.final_stats[l * result.kv_heads + h];
            fmt::print("final {} {} {}\n", l, h, fmt::join(snap.positions, " "));
        }
    }

    if (!a.out.empty()) {
        std::vector<CsvRow> rows;
        const auto r = result.budget.policy.scope.size ? num(*result.budget.policy.scope.size)
                                                       : std::string();
        for (std::size_t s = 0; s < trace.header.steps; ++s) {
            double mean = 0.0;
            for (std::size_t l = 0; l < result.layers; ++l) {
                for (std::size_t h = 0; h < result.kv_heads; ++h) {
                    mean += static_cast<double>(result.retained_at(s, l, h).size());
                }
            }
            mean /= static_cast<double>(result.layers * result.kv_heads);
            rows.push_back({"replay", result.budget.policy.name, num(result.budget.budget), r,
                            num(result.budget.block), num(seed), fmt::format("retained@{}", s),
                            mean});
        }
        write_csv(a.out, rows);
    }
    return 0;
}

// ---- consistency ----

struct ConsistencyArgs {
    std::vector<std::string> traces;
    std::size_t toy = 0;
    std::size_t length = 128;
    std::vector<double> budgets{0.3, 0.4, 0.5, 0.6};
    std::vector<std::string> methods{"aas", "aqas", "ltas", "mas", "random"};
    std::optional<std::uint64_t> seed;
    std::string out = "fig2.csv";
};

int cmd_consistency(ConsistencyArgs& a) {
    if (a.traces.empty() && a.toy == 0) {
        throw ConfigError("consistency needs --trace files or --toy N");
    }
    const auto seed = resolve_seed(a.seed);
    std::vector<ImportanceMethod> methods;
    for (const auto& m : a.methods) {
        methods.push_back(parse_policy(m + "+all", seed).importance);
    }

    // mean over traces of each trace's mean, keyed by (budget, method)
    std::vector<double> sums(a.budgets.size() * methods.size(), 0.0);
    std::vector<std::size_t> counts(sums.size(), 0);
    const auto run_one = [&](const AttentionTrace& trace) {
        const auto report = consistency_experiment(trace, a.budgets, methods, seed);
        for (const auto& e : report.entries) {
            for (std::size_t b = 0; b < a.budgets.size(); ++b) {
                if (a.budgets[b] != e.budget) continue;
                for (std::size_t m = 0; m < methods.size(); ++m) {
                    if (to_string(methods[m].kind) != e.method) continue;
                    sums[b * methods.size() + m] += e.curve.mean;
                    ++counts[b * methods.size() + m];
                }
            }
        }
        for (double b : report.skipped_budgets) {
            fmt::print(stderr, "warning: budget {} resolves to zero tokens, skipped\n", b);
        }
    };
    for (const auto& p : a.traces) run_one(read_trace(p));
    for (std::size_t i = 0; i < a.toy; ++i) {
        ModelConfig c;
        c.seed = seed + i;
        run_one(toy_trace(c, a.length, 1000 + seed + i));
    }

    std::vector<CsvRow> rows;
    fmt::print("{:>8} {:>8} {:>10}\n", "budget", "method", "jaccard");
    for (std::size_t b = 0; b < a.budgets.size(); ++b) {
        for (std::size_t m = 0; m < methods.size(); ++m) {
            const auto k = b * methods.size() + m;
            if (counts[k] == 0) continue;
            const double mean = sums[k] / static_cast<double>(counts[k]);
            rows.push_back({"consistency", to_string(methods[m].kind), num(a.budgets[b]), "0", "1",
                            num(seed), "jaccard", mean});
            fmt::print("{:>8} {:>8} {:>10.4f}\n", a.budgets[b], to_string(methods[m].kind), mean);
        }
    }
    write_csv(a.out, rows);
    return 0;
}

// ---- ppl ----

struct PplArgs {
    std::string model;
    std::string corpus;
    std::size_t sequences = 4;
    std::size_t length = 128;
    std::vector<double> budgets{0.15, 0.2, 0.3, 0.5};
    std::vector<std::string> policies{"random", "streamllm", "scissorhands", "h2o", "tova", "roco"};
    BudgetFlags budget;
    std::optional<std::uint64_t> seed;
    std::string out = "fig5.csv";
};

int cmd_ppl(PplArgs& a) {
    const auto model = load_model(a.model);
    const auto seed = resolve_seed(a.seed);
    const auto corpus = a.corpus.empty() ? sampled_corpus(model, a.sequences, a.length, seed)
                                         : read_corpus(a.corpus);
    std::vector<Policy> policies;
    for (const auto& p : a.policies) policies.push_back(parse_policy(p, seed));

    CacheOptions options;
    options.seed = seed;
    const auto dense = perplexity(model, corpus, parse_policy("random", seed),
                                  BudgetSpec::from_rate(1.0), options);
    fmt::print("full-cache perplexity {:.6f} over {} targets\n", dense.perplexity, dense.targets);

    std::vector<CsvRow> rows;
    const auto r = a.budget.window ? num(*a.budget.window) : std::string("B/2");
    fmt::print("{:>8} {:>14} {:>12}\n", "budget", "policy", "perplexity");
    for (double rate : a.budgets) {
        for (const auto& policy : policies) {
            BudgetSpec spec = BudgetSpec::from_rate(rate, a.budget.block);
            spec.scope_size = a.budget.window;
            const auto result = perplexity(model, corpus, policy, spec, options);
            rows.push_back({"ppl", policy.name, num(rate), r, num(a.budget.block), num(seed),
                            "perplexity", result.perplexity});
            fmt::print("{:>8} {:>14} {:>12.6f}\n", rate, policy.name, result.perplexity);
        }
    }
    write_csv(a.out, rows);
    return 0;
}

// ---- scope-sweep ----

struct SweepArgs {
    std::vector<std::string> traces;
    std::string model;
    std::string corpus;
    std::size_t sequences = 4;
    std::size_t length = 128;
    std::size_t budget_tokens = 32;
    std::size_t block = 1;
    std::vector<std::size_t> scopes{4, 8, 16};
    std::optional<std::uint64_t> seed;
    std::string out = "fig4.csv";
};

int cmd_scope_sweep(SweepArgs& a) {
    if (a.traces.empty() == a.model.empty()) {
        throw ConfigError("scope-sweep needs either --trace files (replay) or --model (live)");
    }
    const auto seed = resolve_seed(a.seed);
    SweepReport report;
    std::string metric;
    if (!a.traces.empty()) {
        const auto traces = load_traces(a.traces);
        report = scope_sweep_replay(traces, a.budget_tokens, a.block, a.scopes);
        metric = "jaccard";
    } else {
        const auto model = load_model(a.model);
        const auto corpus = a.corpus.empty() ? sampled_corpus(model, a.sequences, a.length, seed)
                                             : read_corpus(a.corpus);
        report = scope_sweep_live(model, corpus, a.budget_tokens, a.block, a.scopes);
        metric = "perplexity";
    }
    for (auto r : report.skipped) {
        fmt::print(stderr, "warning: r = {} leaves no room for a block of {} in B = {}, skipped\n",
                   r, a.block, a.budget_tokens);
    }

    std::vector<CsvRow> rows;
    const auto B = num(a.budget_tokens);
    const auto b = num(a.block);
    fmt::print("{:>8} {:>6} {:>12}\n", "scope", "r", metric);
    for (const auto& p : report.points) {
        rows.push_back({"scope_sweep", "mas+" + p.scope, B, num(p.r), b, num(seed), metric, p.value});
        fmt::print("{:>8} {:>6} {:>12.6f}\n", p.scope, p.r, p.value);
    }
    rows.push_back({"scope_sweep", "mas+window", B, "", b, num(seed), "sensitivity",
                    report.window_sensitivity});
    rows.push_back({"scope_sweep", "mas+std", B, "", b, num(seed), "sensitivity",
                    report.std_sensitivity});
    fmt::print("sensitivity window {:.6f} std {:.6f}\n", report.window_sensitivity,
               report.std_sensitivity);
    write_csv(a.out, rows);
    return 0;
}

// ---- std ----

struct StdArgs {
    std::string trace;
    std::size_t position = 0;
    std::size_t layer = 0;
    std::size_t kv_head = 0;
    std::string out = "fig3.csv";
};

int cmd_std(StdArgs& a) {
    const auto trace = read_trace(a.trace);
    if (a.position >= trace.header.steps) {
        throw ConfigError(fmt::format("position {} is beyond the trace ({} steps)", a.position,
                                      trace.header.steps));
    }
    if (a.layer >= trace.header.layers || a.kv_head >= trace.header.kv_heads) {
        throw ConfigError(fmt::format("layer {} kv head {} outside the trace", a.layer, a.kv_head));
    }
    const auto points = std_trajectory(trace, static_cast<Position>(a.position), a.layer, a.kv_head);
    std::vector<CsvRow> rows;
    const auto method = fmt::format("pos{}:l{}:kv{}", a.position, a.layer, a.kv_head);
    for (const auto& p : points) {
        rows.push_back({"std", method, "1", "", "", "", fmt::format("std@{}", p.step), p.std});
    }
    write_csv(a.out, rows);
    fmt::print("{} steps written to {}\n", points.size(), a.out);
    return 0;
}

// ---- block-sweep ----

struct BlockArgs {
    std::string model;
    std::string corpus;
    std::size_t sequences = 4;
    std::size_t length = 64;
    std::size_t max_new = 32;
    std::string policy = "roco";
    double rate = 0.5;
    std::vector<std::size_t> blocks{1, 2, 4, 8, 16};
    std::optional<std::uint64_t> seed;
    std::string out = "blocks.csv";
};

int cmd_block_sweep(BlockArgs& a) {
    const auto model = load_model(a.model);
    const auto seed = resolve_seed(a.seed);
    const auto prompts = a.corpus.empty() ? sampled_corpus(model, a.sequences, a.length, seed)
                                          : read_corpus(a.corpus);
    const auto policy = parse_policy(a.policy, seed);
    const auto points = block_sweep(model, prompts, a.max_new, policy, a.rate, a.blocks);
    std::vector<CsvRow> rows;
    fmt::print("{:>6} {:>10} {:>8} {:>6}\n", "block", "agreement", "events", "peak");
    for (const auto& p : points) {
        const auto b = num(p.block);
        rows.push_back({"block_sweep", policy.name, num(a.rate), "", b, num(seed), "agreement",
                        p.agreement});
        rows.push_back({"block_sweep", policy.name, num(a.rate), "", b, num(seed),
                        "eviction_events", static_cast<double>(p.eviction_events)});
        fmt::print("{:>6} {:>10.4f} {:>8} {:>6}\n", p.block, p.agreement, p.eviction_events,
                   p.peak_size);
    }
    write_csv(a.out, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kvevict: key-value cache eviction on a toy transformer"};
    app.require_subcommand(1);

    InitArgs init;
    auto* c_init = app.add_subcommand("init-model", "write a seeded toy model");
    c_init->add_option("--out", init.out, "model file")->required();
    c_init->add_option("--layers", init.config.layers);
    c_init->add_option("--heads", init.config.query_heads);
    c_init->add_option("--kv-heads", init.config.kv_heads);
    c_init->add_option("--head-dim", init.config.head_dim);
    c_init->add_option("--vocab", init.config.vocab);
    c_init->add_option("--max-position", init.config.max_position);
    c_init->add_option("--seed", init.seed);

    GenerateArgs gen;
    auto* c_gen = app.add_subcommand("generate", "greedy generation under a cache budget");
    c_gen->add_option("--model", gen.model)->required()->check(CLI::ExistingFile);
    auto* prompt = c_gen->add_option("--prompt", gen.prompt, "file of whitespace-separated ids")
                       ->check(CLI::ExistingFile);
    auto* text = c_gen->add_option("--text", gen.text, "prompt text, one id per byte");
    prompt->excludes(text);
    c_gen->add_option("--max-new", gen.max_new);
    c_gen->add_option("--policy", gen.policy);
    add_budget_flags(c_gen, gen.budget);
    c_gen->add_option("--seed", gen.seed);
    auto* no_evict = c_gen->add_flag("--no-evict", gen.no_evict, "keep every token");
    no_evict->excludes("--budget-rate")->excludes("--budget-tokens");
    c_gen->add_flag("--no-self-attention", gen.no_self, "leave a token's own attention out of its stats");
    c_gen->add_option("--trace", gen.trace, "write the attention trace here");
    c_gen->add_flag("--report", gen.report, "print eviction counts and per-head peaks");

    ReplayArgs rep;
    auto* c_rep = app.add_subcommand("replay", "apply a policy to a recorded trace");
    c_rep->add_option("--trace", rep.trace)->required()->check(CLI::ExistingFile);
    c_rep->add_option("--policy", rep.policy);
    add_budget_flags(c_rep, rep.budget);
    c_rep->add_option("--seed", rep.seed);
    c_rep->add_flag("--no-self-attention", rep.no_self);
    c_rep->add_option("--out", rep.out, "per-step retained sizes as CSV");

    ConsistencyArgs con;
    auto* c_con = app.add_subcommand("consistency", "Jaccard agreement with full-cache statistics");
    c_con->add_option("--trace", con.traces)->check(CLI::ExistingFile);
    c_con->add_option("--toy", con.toy, "also use N seeded toy traces");
    c_con->add_option("--length", con.length, "toy trace length");
    c_con->add_option("--budgets", con.budgets)->delimiter(',');
    c_con->add_option("--methods,--policies", con.methods)->delimiter(',');
    c_con->add_option("--seed", con.seed);
    c_con->add_option("--out", con.out);

    PplArgs ppl;
    auto* c_ppl = app.add_subcommand("ppl", "perplexity with eviction active");
    c_ppl->add_option("--model", ppl.model)->required()->check(CLI::ExistingFile);
    c_ppl->add_option("--corpus", ppl.corpus, "one sequence of ids per line")
        ->check(CLI::ExistingFile);
    c_ppl->add_option("--sequences", ppl.sequences, "sampled sequences when no corpus is given");
    c_ppl->add_option("--length", ppl.length);
    c_ppl->add_option("--budgets", ppl.budgets)->delimiter(',');
    c_ppl->add_option("--policies", ppl.policies)->delimiter(',');
    c_ppl->add_option("--window", ppl.budget.window);
    c_ppl->add_option("--block", ppl.budget.block)->check(CLI::PositiveNumber);
    c_ppl->add_option("--seed", ppl.seed);
    c_ppl->add_option("--out", ppl.out);

    SweepArgs sw;
    auto* c_sw = app.add_subcommand("scope-sweep", "MAS with window and std scopes over r");
    c_sw->add_option("--trace", sw.traces)->check(CLI::ExistingFile);
    c_sw->add_option("--model", sw.model)->check(CLI::ExistingFile);
    c_sw->add_option("--corpus", sw.corpus)->check(CLI::ExistingFile);
    c_sw->add_option("--sequences", sw.sequences);
    c_sw->add_option("--length", sw.length);
    c_sw->add_option("--budget-tokens", sw.budget_tokens);
    c_sw->add_option("--block", sw.block)->check(CLI::PositiveNumber);
    c_sw->add_option("--scopes", sw.scopes)->delimiter(',');
    c_sw->add_option("--seed", sw.seed);
    c_sw->add_option("--out", sw.out);

    StdArgs sd;
    auto* c_sd = app.add_subcommand("std", "std trajectory of one token");
    c_sd->add_option("--trace", sd.trace)->required()->check(CLI::ExistingFile);
    c_sd->add_option("--position", sd.position)->required();
    c_sd->add_option("--layer", sd.layer);
    c_sd->add_option("--kv-head", sd.kv_head);
    c_sd->add_option("--out", sd.out);

    BlockArgs bl;
    auto* c_bl = app.add_subcommand("block-sweep", "block-wise eviction over block sizes");
    c_bl->add_option("--model", bl.model)->required()->check(CLI::ExistingFile);
    c_bl->add_option("--corpus", bl.corpus)->check(CLI::ExistingFile);
    c_bl->add_option("--sequences", bl.sequences);
    c_bl->add_option("--length", bl.length);
    c_bl->add_option("--max-new", bl.max_new);
    c_bl->add_option("--policy", bl.policy);
    c_bl->add_option("--budget-rate", bl.rate);
    c_bl->add_option("--blocks", bl.blocks)->delimiter(',');
    c_bl->add_option("--seed", bl.seed);
    c_bl->add_option("--out", bl.out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*c_init) return cmd_init_model(init);
        if (*c_gen) {
            if (gen.prompt.empty() && !gen.text) throw ConfigError("generate needs --prompt or --text");
            return cmd_generate(gen);
        }
        if (*c_rep) return cmd_replay(rep);
        if (*c_con) return cmd_consistency(con);
        if (*c_ppl) return cmd_ppl(ppl);
        if (*c_sw) return cmd_scope_sweep(sw);
        if (*c_sd) return cmd_std(sd);
        if (*c_bl) return cmd_block_sweep(bl);
    } catch (const ConfigError& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const InvalidInput& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return 1;
    }
    return 2;
}
