#include "kvevict/trace_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "kvevict/errors.hpp"

namespace kvevict {

namespace {

constexpr char kTraceMagic[4] = {'K', 'V', 'A', 'T'};

std::string where(std::size_t step, std::size_t layer, std::size_t head) {
    return fmt::format("step {} layer {} head {}", step, layer, head);
}

std::string header_text(const TraceHeader& h) {
    return fmt::format(
        "version={}\nlayers={}\nquery_heads={}\nkv_heads={}\nhead_dim={}\nsteps={}\nsource={}\n",
        h.version, h.layers, h.query_heads, h.kv_heads, h.head_dim, h.steps, h.source);
}

std::uint32_t header_count(const std::map<std::string, std::string>& kv, const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        throw ParseError(fmt::format("trace header is missing '{}'", key));
    }
    try {
        std::size_t used = 0;
        const auto value = std::stoul(it->second, &used);
        if (used != it->second.size() || value > UINT32_MAX) {
            throw std::invalid_argument(it->second);
        }
        return static_cast<std::uint32_t>(value);
    } catch (const std::logic_error&) {
        throw ParseError(fmt::format("trace header '{}' is not a count: '{}'", key, it->second));
    }
}

TraceHeader parse_header(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(fmt::format("malformed trace header line '{}'", line));
        }
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    TraceHeader h;
    h.version = header_count(kv, "version");
    if (h.version != kTraceVersion) {
        throw ParseError(fmt::format("unsupported trace version {} (expected {})", h.version,
                                     kTraceVersion));
    }
    h.layers = header_count(kv, "layers");
    h.query_heads = header_count(kv, "query_heads");
    h.kv_heads = header_count(kv, "kv_heads");
    h.head_dim = header_count(kv, "head_dim");
    h.steps = header_count(kv, "steps");
    if (const auto it = kv.find("source"); it != kv.end()) {
        h.source = it->second;
    }
    return h;
}

}  // namespace

void validate_trace(const AttentionTrace& trace, double tolerance) {
    const auto& h = trace.header;
    if (h.version != kTraceVersion) {
        throw ParseError(fmt::format("unsupported trace version {}", h.version));
    }
    if (h.layers == 0 || h.query_heads == 0 || h.kv_heads == 0 || h.query_heads % h.kv_heads != 0) {
        throw ParseError(fmt::format("trace header shape L={} H={} H_kv={} is invalid", h.layers,
                                     h.query_heads, h.kv_heads));
    }
    const std::size_t expected = std::size_t{h.steps} * h.layers * h.query_heads;
    if (trace.records.size() != expected) {
        throw ParseError(fmt::format("trace holds {} records, header implies {}",
                                     trace.records.size(), expected));
    }
    std::size_t index = 0;
    for (std::size_t t = 0; t < h.steps; ++t) {
        for (std::size_t l = 0; l < h.layers; ++l) {
            for (std::size_t q = 0; q < h.query_heads; ++q, ++index) {
                const auto& r = trace.records[index];
                if (r.step != t || r.layer != l || r.head != q) {
                    throw ParseError(fmt::format("record {} is {} but {} was expected", index,
                                                 where(r.step, r.layer, r.head), where(t, l, q)));
                }
                if (r.positions.empty() || r.positions.size() != r.probs.size()) {
                    throw ParseError(fmt::format("{}: empty row or positions/probs mismatch",
                                                 where(t, l, q)));
                }
                double sum = 0.0;
                for (std::size_t i = 0; i < r.positions.size(); ++i) {
                    if (r.positions[i] > t || (i > 0 && r.positions[i] <= r.positions[i - 1])) {
                        throw ParseError(fmt::format(
                            "{}: positions must ascend within [0, step]", where(t, l, q)));
                    }
                    const float p = r.probs[i];
                    if (!(p >= 0.0F && p <= 1.0F)) {
                        throw ParseError(fmt::format("{}: probability {} outside [0, 1]",
                                                     where(t, l, q), p));
                    }
                    sum += p;
                }
                if (std::abs(sum - 1.0) > tolerance) {
                    throw ParseError(fmt::format("{}: row sums to {}", where(t, l, q), sum));
                }
            }
        }
    }
}

void write_trace(const AttentionTrace& trace, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error(fmt::format("cannot open {} for writing", tmp.string()));
        }
        const auto text = header_text(trace.header);
        out.write(kTraceMagic, sizeof kTraceMagic);
        detail::put_le(out, static_cast<std::uint32_t>(text.size()));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& r : trace.records) {
            detail::put_le(out, r.step);
            detail::put_le(out, r.layer);
            detail::put_le(out, r.head);
            detail::put_le(out, static_cast<std::uint32_t>(r.positions.size()));
            for (auto p : r.positions) {
                detail::put_le(out, p);
            }
            detail::put_f32s(out, r.probs);
        }
        if (!out) {
            throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
        }
    }
    std::filesystem::rename(tmp, path);
}

AttentionTrace read_trace(const std::filesystem::path& path, double tolerance) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(fmt::format("cannot open trace {}", path.string()));
    }
    char magic[4] = {};
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 4, kTraceMagic)) {
        throw ParseError(fmt::format("{}: bad magic, not a KVAT trace", path.string()));
    }
    const auto len = detail::need_le<std::uint32_t>(in, "header length");
    std::string text(len, '\0');
    if (!in.read(text.data(), len)) {
        throw ParseError("truncated file while reading trace header");
    }
    AttentionTrace trace;
    trace.header = parse_header(text);

    const std::size_t expected =
        std::size_t{trace.header.steps} * trace.header.layers * trace.header.query_heads;
    trace.records.reserve(expected);
    while (in.peek() != std::char_traits<char>::eof()) {
        TraceRecord r;
        r.step = detail::need_le<std::uint32_t>(in, "record step");
        const auto loc = [&] { return fmt::format("record {}", trace.records.size()); };
        r.layer = detail::need_le<std::uint16_t>(in, loc());
        r.head = detail::need_le<std::uint16_t>(in, loc());
        const auto n = detail::need_le<std::uint32_t>(in, where(r.step, r.layer, r.head));
        if (n > trace.header.steps) {
            throw ParseError(fmt::format("{}: row length {} exceeds step count",
                                         where(r.step, r.layer, r.head), n));
        }
        r.positions.resize(n);
        for (auto& p : r.positions) {
            p = detail::need_le<std::uint32_t>(in, where(r.step, r.layer, r.head));
        }
        r.probs.resize(n);
        for (auto& p : r.probs) {
            p = detail::need_f32(in, where(r.step, r.layer, r.head));
        }
        trace.records.push_back(std::move(r));
    }
    validate_trace(trace, tolerance);
    return trace;
}

AttentionTrace trace_from_generation(const ModelConfig& config, const GenerationResult& run,
                                     std::string source) {
    AttentionTrace trace;
    trace.header.layers = config.layers;
    trace.header.query_heads = config.query_heads;
    trace.header.kv_heads = config.kv_heads;
    trace.header.head_dim = config.head_dim;
    trace.header.steps = static_cast<std::uint32_t>(run.steps.size());
    trace.header.source = std::move(source);
    const std::size_t group = config.group_size();
    for (std::size_t t = 0; t < run.steps.size(); ++t) {
        const auto& step = run.steps[t];
        for (std::size_t l = 0; l < config.layers; ++l) {
            for (std::size_t q = 0; q < config.query_heads; ++q) {
                TraceRecord r;
                r.step = static_cast<std::uint32_t>(t);
                r.layer = static_cast<std::uint16_t>(l);
                r.head = static_cast<std::uint16_t>(q);
                r.positions = step.retained[l * config.kv_heads + q / group];
                r.probs = step.attention[l * config.query_heads + q];
                trace.records.push_back(std::move(r));
            }
        }
    }
    return trace;
}

ProbRow mask_renormalize(const TraceRecord& record, std::span<const Position> retained) {
    if (std::equal(retained.begin(), retained.end(), record.positions.begin(),
                   record.positions.end())) {
        return record.probs;
    }
    ProbRow out(retained.size(), 0.0F);
    double total = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < retained.size(); ++i) {
        while (j < record.positions.size() && record.positions[j] < retained[i]) {
            ++j;
        }
        if (j < record.positions.size() && record.positions[j] == retained[i]) {
            out[i] = record.probs[j];
            total += record.probs[j];
        }
    }
    if (total <= 0.0) {
        std::fill(out.begin(), out.end(), static_cast<float>(1.0 / static_cast<double>(out.size())));
        return out;
    }
    for (auto& p : out) {
        p = static_cast<float>(p / total);
    }
    return out;
}

Replayer::Replayer(const AttentionTrace& trace, const Policy& policy, const BudgetSpec& budget,
                   CacheOptions options)
    : trace_(&trace),
      budget_(resolve_budget(budget, policy, trace.header.steps)),
      caches_(trace.header.layers, trace.header.kv_heads, 0, budget_, options) {}

void Replayer::advance() {
    const auto& h = trace_->header;
    const auto pos = static_cast<Position>(step_);
    const std::size_t group = h.query_heads / h.kv_heads;
    caches_.make_room(step_);
    std::vector<ProbRow> rows(group);
    for (std::size_t l = 0; l < h.layers; ++l) {
        for (std::size_t kv = 0; kv < h.kv_heads; ++kv) {
            auto& cache = caches_.head(l, kv);
            cache.append(pos, {}, {});
            for (std::size_t g = 0; g < group; ++g) {
                rows[g] = mask_renormalize(trace_->record(step_, l, kv * group + g),
                                           cache.positions());
            }
            caches_.record_attention(l, kv, rows);
        }
    }
    caches_.note_size();
    ++step_;
}

ReplayResult replay(const AttentionTrace& trace, const Policy& policy, const BudgetSpec& budget,
                    CacheOptions options) {
    Replayer replayer(trace, policy, budget, options);
    ReplayResult result;
    result.budget = replayer.budget();
    result.layers = trace.header.layers;
    result.kv_heads = trace.header.kv_heads;
    result.retained.reserve(std::size_t{trace.header.steps} * result.layers * result.kv_heads);
    while (!replayer.done()) {
        replayer.advance();
        for (std::size_t l = 0; l < result.layers; ++l) {
            for (std::size_t kv = 0; kv < result.kv_heads; ++kv) {
                const auto pos = replayer.caches().head(l, kv).positions();
                result.retained.emplace_back(pos.begin(), pos.end());
            }
        }
    }
    result.events = replayer.caches().events();
    for (std::size_t l = 0; l < result.layers; ++l) {
        for (std::size_t kv = 0; kv < result.kv_heads; ++kv) {
            const auto& cache = replayer.caches().head(l, kv);
            result.final_stats.push_back(
                {{cache.positions().begin(), cache.positions().end()}, cache.stats()});
        }
    }
    return result;
}

}  // namespace kvevict
