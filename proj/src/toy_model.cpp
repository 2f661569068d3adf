#include "kvevict/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "binary_io.hpp"
#include "kvevict/errors.hpp"

namespace kvevict {

namespace {

constexpr char kModelMagic[4] = {'K', 'V', 'T', 'M'};
constexpr std::uint32_t kModelVersion = 1;
constexpr double kRopeBase = 10000.0;
constexpr double kNormEps = 1e-6;

// Box-Muller over mt19937_64 so weights do not depend on the standard
// library's distribution implementation.
class GaussianSource {
public:
    GaussianSource(std::uint64_t seed, double stddev) : rng_(seed), stddev_(stddev) {}

    float next() {
        if (has_spare_) {
            has_spare_ = false;
            return static_cast<float>(spare_ * stddev_);
        }
        const double u1 = (static_cast<double>(rng_() >> 11U) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(rng_() >> 11U) * 0x1.0p-53;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return static_cast<float>(radius * std::cos(angle) * stddev_);
    }

    Matrix matrix(std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        for (auto& v : m.data) {
            v = next();
        }
        return m;
    }

private:
    std::mt19937_64 rng_;
    double stddev_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

template <typename Fn>
void for_each_matrix(const ToyModel& model, Fn&& fn) {
    fn(model.embeddings);
    for (const auto& layer : model.layers) {
        fn(layer.wq);
        fn(layer.wk);
        fn(layer.wv);
        fn(layer.wo);
        fn(layer.w_up);
        fn(layer.w_down);
    }
    fn(model.unembedding);
}

template <typename Fn>
void for_each_matrix(ToyModel& model, Fn&& fn) {
    fn(model.embeddings);
    for (auto& layer : model.layers) {
        fn(layer.wq);
        fn(layer.wk);
        fn(layer.wv);
        fn(layer.wo);
        fn(layer.w_up);
        fn(layer.w_down);
    }
    fn(model.unembedding);
}

ToyModel shaped_model(const ModelConfig& config) {
    const std::size_t d = config.model_dim();
    ToyModel model;
    model.config = config;
    model.embeddings = Matrix(config.vocab, d);
    model.layers.resize(config.layers);
    for (auto& layer : model.layers) {
        layer.wq = Matrix(d, d);
        layer.wk = Matrix(d, config.kv_dim());
        layer.wv = Matrix(d, config.kv_dim());
        layer.wo = Matrix(d, d);
        layer.w_up = Matrix(d, config.ffn_dim());
        layer.w_down = Matrix(config.ffn_dim(), d);
    }
    model.unembedding = Matrix(d, config.vocab);
    return model;
}

Matrix row_matrix(std::span<const float> v) {
    Matrix m(1, v.size());
    std::copy(v.begin(), v.end(), m.data.begin());
    return m;
}

void add_into(std::vector<float>& x, std::span<const float> delta) {
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] += delta[i];
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (layers == 0 || query_heads == 0 || kv_heads == 0 || head_dim == 0 || vocab == 0 ||
        max_position == 0) {
        throw ConfigError("model config counts must all be positive");
    }
    if (head_dim % 2 != 0) {
        throw ConfigError(fmt::format("head_dim {} must be even for rotary encoding", head_dim));
    }
    if (query_heads % kv_heads != 0) {
        throw ConfigError(fmt::format("kv_heads {} does not divide query_heads {}", kv_heads,
                                      query_heads));
    }
}

std::size_t ToyModel::parameter_count() const {
    std::size_t total = 0;
    for_each_matrix(*this, [&](const Matrix& m) { total += m.data.size(); });
    return total;
}

ToyModel init_model(const ModelConfig& config) {
    config.validate();
    ToyModel model = shaped_model(config);
    GaussianSource gauss(config.seed, 1.0 / std::sqrt(static_cast<double>(config.model_dim())));
    for_each_matrix(model, [&](Matrix& m) {
        for (auto& v : m.data) {
            v = gauss.next();
        }
    });
    return model;
}

void save_model(const ToyModel& model, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error(fmt::format("cannot open {} for writing", tmp.string()));
        }
        const auto& c = model.config;
        out.write(kModelMagic, sizeof kModelMagic);
        detail::put_le(out, kModelVersion);
        detail::put_le(out, c.layers);
        detail::put_le(out, c.query_heads);
        detail::put_le(out, c.kv_heads);
        detail::put_le(out, c.head_dim);
        detail::put_le(out, c.vocab);
        detail::put_le(out, c.max_position);
        detail::put_le(out, c.seed);
        for_each_matrix(model, [&](const Matrix& m) { detail::put_f32s(out, m.data); });
        if (!out) {
            throw std::runtime_error(fmt::format("write to {} failed", tmp.string()));
        }
    }
    std::filesystem::rename(tmp, path);
}

ToyModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(fmt::format("cannot open model file {}", path.string()));
    }
    char magic[4] = {};
    if (!in.read(magic, sizeof magic) || !std::equal(magic, magic + 4, kModelMagic)) {
        throw ParseError(fmt::format("{}: bad magic, not a KVTM model", path.string()));
    }
    const auto version = detail::need_le<std::uint32_t>(in, "version");
    if (version != kModelVersion) {
        throw ParseError(fmt::format("{}: unsupported model version {}", path.string(), version));
    }
    ModelConfig c;
    c.layers = detail::need_le<std::uint32_t>(in, "layers");
    c.query_heads = detail::need_le<std::uint32_t>(in, "query_heads");
    c.kv_heads = detail::need_le<std::uint32_t>(in, "kv_heads");
    c.head_dim = detail::need_le<std::uint32_t>(in, "head_dim");
    c.vocab = detail::need_le<std::uint32_t>(in, "vocab");
    c.max_position = detail::need_le<std::uint32_t>(in, "max_position");
    c.seed = detail::need_le<std::uint64_t>(in, "seed");
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
    }
    ToyModel model = shaped_model(c);
    for_each_matrix(model, [&](Matrix& m) {
        for (auto& v : m.data) {
            v = detail::need_f32(in, "weights");
        }
    });
    if (in.peek() != std::char_traits<char>::eof()) {
        throw ParseError(fmt::format("{}: trailing bytes after weights", path.string()));
    }
    return model;
}

void apply_rotary(std::span<float> head, std::size_t position) {
    const std::size_t dim = head.size();
    for (std::size_t i = 0; i + 1 < dim; i += 2) {
        const double freq = std::pow(kRopeBase, -static_cast<double>(i) / static_cast<double>(dim));
        const double angle = static_cast<double>(position) * freq;
        const double c = std::cos(angle);
        const double s = std::sin(angle);
        const double x0 = head[i];
        const double x1 = head[i + 1];
        head[i] = static_cast<float>(x0 * c - x1 * s);
        head[i + 1] = static_cast<float>(x0 * s + x1 * c);
    }
}

std::vector<float> rms_norm(std::span<const float> x) {
    double sum_sq = 0.0;
    for (float v : x) {
        sum_sq += static_cast<double>(v) * v;
    }
    const double inv = 1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + kNormEps);
    std::vector<float> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = static_cast<float>(x[i] * inv);
    }
    return out;
}

StepOutput forward_step(const ToyModel& model, TokenId token, Position position,
                        CacheSet& caches) {
    const auto& cfg = model.config;
    if (position >= cfg.max_position) {
        throw InvalidInput(fmt::format("position {} exceeds max_position {}", position,
                                       cfg.max_position));
    }
    if (token >= cfg.vocab) {
        throw InvalidInput(fmt::format("token id {} outside vocabulary {}", token, cfg.vocab));
    }
    if (caches.layers() != cfg.layers || caches.kv_heads() != cfg.kv_heads) {
        throw InvalidInput("forward_step: cache set shape does not match model");
    }
    const std::size_t dh = cfg.head_dim;
    const std::size_t group = cfg.group_size();
    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));

    StepOutput out;
    out.attention.reserve(std::size_t{cfg.layers} * cfg.query_heads);
    out.retained.reserve(std::size_t{cfg.layers} * cfg.kv_heads);

    auto emb = model.embeddings.row(token);
    std::vector<float> x(emb.begin(), emb.end());
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const auto& w = model.layers[l];
        const Matrix h = row_matrix(rms_norm(x));
        Matrix q = matmul(h, w.wq);
        Matrix k = matmul(h, w.wk);
        const Matrix v = matmul(h, w.wv);

        for (std::size_t kv = 0; kv < cfg.kv_heads; ++kv) {
            auto key = std::span<float>(k.data).subspan(kv * dh, dh);
            apply_rotary(key, position);
            auto& cache = caches.head(l, kv);
            cache.append(position, key, std::span<const float>(v.data).subspan(kv * dh, dh));
            out.retained.emplace_back(cache.positions().begin(), cache.positions().end());
        }

        Matrix heads_out(1, cfg.model_dim());
        for (std::size_t qh = 0; qh < cfg.query_heads; ++qh) {
            auto query = std::span<float>(q.data).subspan(qh * dh, dh);
            apply_rotary(query, position);
            const auto& cache = caches.head(l, qh / group);
            auto att = attention_step(query, cache.keys(), cache.values(), scale);
            std::copy(att.output.begin(), att.output.end(), heads_out.data.begin() + qh * dh);
            out.attention.push_back(std::move(att.probs));
        }
        add_into(x, matmul(heads_out, w.wo).data);

        Matrix up = matmul(row_matrix(rms_norm(x)), w.w_up);
        for (auto& u : up.data) {
            u = static_cast<float>(u / (1.0 + std::exp(-static_cast<double>(u))));
        }
        add_into(x, matmul(up, w.w_down).data);
    }
    out.logits = matmul(row_matrix(rms_norm(x)), model.unembedding).data;
    return out;
}

TokenId greedy_token(std::span<const float> logits) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

Session::Session(const ToyModel& model, CacheSet caches)
    : model_(&model), caches_(std::move(caches)) {}

StepOutput Session::feed(TokenId token) {
    const auto& cfg = model_->config;
    caches_.make_room(position_);
    StepOutput out = forward_step(*model_, token, position_, caches_);
    caches_.note_size();
    const std::size_t group = cfg.group_size();
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        for (std::size_t kv = 0; kv < cfg.kv_heads; ++kv) {
            const auto first = out.attention.begin() +
                               static_cast<std::ptrdiff_t>(l * cfg.query_heads + kv * group);
            caches_.record_attention(l, kv, std::span<const ProbRow>(&*first, group));
        }
    }
    ++position_;
    return out;
}

GenerationResult generate(const ToyModel& model, std::span<const TokenId> prompt,
                          std::size_t max_new, const Policy& policy, const BudgetSpec& budget,
                          CacheOptions options) {
    if (prompt.empty()) {
        throw InvalidInput("generate: empty prompt");
    }
    const auto& cfg = model.config;
    GenerationResult result;
    result.budget = resolve_budget(budget, policy, prompt.size() + max_new);
    Session session(model, CacheSet(cfg.layers, cfg.kv_heads, cfg.head_dim, result.budget, options));

    result.tokens.assign(prompt.begin(), prompt.end());
    for (TokenId t : prompt) {
        result.steps.push_back(session.feed(t));
    }
    for (std::size_t i = 0; i < max_new; ++i) {
        const TokenId next = greedy_token(result.steps.back().logits);
        result.tokens.push_back(next);
        if (next == kEndOfSequence || i + 1 == max_new) {
            break;
        }
        result.steps.push_back(session.feed(next));
    }
    result.peak_size = session.caches().peak_size();
    result.events = session.caches().events();
    return result;
}

}  // namespace kvevict
