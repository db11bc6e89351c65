#include "kvlens/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "kvlens/kernels.hpp"
#include "kvlens/numerics.hpp"
#include "kvlens/rng.hpp"

namespace kvlens::model {

void ModelConfig::validate() const {
    if (n_layers == 0 || d_model == 0 || n_q_heads == 0 || n_kv_heads == 0 || d_head == 0 ||
        vocab_size == 0 || patch_dim == 0) {
        throw std::invalid_argument("model config: all dimensions must be positive");
    }
    if (n_q_heads % n_kv_heads != 0)
        throw std::invalid_argument("model config: n_q_heads must be a multiple of n_kv_heads");
    if (d_model != n_q_heads * d_head)
        throw std::invalid_argument("model config: d_model must equal n_q_heads * d_head");
    if (d_head % 2 != 0)
        throw std::invalid_argument("model config: d_head must be even for rope pairs");
    if (rope_base <= 1.0) throw std::invalid_argument("model config: rope_base must exceed 1");
}

namespace {

constexpr double kInitStd = 0.02;

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std_dev) {
    Matrix m(rows, cols);
    for (auto& v : m.data) v = rng.gaussian() * std_dev;
    return m;
}

} // namespace

ModelWeights build_model(const ModelConfig& config, const PlantSpec* plant) {
    config.validate();
    if (plant) {
        for (auto [layer, head] : plant->targets) {
            if (layer >= config.n_layers || head >= config.n_kv_heads)
                throw std::invalid_argument("plant target out of range");
        }
    }

    Rng rng(config.seed);
    ModelWeights w;
    w.config = config;
    const std::size_t dq = config.n_q_heads * config.d_head;
    const std::size_t dkv = config.n_kv_heads * config.d_head;
    const std::size_t dh = 4 * config.d_model;

    for (std::size_t l = 0; l < config.n_layers; ++l) {
        LayerWeights lw;
        lw.w_q = gaussian_matrix(rng, config.d_model, dq, kInitStd);
        lw.w_k = gaussian_matrix(rng, config.d_model, dkv, kInitStd);
        lw.b_k.assign(dkv, 0.0);
        lw.w_v = gaussian_matrix(rng, config.d_model, dkv, kInitStd);
        lw.w_o = gaussian_matrix(rng, dq, config.d_model, kInitStd);
        lw.mlp_in = gaussian_matrix(rng, config.d_model, dh, kInitStd);
        lw.mlp_out = gaussian_matrix(rng, dh, config.d_model, kInitStd);
        lw.attn_norm_gain.assign(config.d_model, 1.0);
        lw.mlp_norm_gain.assign(config.d_model, 1.0);
        w.layers.push_back(std::move(lw));
    }
    w.patch_proj = gaussian_matrix(rng, config.patch_dim, config.d_model, kInitStd);
    w.token_embedding = gaussian_matrix(rng, config.vocab_size, config.d_model, kInitStd);
    w.final_norm_gain.assign(config.d_model, 1.0);
    w.unembedding = gaussian_matrix(rng, config.d_model, config.vocab_size, kInitStd);

    if (plant) {
        for (auto [layer, head] : plant->targets) {
            auto& lw = w.layers[layer];
            const std::size_t col0 = head * config.d_head;
            for (std::size_t r = 0; r < config.d_model; ++r)
                for (std::size_t c = col0; c < col0 + config.d_head; ++c)
                    lw.w_k.at(r, c) *= plant->input_gain;
            // Seeded unit direction, keyed per (layer, head) so plant order
            // does not matter.
            Rng dir_rng = rng.child(0xb1a5 + layer * 131 + head);
            std::vector<double> dir(config.d_head);
            double norm = 0.0;
            for (auto& v : dir) {
                v = dir_rng.gaussian();
                norm += v * v;
            }
            norm = std::sqrt(norm);
            for (std::size_t j = 0; j < config.d_head; ++j)
                lw.b_k[col0 + j] = plant->bias_scale * dir[j] / norm;
        }
    }
    return w;
}

std::vector<double> rope_apply(std::span<const double> x, std::size_t position, double base) {
    if (x.size() % 2 != 0) throw std::invalid_argument("rope_apply: dimension must be even");
    std::vector<double> out(x.size());
    const double d = static_cast<double>(x.size());
    for (std::size_t i = 0; i < x.size() / 2; ++i) {
        const double theta = static_cast<double>(position) *
                             std::pow(base, -2.0 * static_cast<double>(i) / d);
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        out[2 * i] = x[2 * i] * c - x[2 * i + 1] * s;
        out[2 * i + 1] = x[2 * i] * s + x[2 * i + 1] * c;
    }
    return out;
}

std::span<const double> KVCacheSnapshot::key_at(std::size_t layer, std::size_t head,
                                                std::size_t pos) const {
    const std::size_t idx = (((layer * n_kv_heads) + head) * seq_len + pos) * d_head;
    return std::span<const double>(keys.data() + idx, d_head);
}

std::span<const double> KVCacheSnapshot::value_at(std::size_t layer, std::size_t head,
                                                  std::size_t pos) const {
    const std::size_t idx = (((layer * n_kv_heads) + head) * seq_len + pos) * d_head;
    return std::span<const double>(values.data() + idx, d_head);
}

bool KnockoutSpec::contains(std::size_t layer, std::size_t kv_head) const {
    for (auto [l, h] : targets)
        if (l == layer && h == kv_head) return true;
    return false;
}

double AttentionRecord::at(std::size_t layer, std::size_t q_head, std::size_t q_pos,
                           std::size_t k_pos) const {
    return weights[(((layer * n_q_heads) + q_head) * seq_len + q_pos) * seq_len + k_pos];
}

std::span<const double> AttentionRecord::row(std::size_t layer, std::size_t q_head,
                                             std::size_t q_pos) const {
    const std::size_t idx = (((layer * n_q_heads) + q_head) * seq_len + q_pos) * seq_len;
    return std::span<const double>(weights.data() + idx, seq_len);
}

ForwardResult forward(const ModelWeights& weights, const MultimodalInput& input,
                      const KnockoutSpec* knockout, bool record_attention) {
    const ModelConfig& cfg = weights.config;
    const std::size_t seq = input.seq_len();
    if (seq == 0) throw std::invalid_argument("forward: empty input");
    if (input.image_patches.rows > 0 && input.image_patches.cols != cfg.patch_dim)
        throw std::invalid_argument("forward: patch_dim mismatch");
    for (int t : input.prefix_text)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw std::invalid_argument("forward: prefix token id out of vocab");
    for (int t : input.query_text)
        if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
            throw std::invalid_argument("forward: query token id out of vocab");
    if (knockout) {
        for (auto [l, h] : knockout->targets)
            if (l >= cfg.n_layers || h >= cfg.n_kv_heads)
                throw std::invalid_argument("forward: knockout target out of range");
    }

    ForwardResult res;
    res.cache.n_layers = cfg.n_layers;
    res.cache.n_kv_heads = cfg.n_kv_heads;
    res.cache.d_head = cfg.d_head;
    res.cache.seq_len = seq;
    res.cache.spans.prefix_begin = 0;
    res.cache.spans.image_begin = input.prefix_text.size();
    res.cache.spans.query_begin = input.prefix_text.size() + input.image_patches.rows;
    res.cache.spans.end = seq;
    res.cache.keys.assign(cfg.n_layers * cfg.n_kv_heads * seq * cfg.d_head, 0.0);
    res.cache.values.assign(cfg.n_layers * cfg.n_kv_heads * seq * cfg.d_head, 0.0);
    if (record_attention) {
        AttentionRecord rec;
        rec.n_layers = cfg.n_layers;
        rec.n_q_heads = cfg.n_q_heads;
        rec.seq_len = seq;
        rec.weights.assign(cfg.n_layers * cfg.n_q_heads * seq * seq, 0.0);
        res.attention = std::move(rec);
    }

    // Embedding: [prefix tokens][image patches][query tokens].
    Matrix x(seq, cfg.d_model);
    std::size_t pos = 0;
    for (int t : input.prefix_text) {
        std::memcpy(x.row_mut(pos).data(), weights.token_embedding.row(t).data(),
                    cfg.d_model * sizeof(double));
        ++pos;
    }
    // Image patch projection as one matmul (rows are independent).
    if (input.image_patches.rows > 0) {
        Matrix proj = numerics::matmul(input.image_patches, weights.patch_proj);
        for (std::size_t i = 0; i < proj.rows; ++i)
            std::memcpy(x.row_mut(res.cache.spans.image_begin + i).data(), proj.row(i).data(),
                        cfg.d_model * sizeof(double));
        pos += proj.rows;
    }
    for (int t : input.query_text) {
        std::memcpy(x.row_mut(pos).data(), weights.token_embedding.row(t).data(),
                    cfg.d_model * sizeof(double));
        ++pos;
    }

    const std::size_t dq = cfg.n_q_heads * cfg.d_head;
    const std::size_t group = cfg.group_size();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    const Spans& spans = res.cache.spans;

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = weights.layers[l];

        Matrix xn(seq, cfg.d_model);
        for (std::size_t p = 0; p < seq; ++p) {
            auto n = numerics::rms_norm(x.row(p), lw.attn_norm_gain);
            std::memcpy(xn.row_mut(p).data(), n.data(), cfg.d_model * sizeof(double));
        }

        Matrix q = numerics::matmul(xn, lw.w_q);
        Matrix k = numerics::matmul(xn, lw.w_k);
        Matrix v = numerics::matmul(xn, lw.w_v);
        for (std::size_t p = 0; p < seq; ++p)
            for (std::size_t j = 0; j < lw.b_k.size(); ++j) k.at(p, j) += lw.b_k[j];

        // RoPE per head segment; keys land in the cache post-RoPE.
        for (std::size_t p = 0; p < seq; ++p) {
            for (std::size_t h = 0; h < cfg.n_q_heads; ++h) {
                auto r = rope_apply(
                    std::span<const double>(q.row(p).data() + h * cfg.d_head, cfg.d_head), p,
                    cfg.rope_base);
                std::memcpy(q.row_mut(p).data() + h * cfg.d_head, r.data(),
                            cfg.d_head * sizeof(double));
            }
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
                auto r = rope_apply(
                    std::span<const double>(k.row(p).data() + h * cfg.d_head, cfg.d_head), p,
                    cfg.rope_base);
                const std::size_t idx = (((l * cfg.n_kv_heads) + h) * seq + p) * cfg.d_head;
                std::memcpy(res.cache.keys.data() + idx, r.data(), cfg.d_head * sizeof(double));
                std::memcpy(res.cache.values.data() + idx, v.row(p).data() + h * cfg.d_head,
                            cfg.d_head * sizeof(double));
            }
        }

        // Attention. Query head i shares kv head i / group.
        Matrix attn_concat(seq, dq);
        std::vector<double> logits(seq);
        std::vector<std::uint8_t> allowed(seq);
        for (std::size_t qh = 0; qh < cfg.n_q_heads; ++qh) {
            const std::size_t kvh = qh / group;
            const bool head_knocked = knockout && knockout->contains(l, kvh);
            for (std::size_t p = 0; p < seq; ++p) {
                const std::size_t support = p + 1; // causal
                const double* qp = q.row(p).data() + qh * cfg.d_head;
                for (std::size_t j = 0; j < support; ++j) {
                    logits[j] = kernels::dot(qp, res.cache.key_at(l, kvh, j).data(),
                                             cfg.d_head) * inv_sqrt_dh;
                    allowed[j] = 1;
                    if (head_knocked && spans.in_query(p) && spans.in_image(j)) allowed[j] = 0;
                }
                auto probs = numerics::masked_softmax(
                    std::span<const double>(logits.data(), support),
                    std::span<const std::uint8_t>(allowed.data(), support));
                double* out = attn_concat.row_mut(p).data() + qh * cfg.d_head;
                std::memset(out, 0, cfg.d_head * sizeof(double));
                for (std::size_t j = 0; j < support; ++j) {
                    if (probs[j] == 0.0) continue;
                    kernels::axpy(probs[j], res.cache.value_at(l, kvh, j).data(), out,
                                  cfg.d_head);
                }
                if (res.attention) {
                    double* row = res.attention->weights.data() +
                                  (((l * cfg.n_q_heads) + qh) * seq + p) * seq;
                    std::memcpy(row, probs.data(), support * sizeof(double));
                }
            }
        }

        Matrix attn_out = numerics::matmul(attn_concat, lw.w_o);
        for (std::size_t p = 0; p < seq; ++p)
            kernels::axpy(1.0, attn_out.row(p).data(), x.row_mut(p).data(), cfg.d_model);

        // MLP with silu gate.
        for (std::size_t p = 0; p < seq; ++p) {
            auto hn = numerics::rms_norm(x.row(p), lw.mlp_norm_gain);
            std::vector<double> h(lw.mlp_in.cols, 0.0);
            kernels::matmul(hn.data(), lw.mlp_in.data.data(), h.data(), 1, cfg.d_model,
                            lw.mlp_in.cols);
            for (auto& hv : h) hv = hv / (1.0 + std::exp(-hv));
            std::vector<double> y(cfg.d_model, 0.0);
            kernels::matmul(h.data(), lw.mlp_out.data.data(), y.data(), 1, h.size(),
                            cfg.d_model);
            kernels::axpy(1.0, y.data(), x.row_mut(p).data(), cfg.d_model);
        }
    }

    res.residual_out = x;
    res.logits = Matrix(seq, cfg.vocab_size);
    for (std::size_t p = 0; p < seq; ++p) {
        auto fn = numerics::rms_norm(x.row(p), weights.final_norm_gain);
        kernels::matmul(fn.data(), weights.unembedding.data.data(), res.logits.row_mut(p).data(),
                        1, cfg.d_model, cfg.vocab_size);
    }
    return res;
}

ImageKV image_kv(const KVCacheSnapshot& cache, std::size_t layer, std::size_t kv_head) {
    if (layer >= cache.n_layers || kv_head >= cache.n_kv_heads)
        throw std::invalid_argument("image_kv: layer or head out of range");
    const std::size_t n = cache.spans.image_len();
    ImageKV out;
    out.keys = Matrix(n, cache.d_head);
    out.values = Matrix(n, cache.d_head);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = cache.spans.image_begin + i;
        std::memcpy(out.keys.row_mut(i).data(), cache.key_at(layer, kv_head, p).data(),
                    cache.d_head * sizeof(double));
        std::memcpy(out.values.row_mut(i).data(), cache.value_at(layer, kv_head, p).data(),
                    cache.d_head * sizeof(double));
    }
    return out;
}

namespace {

constexpr std::uint32_t kMagic = 0x4b564c4e; // "KVLN"
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& f, std::uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ofstream& f, double v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_doubles(std::ofstream& f, const std::vector<double>& v) {
    write_u64(f, v.size());
    f.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}
void write_matrix(std::ofstream& f, const Matrix& m) {
    write_u64(f, m.rows);
    write_u64(f, m.cols);
    f.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
}

std::uint32_t read_u32(std::ifstream& f) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::uint64_t read_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
double read_f64(std::ifstream& f) {
    double v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::vector<double> read_doubles(std::ifstream& f) {
    std::vector<double> v(read_u64(f));
    f.read(reinterpret_cast<char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
    return v;
}
Matrix read_matrix(std::ifstream& f) {
    const std::size_t rows = read_u64(f);
    const std::size_t cols = read_u64(f);
    Matrix m(rows, cols);
    f.read(reinterpret_cast<char*>(m.data.data()),
           static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    return m;
}

} // namespace

void save_weights(const ModelWeights& weights, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_weights: cannot open " + path);
    write_u32(f, kMagic);
    write_u32(f, kVersion);
    const ModelConfig& c = weights.config;
    write_u64(f, c.n_layers);
    write_u64(f, c.d_model);
    write_u64(f, c.n_q_heads);
    write_u64(f, c.n_kv_heads);
    write_u64(f, c.d_head);
    write_u64(f, c.vocab_size);
    write_u64(f, c.patch_dim);
    write_f64(f, c.rope_base);
    write_u64(f, c.seed);
    for (const auto& lw : weights.layers) {
        write_matrix(f, lw.w_q);
        write_matrix(f, lw.w_k);
        write_doubles(f, lw.b_k);
        write_matrix(f, lw.w_v);
        write_matrix(f, lw.w_o);
        write_matrix(f, lw.mlp_in);
        write_matrix(f, lw.mlp_out);
        write_doubles(f, lw.attn_norm_gain);
        write_doubles(f, lw.mlp_norm_gain);
    }
    write_matrix(f, weights.patch_proj);
    write_matrix(f, weights.token_embedding);
    write_doubles(f, weights.final_norm_gain);
    write_matrix(f, weights.unembedding);
    if (!f) throw std::runtime_error("save_weights: write failed for " + path);
}

ModelWeights load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_weights: cannot open " + path);
    if (read_u32(f) != kMagic) throw std::runtime_error("load_weights: bad magic");
    if (read_u32(f) != kVersion) throw std::runtime_error("load_weights: unsupported version");
    ModelWeights w;
    w.config.n_layers = read_u64(f);
    w.config.d_model = read_u64(f);
    w.config.n_q_heads = read_u64(f);
    w.config.n_kv_heads = read_u64(f);
    w.config.d_head = read_u64(f);
    w.config.vocab_size = read_u64(f);
    w.config.patch_dim = read_u64(f);
    w.config.rope_base = read_f64(f);
    w.config.seed = read_u64(f);
    w.config.validate();
    for (std::size_t l = 0; l < w.config.n_layers; ++l) {
        LayerWeights lw;
        lw.w_q = read_matrix(f);
        lw.w_k = read_matrix(f);
        lw.b_k = read_doubles(f);
        lw.w_v = read_matrix(f);
        lw.w_o = read_matrix(f);
        lw.mlp_in = read_matrix(f);
        lw.mlp_out = read_matrix(f);
        lw.attn_norm_gain = read_doubles(f);
        lw.mlp_norm_gain = read_doubles(f);
        w.layers.push_back(std::move(lw));
    }
    w.patch_proj = read_matrix(f);
    w.token_embedding = read_matrix(f);
    w.final_norm_gain = read_doubles(f);
    w.unembedding = read_matrix(f);
    if (!f) throw std::runtime_error("load_weights: truncated file " + path);
    return w;
}

} // namespace kvlens::model
