#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvlens/matrix.hpp"

// Toy multimodal decoder: patch-embedded image tokens between optional prefix
// and query text, causal grouped-query attention with rotary position
// encoding, an explicit per-layer KV cache, and pre-softmax knockout hooks.
//
// Block structure (pre-norm, residual):
//   x += W_O . concat_heads(attention(rope(q), rope(k), v))   with q,k,v from rms_norm(x)
//   x += mlp_out . silu(mlp_in . rms_norm(x))
// Keys are cached post-RoPE; values have no position encoding. Query head i
// reads kv head floor(i / group_size).
namespace kvlens::model {

struct ModelConfig {
    std::size_t n_layers = 12;
    std::size_t d_model = 64;
    std::size_t n_q_heads = 8;
    std::size_t n_kv_heads = 4;
    std::size_t d_head = 8;
    std::size_t vocab_size = 256;
    std::size_t patch_dim = 48;
    double rope_base = 10000.0;
    std::uint64_t seed = 0;

    std::size_t group_size() const { return n_q_heads / n_kv_heads; }
    void validate() const; // throws std::invalid_argument on bad dimensions
};

// Heads whose keys are made input-independent at build time: W_K columns for
// the head are scaled by input_gain (0 removes all input dependence) and the
// head's key bias is set to bias_scale times a seeded unit vector.
struct PlantSpec {
    std::vector<std::pair<std::size_t, std::size_t>> targets; // (layer, kv_head)
    double input_gain = 0.0;
    double bias_scale = 5.0;
};

struct LayerWeights {
    Matrix w_q;             // d_model x (n_q_heads * d_head)
    Matrix w_k;             // d_model x (n_kv_heads * d_head)
    std::vector<double> b_k; // n_kv_heads * d_head
    Matrix w_v;             // d_model x (n_kv_heads * d_head)
    Matrix w_o;             // (n_q_heads * d_head) x d_model
    Matrix mlp_in;          // d_model x (4 * d_model)
    Matrix mlp_out;         // (4 * d_model) x d_model
    std::vector<double> attn_norm_gain; // d_model
    std::vector<double> mlp_norm_gain;  // d_model
};

struct ModelWeights {
    ModelConfig config;
    std::vector<LayerWeights> layers;
    Matrix patch_proj;       // patch_dim x d_model
    Matrix token_embedding;  // vocab_size x d_model
    std::vector<double> final_norm_gain; // d_model
    Matrix unembedding;      // d_model x vocab_size
};

ModelWeights build_model(const ModelConfig& config, const PlantSpec* plant = nullptr);

// Rotate coordinate pairs (x_{2i}, x_{2i+1}) by position * base^(-2i/d).
std::vector<double> rope_apply(std::span<const double> x, std::size_t position, double base);

struct MultimodalInput {
    std::vector<int> prefix_text;
    Matrix image_patches; // N x patch_dim (N may be 0 for text-only probes)
    std::vector<int> query_text;

    std::size_t seq_len() const {
        return prefix_text.size() + image_patches.rows + query_text.size();
    }
};

struct Spans {
    std::size_t prefix_begin = 0;
    std::size_t image_begin = 0; // prefix: [prefix_begin, image_begin)
    std::size_t query_begin = 0; // image:  [image_begin, query_begin)
    std::size_t end = 0;         // query:  [query_begin, end)

    std::size_t image_len() const { return query_begin - image_begin; }
    bool in_image(std::size_t p) const { return p >= image_begin && p < query_begin; }
    bool in_query(std::size_t p) const { return p >= query_begin && p < end; }
};

// Post-RoPE keys and values per (layer, kv_head, position). Entries are
// written once per forward pass and never mutated.
struct KVCacheSnapshot {
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::size_t d_head = 0;
    std::size_t seq_len = 0;
    Spans spans;
    std::vector<double> keys;   // [(layer*n_kv + head)*seq + pos] * d_head
    std::vector<double> values;

    std::span<const double> key_at(std::size_t layer, std::size_t head, std::size_t pos) const;
    std::span<const double> value_at(std::size_t layer, std::size_t head, std::size_t pos) const;
};

// Attention knockout: queries in the query-text span are blocked from image
// keys in the target (layer, kv_head) cells, pre-softmax. Text keys in the
// same heads stay visible.
struct KnockoutSpec {
    std::vector<std::pair<std::size_t, std::size_t>> targets;

    bool empty() const { return targets.empty(); }
    bool contains(std::size_t layer, std::size_t kv_head) const;
};

// Per-(layer, q_head) attention weights; row p holds the weights over key
// positions 0..p (zeros above the diagonal).
struct AttentionRecord {
    std::size_t n_layers = 0;
    std::size_t n_q_heads = 0;
    std::size_t seq_len = 0;
    std::vector<double> weights; // [(layer*n_q + head)*seq + qpos]*seq + kpos

    double at(std::size_t layer, std::size_t q_head, std::size_t q_pos, std::size_t k_pos) const;
    std::span<const double> row(std::size_t layer, std::size_t q_head, std::size_t q_pos) const;
};

struct ForwardResult {
    Matrix logits;        // seq x vocab
    KVCacheSnapshot cache;
    Matrix residual_out;  // seq x d_model, residual stream after the last layer
    std::optional<AttentionRecord> attention;
};

ForwardResult forward(const ModelWeights& weights, const MultimodalInput& input,
                      const KnockoutSpec* knockout = nullptr, bool record_attention = false);

struct ImageKV {
    Matrix keys;   // N x d_head, rows ordered by image position
    Matrix values; // N x d_head
};

ImageKV image_kv(const KVCacheSnapshot& cache, std::size_t layer, std::size_t kv_head);

// Versioned binary serialization; round trips are bit-exact.
void save_weights(const ModelWeights& weights, const std::string& path);
ModelWeights load_weights(const std::string& path);

} // namespace kvlens::model
