#include "kvlens/plants.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "kvlens/synthdata.hpp"
#include "kvlens/tokenizer.hpp"

namespace kvlens::plants {

void add_reader(Matrix& w, std::span<const double> in_dir, std::span<const double> out,
                std::size_t col0, double scale) {
    if (in_dir.size() != w.rows) throw std::invalid_argument("add_reader: in_dir dimension");
    if (col0 + out.size() > w.cols) throw std::invalid_argument("add_reader: column overflow");
    for (std::size_t r = 0; r < w.rows; ++r)
        for (std::size_t j = 0; j < out.size(); ++j)
            w.at(r, col0 + j) += scale * in_dir[r] * out[j];
}

void add_head_writer(Matrix& w_o, std::size_t q_head, std::size_t d_head,
                     std::span<const double> head_dir, std::span<const double> res_dir,
                     double scale) {
    if (head_dir.size() != d_head) throw std::invalid_argument("add_head_writer: head_dir size");
    if (res_dir.size() != w_o.cols) throw std::invalid_argument("add_head_writer: res_dir size");
    const std::size_t row0 = q_head * d_head;
    for (std::size_t i = 0; i < d_head; ++i)
        for (std::size_t c = 0; c < w_o.cols; ++c)
            w_o.at(row0 + i, c) += scale * head_dir[i] * res_dir[c];
}

void zero_columns(Matrix& w, std::size_t col0, std::size_t width) {
    for (std::size_t r = 0; r < w.rows; ++r)
        for (std::size_t c = col0; c < col0 + width; ++c) w.at(r, c) = 0.0;
}

void zero_rows(Matrix& w, std::size_t row0, std::size_t count) {
    for (std::size_t r = row0; r < row0 + count; ++r)
        for (std::size_t c = 0; c < w.cols; ++c) w.at(r, c) = 0.0;
}

std::vector<double> normalized(std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n == 0.0) throw std::invalid_argument("normalized: zero vector");
    for (auto& x : v) x /= n;
    return v;
}

namespace {

double dot_vec(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Solve (symmetric positive definite) G x = b by Gaussian elimination with
// partial pivoting; G is small (content bases are a dozen vectors).
std::vector<double> solve(std::vector<std::vector<double>> g, std::vector<double> b) {
    const std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(g[r][col]) > std::abs(g[pivot][col])) pivot = r;
        std::swap(g[col], g[pivot]);
        std::swap(b[col], b[pivot]);
        if (std::abs(g[col][col]) < 1e-12)
            throw std::runtime_error("dual_basis: content directions are degenerate");
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = g[r][col] / g[col][col];
            for (std::size_t c = col; c < n; ++c) g[r][c] -= f * g[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / g[i][i];
    return x;
}

} // namespace

std::vector<std::vector<double>> dual_basis(const std::vector<std::vector<double>>& basis) {
    const std::size_t n = basis.size();
    if (n == 0) return {};
    const std::size_t d = basis[0].size();
    std::vector<std::vector<double>> gram(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) gram[i][j] = dot_vec(basis[i], basis[j]);

    std::vector<std::vector<double>> duals(n, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> e(n, 0.0);
        e[i] = 1.0;
        const auto coeff = solve(gram, e);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < d; ++k) duals[i][k] += coeff[j] * basis[j][k];
    }
    return duals;
}

std::vector<double> orthogonal_complement(std::vector<double> v,
                                          const std::vector<std::vector<double>>& against) {
    // Orthonormalize the family first; sequential subtraction against a
    // non-orthogonal family would reintroduce earlier components.
    std::vector<std::vector<double>> ortho;
    for (auto a : against) {
        for (const auto& q : ortho) {
            const double c = dot_vec(a, q);
            for (std::size_t i = 0; i < a.size(); ++i) a[i] -= c * q[i];
        }
        const double n = std::sqrt(dot_vec(a, a));
        if (n < 1e-12) continue;
        for (auto& x : a) x /= n;
        ortho.push_back(std::move(a));
    }
    for (const auto& q : ortho) {
        const double c = dot_vec(v, q);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * q[i];
    }
    return normalized(std::move(v));
}

std::vector<double> pixel_model_direction(const model::ModelWeights& w,
                                          std::span<const double> pixels) {
    const auto patch_vec =
        synth::project_pixels(pixels, static_cast<int>(w.config.patch_dim));
    std::vector<double> out(w.config.d_model, 0.0);
    for (std::size_t j = 0; j < w.config.d_model; ++j)
        for (std::size_t i = 0; i < patch_vec.size(); ++i)
            out[j] += patch_vec[i] * w.patch_proj.at(i, j);
    return out;
}

OffsetAttention offset_attention(std::size_t d_head, double beta, long offset,
                                 double rope_base) {
    if (d_head % 2 != 0) throw std::invalid_argument("offset_attention: d_head must be even");
    OffsetAttention oa;
    oa.key.assign(d_head, 0.0);
    oa.query.assign(d_head, 0.0);
    for (std::size_t i = 0; i < d_head / 2; ++i) {
        // key pair = (beta, 0); query pair = key rotated by -offset positions
        // so rope(query, p) . rope(key, p - offset) = beta^2 per pair.
        const double rate =
            std::pow(rope_base, -2.0 * static_cast<double>(i) / static_cast<double>(d_head));
        const double th = -static_cast<double>(offset) * rate;
        oa.key[2 * i] = beta;
        oa.query[2 * i] = beta * std::cos(th);
        oa.query[2 * i + 1] = beta * std::sin(th);
    }
    return oa;
}

ContentDirections content_directions(const model::ModelWeights& w) {
    ContentDirections cd;
    for (int ch = 0; ch < synth::kPixelChannels; ++ch) {
        std::vector<double> px(synth::kRawPatchDim, 0.0);
        for (int i = 0; i < synth::kPatchPixels * synth::kPatchPixels; ++i)
            px[static_cast<std::size_t>(i * synth::kPixelChannels + ch)] = 1.0;
        cd.rgb.push_back(pixel_model_direction(w, px));
    }
    for (int s = 0; s < 3; ++s)
        cd.shape.push_back(
            pixel_model_direction(w, synth::shape_texture_pixels(static_cast<synth::Shape>(s))));

    std::vector<std::vector<double>> basis = cd.rgb;
    for (const auto& v : cd.shape) basis.push_back(v);
    auto duals = dual_basis(basis);
    for (int ch = 0; ch < synth::kPixelChannels; ++ch)
        cd.rgb_reader.push_back(duals[static_cast<std::size_t>(ch)]);
    for (int s = 0; s < 3; ++s)
        cd.shape_reader.push_back(
            duals[static_cast<std::size_t>(synth::kPixelChannels + s)]);
    return cd;
}

std::size_t shape_channel(int shape_index) { return static_cast<std::size_t>(shape_index); }

void plant_probe_value_head(model::ModelWeights& w, std::size_t kv_head, double scale) {
    const auto& cfg = w.config;
    if (kv_head >= cfg.n_kv_heads)
        throw std::invalid_argument("plant_probe_value_head: head out of range");
    if (cfg.d_head < 8)
        throw std::invalid_argument("plant_probe_value_head: needs d_head >= 8");

    auto cd = content_directions(w);
    auto& lw = w.layers[0];
    const std::size_t col0 = kv_head * cfg.d_head;
    zero_columns(lw.w_v, col0, cfg.d_head);

    auto channel = [&](std::size_t i) {
        std::vector<double> v(cfg.d_head, 0.0);
        v[i] = 1.0;
        return v;
    };

    // One dual basis over {rgb dirs, texture dirs, shape word embeddings}:
    // every reader responds to exactly one direction and annihilates the
    // others, so text values carry no image channels and image values carry
    // no word channels.
    std::vector<std::vector<double>> basis = cd.rgb;
    for (const auto& v : cd.shape) basis.push_back(v);
    for (int s = 0; s < 3; ++s) {
        const int id = tok::word_id(synth::shape_word(static_cast<synth::Shape>(s)));
        std::vector<double> e(cfg.d_model);
        for (std::size_t j = 0; j < cfg.d_model; ++j)
            e[j] = w.token_embedding.at(static_cast<std::size_t>(id), j);
        basis.push_back(std::move(e));
    }
    auto duals = dual_basis(basis);
    const std::size_t n_rgb = cd.rgb.size();

    // Shape channels 0..2 (textures and the matching shape words), rgb
    // channels 3..5.
    for (std::size_t ch = 0; ch < n_rgb; ++ch)
        add_reader(lw.w_v, duals[ch], channel(3 + ch), col0, scale);
    for (int s = 0; s < 3; ++s) {
        add_reader(lw.w_v, duals[n_rgb + static_cast<std::size_t>(s)],
                   channel(shape_channel(s)), col0, scale);
        add_reader(lw.w_v, duals[n_rgb + 3 + static_cast<std::size_t>(s)],
                   channel(shape_channel(s)), col0, scale);
    }
}

} // namespace kvlens::plants
