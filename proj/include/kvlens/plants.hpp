#pragma once

#include <span>
#include <vector>

#include "kvlens/matrix.hpp"
#include "kvlens/model.hpp"

// Weight surgery for engineered constructions: rank-1 reader/writer updates,
// dual bases that read one content direction exactly while annihilating the
// rest, and position-offset attention patterns built from the rope pair
// structure. These are the building blocks behind the planted models that
// give exact ground truth for probes, interventions and prefixing.
namespace kvlens::plants {

// Adds scale * <xn, in_dir> * out into the projection's output columns
// [col0, col0+out.size()): after the update, xn . W gains that term.
void add_reader(Matrix& w, std::span<const double> in_dir, std::span<const double> out,
                std::size_t col0, double scale = 1.0);

// W_O counterpart: head output component along head_dir writes res_dir into
// the residual stream.
void add_head_writer(Matrix& w_o, std::size_t q_head, std::size_t d_head,
                     std::span<const double> head_dir, std::span<const double> res_dir,
                     double scale = 1.0);

void zero_columns(Matrix& w, std::size_t col0, std::size_t width);
void zero_rows(Matrix& w, std::size_t row0, std::size_t count);

std::vector<double> normalized(std::vector<double> v);

// Dual basis: rows r_i with <r_i, basis_j> = delta_ij (exact up to the linear
// solve). Readers built from dual rows respond to exactly one direction in
// the span and ignore the others.
std::vector<std::vector<double>> dual_basis(const std::vector<std::vector<double>>& basis);

// Component of v orthogonal to all of `against` (Gram-Schmidt, normalized).
std::vector<double> orthogonal_complement(std::vector<double> v,
                                          const std::vector<std::vector<double>>& against);

// Model-space direction of a raw pixel pattern: pixels -> fixed synth
// projection -> patch_proj.
std::vector<double> pixel_model_direction(const model::ModelWeights& w,
                                          std::span<const double> pixels);

// Query/key pair such that rope(query, p) . rope(key, p - offset) peaks at
// the given relative offset; beta controls sharpness.
struct OffsetAttention {
    std::vector<double> query;
    std::vector<double> key;
};
OffsetAttention offset_attention(std::size_t d_head, double beta, long offset, double rope_base);

// Exact content directions of the synthetic renderer in model space. The
// pixel content of any noise-free patch lies in the span of the 3 rgb
// channel directions and the 3 shape textures, so dual readers over those 6
// vectors recover per-patch rgb sums and texture coefficients exactly.
struct ContentDirections {
    std::vector<std::vector<double>> rgb;   // channel indicator directions
    std::vector<std::vector<double>> shape; // texture directions
    std::vector<std::vector<double>> rgb_reader;
    std::vector<std::vector<double>> shape_reader;
};
ContentDirections content_directions(const model::ModelWeights& w);

// Rewrites the value projection of (layer 0, kv_head) so that image values
// expose shape channels (head dims 0..2) and rgb channels (head dims 3..5)
// read exactly from the renderer's content directions, and shape-word token
// embeddings map onto the matching shape channel. Image values become
// linearly separable by shape/color and dot-product aligned with class text.
void plant_probe_value_head(model::ModelWeights& w, std::size_t kv_head, double scale = 1.0);

// Head-space channel of a shape under plant_probe_value_head.
std::size_t shape_channel(int shape_index);

} // namespace kvlens::plants
