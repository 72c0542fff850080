#pragma once

#include <string>
#include <vector>

#include "exvae/model.hpp"

namespace exvae {

// Generated pixel-probability vectors plus provenance. Images are decoder
// means (grayscale in (0,1)), not Bernoulli draws; source index -1 marks
// noise-seeded chain starts.
struct SampleBatch {
    Eigen::MatrixXd images;        // n x d_x
    std::vector<int> source_index; // exemplar id or -1
    std::vector<int> step;         // chain step for iterate(), else 0
};

// Three-step generation: uniform exemplar, z ~ N(mu(x_n), sigma^2 I), decode.
// Only the shared mean head and the scalar prior variance are consulted; the
// posterior log-variance head plays no part.
SampleBatch generate(const Model& model, const Eigen::MatrixXd& exemplar_pool, int n, Rng& rng);

// Same transition with the exemplar held fixed.
SampleBatch conditioned(const Model& model, const Eigen::VectorXd& exemplar, int n, Rng& rng);

// Chain: each output becomes the next exemplar. The seed image may be noise.
SampleBatch iterate(const Model& model, const Eigen::VectorXd& seed_image, int steps, Rng& rng);

// Evenly spaced latents between mu(x_a) and mu(x_b), decoded; steps >= 2.
SampleBatch interpolate(const Model& model, const Eigen::VectorXd& x_a,
                        const Eigen::VectorXd& x_b, int steps);

// Grid of images as a binary PGM (P5, maxval 255). Grid fills row-major;
// missing cells stay black.
void write_pgm_grid(const std::string& path, const Eigen::MatrixXd& images,
                    int grid_rows, int grid_cols, int img_rows, int img_cols);

} // namespace exvae
