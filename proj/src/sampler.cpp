#include "exvae/sampler.hpp"

#include <cmath>
#include <fstream>

#include "exvae/errors.hpp"

namespace exvae {

namespace {

Eigen::VectorXd prior_draw(const Model& model, const Eigen::VectorXd& exemplar, Rng& rng) {
    const Eigen::VectorXd mu = model.prior_encode(exemplar);
    const double sigma = std::sqrt(model.sigma2());
    Eigen::VectorXd z(mu.size());
    for (Eigen::Index j = 0; j < mu.size(); ++j) z(j) = mu(j) + sigma * rng.normal();
    return z;
}

} // namespace

SampleBatch generate(const Model& model, const Eigen::MatrixXd& exemplar_pool, int n, Rng& rng) {
    if (exemplar_pool.rows() == 0) throw ArgumentError("generate: empty exemplar pool");
    if (n < 1) throw ArgumentError("generate: n must be positive");

    SampleBatch batch;
    batch.images.resize(n, model.config().d_x);
    batch.source_index.resize(static_cast<std::size_t>(n));
    batch.step.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const int src = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(exemplar_pool.rows())));
        batch.source_index[static_cast<std::size_t>(i)] = src;
        const Eigen::VectorXd z = prior_draw(model, exemplar_pool.row(src).transpose(), rng);
        batch.images.row(i) = model.decode(z).transpose();
    }
    return batch;
}

SampleBatch conditioned(const Model& model, const Eigen::VectorXd& exemplar, int n, Rng& rng) {
    if (n < 1) throw ArgumentError("conditioned: n must be positive");
    SampleBatch batch;
    batch.images.resize(n, model.config().d_x);
    batch.source_index.assign(static_cast<std::size_t>(n), 0);
    batch.step.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd z = prior_draw(model, exemplar, rng);
        batch.images.row(i) = model.decode(z).transpose();
    }
    return batch;
}

SampleBatch iterate(const Model& model, const Eigen::VectorXd& seed_image, int steps, Rng& rng) {
    if (steps < 1) throw ArgumentError("iterate: steps must be at least 1");
    SampleBatch chain;
    chain.images.resize(steps, model.config().d_x);
    chain.source_index.assign(static_cast<std::size_t>(steps), -1);
    chain.step.resize(static_cast<std::size_t>(steps));
    Eigen::VectorXd current = seed_image;
    for (int t = 0; t < steps; ++t) {
        const Eigen::VectorXd z = prior_draw(model, current, rng);
        current = model.decode(z);
        chain.images.row(t) = current.transpose();
        chain.step[static_cast<std::size_t>(t)] = t + 1;
    }
    return chain;
}

SampleBatch interpolate(const Model& model, const Eigen::VectorXd& x_a,
                        const Eigen::VectorXd& x_b, int steps) {
    if (steps < 2) throw ArgumentError("interpolate: steps must be at least 2");
    const Eigen::VectorXd mu_a = model.prior_encode(x_a);
    const Eigen::VectorXd mu_b = model.prior_encode(x_b);
    SampleBatch path;
    path.images.resize(steps, model.config().d_x);
    path.source_index.assign(static_cast<std::size_t>(steps), -1);
    path.step.resize(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
        const double w = static_cast<double>(t) / (steps - 1);
        const Eigen::VectorXd z = (1.0 - w) * mu_a + w * mu_b;
        path.images.row(t) = model.decode(z).transpose();
        path.step[static_cast<std::size_t>(t)] = t;
    }
    return path;
}

void write_pgm_grid(const std::string& path, const Eigen::MatrixXd& images,
                    int grid_rows, int grid_cols, int img_rows, int img_cols) {
    if (img_rows * img_cols != images.cols())
        throw ContractError("write_pgm_grid: image dims do not match flattened size");
    if (grid_rows < 1 || grid_cols < 1)
        throw ArgumentError("write_pgm_grid: grid dims must be positive");

    const int h = grid_rows * img_rows;
    const int w = grid_cols * img_cols;
    std::vector<std::uint8_t> canvas(static_cast<std::size_t>(h) * w, 0);
    for (int g = 0; g < grid_rows * grid_cols && g < images.rows(); ++g) {
        const int gr = g / grid_cols, gc = g % grid_cols;
        for (int r = 0; r < img_rows; ++r)
            for (int c = 0; c < img_cols; ++c) {
                const double v = images(g, static_cast<Eigen::Index>(r) * img_cols + c);
                canvas[static_cast<std::size_t>(gr * img_rows + r) * w + gc * img_cols + c] =
                    static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            }
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(canvas.data()), static_cast<std::streamsize>(canvas.size()));
    if (!out) throw IoError("write failed: " + path);
}

} // namespace exvae
