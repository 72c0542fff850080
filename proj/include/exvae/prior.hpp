#pragma once

#include <cstdint>

#include <Eigen/Dense>

namespace exvae {

// Immutable snapshot of an isotropic Gaussian mixture with equal weights:
// rows of `means` are the component centers, all sharing variance sigma2.
// `population` is the log-denominator N, which may exceed the number of rows
// when the mixture has been truncated to a subset of its components.
struct MixtureView {
    const Eigen::MatrixXd* means = nullptr; // M' x d
    double sigma2 = 1.0;
    std::int64_t population = 0; // N >= M'

    std::int64_t component_count() const { return means->rows(); }
    int dim() const { return static_cast<int>(means->cols()); }
    void check() const;
};

// log of (1/N) sum_j N(z | mu_j, sigma2 I): exact when population equals the
// row count, the truncated lower-bound value otherwise.
double log_mixture_density(const Eigen::VectorXd& z, const MixtureView& view);

// Batched over rows of Z; distances via the |z|^2 - 2 z.mu + |mu|^2 expansion
// so a minibatch-by-exemplar block is a single matrix product.
Eigen::VectorXd log_mixture_density_batch(const Eigen::MatrixXd& z, const MixtureView& view);

// Truncated prior over K retrieved component means with denominator N.
// Always a lower bound on the full mixture value: dropping components drops
// non-negative terms from the inner sum.
double log_knn_prior(const Eigen::VectorXd& z, const Eigen::MatrixXd& knn_means,
                     double sigma2, std::int64_t population_n);

// Pixel-space Parzen window estimate of log p(x): the same mixture math with
// the exemplars themselves as centers.
double parzen_log_density(const Eigen::VectorXd& x, const Eigen::MatrixXd& exemplars, double sigma2);

// Grid search for the Parzen bandwidth: log-spaced sigma values (default 20
// points in [0.01, 1.0]), maximizing mean validation log density; ties take
// the smaller sigma. Returns sigma^2.
double fit_bandwidth(const Eigen::MatrixXd& exemplars, const Eigen::MatrixXd& validation,
                     double sigma_lo = 0.01, double sigma_hi = 1.0, int grid_points = 20);

// Latent prior abstraction shared by the trainer and evaluators: either the
// exemplar mixture over a view or a standard Gaussian.
struct LatentPrior {
    enum class Kind { exemplar_mixture, standard_gaussian };
    Kind kind = Kind::standard_gaussian;
    MixtureView view; // valid iff kind == exemplar_mixture

    static LatentPrior gaussian() { return LatentPrior{}; }
    static LatentPrior mixture(const MixtureView& v) {
        return LatentPrior{Kind::exemplar_mixture, v};
    }

    double log_density(const Eigen::VectorXd& z) const;
    Eigen::VectorXd log_density_batch(const Eigen::MatrixXd& z) const;
};

} // namespace exvae
