#include "exvae/prior.hpp"

#include <cmath>
#include <limits>

#include "exvae/errors.hpp"
#include "exvae/numerics.hpp"

namespace exvae {

namespace {

// -d log(sqrt(2 pi) sigma) - log N
double log_norm_const(int d, double sigma2, std::int64_t population) {
    return -0.5 * d * (std::log(2.0 * M_PI) + std::log(sigma2)) -
           std::log(static_cast<double>(population));
}

} // namespace

void MixtureView::check() const {
    if (means == nullptr || means->rows() < 1)
        throw ContractError("MixtureView: needs at least one component");
    if (!(sigma2 > 0.0))
        throw ContractError("MixtureView: sigma2 must be positive");
    if (population < means->rows())
        throw ContractError("MixtureView: population smaller than component count");
}

double log_mixture_density(const Eigen::VectorXd& z, const MixtureView& view) {
    view.check();
    if (z.size() != view.means->cols())
        throw ContractError("log_mixture_density: dimension mismatch");
    const double inv = 1.0 / (2.0 * view.sigma2);
    Eigen::VectorXd logits(view.means->rows());
    for (Eigen::Index j = 0; j < view.means->rows(); ++j)
        logits(j) = -(z.transpose() - view.means->row(j)).squaredNorm() * inv;
    return log_norm_const(static_cast<int>(z.size()), view.sigma2, view.population) +
           log_sum_exp(logits);
}

Eigen::VectorXd log_mixture_density_batch(const Eigen::MatrixXd& z, const MixtureView& view) {
    view.check();
    if (z.cols() != view.means->cols())
        throw ContractError("log_mixture_density_batch: dimension mismatch");
    const double c = log_norm_const(static_cast<int>(z.cols()), view.sigma2, view.population);
    const double inv = 1.0 / (2.0 * view.sigma2);

    const Eigen::VectorXd z2 = z.rowwise().squaredNorm();
    const Eigen::VectorXd u2 = view.means->rowwise().squaredNorm();
    Eigen::MatrixXd d2 = -2.0 * (z * view.means->transpose());
    d2.colwise() += z2;
    d2.rowwise() += u2.transpose();

    Eigen::VectorXd out(z.rows());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        Eigen::VectorXd logits = (-inv) * d2.row(i).transpose();
        out(i) = c + log_sum_exp(logits);
    }
    return out;
}

double log_knn_prior(const Eigen::VectorXd& z, const Eigen::MatrixXd& knn_means,
                     double sigma2, std::int64_t population_n) {
    if (knn_means.rows() < 1)
        throw ContractError("log_knn_prior: no retrieved means");
    if (knn_means.rows() > population_n)
        throw ContractError("log_knn_prior: K exceeds population");
    MixtureView view{&knn_means, sigma2, population_n};
    return log_mixture_density(z, view);
}

double parzen_log_density(const Eigen::VectorXd& x, const Eigen::MatrixXd& exemplars, double sigma2) {
    MixtureView view{&exemplars, sigma2, exemplars.rows()};
    return log_mixture_density(x, view);
}

double fit_bandwidth(const Eigen::MatrixXd& exemplars, const Eigen::MatrixXd& validation,
                     double sigma_lo, double sigma_hi, int grid_points) {
    if (exemplars.rows() == 0 || validation.rows() == 0)
        throw ArgumentError("fit_bandwidth: empty exemplar or validation set");
    if (grid_points < 1 || !(sigma_lo > 0.0) || sigma_hi < sigma_lo)
        throw ArgumentError("fit_bandwidth: bad grid");

    const double lo = std::log(sigma_lo), hi = std::log(sigma_hi);
    double best_sigma = 0.0, best_score = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < grid_points; ++k) {
        const double sigma =
            grid_points == 1 ? sigma_lo : std::exp(lo + (hi - lo) * k / (grid_points - 1));
        MixtureView view{&exemplars, sigma * sigma, exemplars.rows()};
        const double score = log_mixture_density_batch(validation, view).mean();
        if (score > best_score) { // strict: ties keep the earlier (smaller) sigma
            best_score = score;
            best_sigma = sigma;
        }
    }
    return best_sigma * best_sigma;
}

double LatentPrior::log_density(const Eigen::VectorXd& z) const {
    if (kind == Kind::standard_gaussian)
        return -0.5 * (z.size() * std::log(2.0 * M_PI) + z.squaredNorm());
    return log_mixture_density(z, view);
}

Eigen::VectorXd LatentPrior::log_density_batch(const Eigen::MatrixXd& z) const {
    if (kind == Kind::standard_gaussian) {
        Eigen::VectorXd out(z.rows());
        for (Eigen::Index i = 0; i < z.rows(); ++i)
            out(i) = -0.5 * (z.cols() * std::log(2.0 * M_PI) + z.row(i).squaredNorm());
        return out;
    }
    return log_mixture_density_batch(z, view);
}

} // namespace exvae
