#include "exvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "exvae/errors.hpp"
#include "exvae/numerics.hpp"

namespace exvae {

namespace {
const double kLn2Pi = std::log(2.0 * M_PI);
}

ElboTerms single_sample_elbo_terms(const Model& model, const LatentPrior& prior,
                                   const Eigen::MatrixXd& x, Rng& rng) {
    const int n = static_cast<int>(x.rows());
    const int d_z = model.config().d_z;

    const Model::EncodeBatch enc = model.encode_batch(x);
    Eigen::MatrixXd eps(n, d_z);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d_z; ++j) eps(i, j) = rng.normal();

    const Eigen::MatrixXd z =
        enc.mean + (enc.log_var.array() / 2.0).exp().matrix().cwiseProduct(eps);

    ElboTerms t;
    t.recon = bernoulli_log_prob_rows(x, model.decode_batch(z));

    // log q at the sampled z: z - mean = exp(log_var/2) * eps exactly
    Eigen::VectorXd log_q(n);
    for (int i = 0; i < n; ++i)
        log_q(i) = -0.5 * (d_z * kLn2Pi + enc.log_var.row(i).sum() + eps.row(i).squaredNorm());

    const Eigen::VectorXd log_p = prior.log_density_batch(z);
    t.kl = log_q - log_p;
    t.elbo = t.recon - t.kl;
    return t;
}

namespace {

// Importance weights for a chunk of posterior samples of a single point.
void iwae_chunk(const Eigen::VectorXd& x, const Model& model, const LatentPrior& prior,
                const DiagGaussian& q, int count, Rng& rng, std::vector<double>& log_w) {
    const int d_z = model.config().d_z;
    Eigen::MatrixXd eps(count, d_z);
    for (int s = 0; s < count; ++s)
        for (int j = 0; j < d_z; ++j) eps(s, j) = rng.normal();

    Eigen::MatrixXd z(count, d_z);
    for (int s = 0; s < count; ++s)
        z.row(s) = (q.mean.array() + (q.log_var.array() / 2.0).exp() * eps.row(s).transpose().array())
                       .transpose();

    const Eigen::MatrixXd probs = model.decode_batch(z);
    const Eigen::VectorXd log_p = prior.log_density_batch(z);
    for (int s = 0; s < count; ++s) {
        const double recon = bernoulli_log_prob(x, probs.row(s).transpose());
        const double log_q =
            -0.5 * (d_z * kLn2Pi + q.log_var.sum() + eps.row(s).squaredNorm());
        log_w.push_back(recon + log_p(s) - log_q);
    }
}

} // namespace

double iwae_bound(const Eigen::VectorXd& x, const Model& model, const LatentPrior& prior,
                  int s, Rng& rng) {
    if (s < 1) throw ArgumentError("iwae_bound: sample count must be at least 1");
    const DiagGaussian q = model.encode(x);
    std::vector<double> log_w;
    log_w.reserve(static_cast<std::size_t>(s));
    constexpr int kChunk = 512;
    for (int done = 0; done < s; done += kChunk)
        iwae_chunk(x, model, prior, q, std::min(kChunk, s - done), rng, log_w);
    return log_sum_exp(log_w) - std::log(static_cast<double>(s));
}

Eigen::VectorXd iwae_bound_dataset(const Eigen::MatrixXd& x, const Model& model,
                                   const LatentPrior& prior, int s, Rng& rng) {
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out(i) = iwae_bound(x.row(i).transpose(), model, prior, s, rng);
    return out;
}

ElboDecomposition elbo_decompose(const Eigen::MatrixXd& x, const Model& model,
                                 const LatentPrior& prior, Rng& rng) {
    ElboDecomposition d;
    d.terms = single_sample_elbo_terms(model, prior, x, rng);
    d.mean_kl = d.terms.kl.mean();
    d.mean_neg_recon = -d.terms.recon.mean();
    return d;
}

int active_dimensions_from_means(const Eigen::MatrixXd& means, double threshold) {
    if (means.rows() == 0) throw ArgumentError("active_dimensions: empty dataset");
    const Eigen::RowVectorXd center = means.colwise().mean();
    int active = 0;
    for (Eigen::Index j = 0; j < means.cols(); ++j) {
        const double var = (means.col(j).array() - center(j)).square().mean();
        if (var > threshold) ++active;
    }
    return active;
}

int active_dimensions(const Eigen::MatrixXd& x, const Model& model, double threshold) {
    return active_dimensions_from_means(model.prior_means(x), threshold);
}

double knn_classify(const Eigen::MatrixXd& train_means, const std::vector<int>& train_labels,
                    const Eigen::MatrixXd& test_means, const std::vector<int>& test_labels,
                    int k) {
    const int n_train = static_cast<int>(train_means.rows());
    const int n_test = static_cast<int>(test_means.rows());
    if (k < 1 || k > n_train) throw ArgumentError("knn_classify: need 1 <= k <= |train|");
    if (static_cast<int>(train_labels.size()) != n_train ||
        static_cast<int>(test_labels.size()) != n_test)
        throw ContractError("knn_classify: label count mismatch");

    int errors = 0;
    std::vector<std::pair<double, int>> scored(static_cast<std::size_t>(n_train));
    for (int t = 0; t < n_test; ++t) {
        for (int i = 0; i < n_train; ++i)
            scored[static_cast<std::size_t>(i)] = {
                (train_means.row(i) - test_means.row(t)).squaredNorm(), i};
        std::partial_sort(scored.begin(), scored.begin() + k, scored.end());

        int votes[10] = {0};
        for (int j = 0; j < k; ++j) ++votes[train_labels[static_cast<std::size_t>(scored[
            static_cast<std::size_t>(j)].second)]];
        int best_label = 0;
        for (int c = 1; c < 10; ++c)
            if (votes[c] > votes[best_label]) best_label = c; // ties keep the smaller id
        if (best_label != test_labels[static_cast<std::size_t>(t)]) ++errors;
    }
    return 100.0 * errors / n_test;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["iwae_mean"] = iwae_mean;
    j["iwae_samples"] = iwae_samples;
    j["mean_kl"] = mean_kl;
    j["mean_neg_recon"] = mean_neg_recon;
    j["active_dims"] = active_dims;
    j["knn_k"] = knn_k;
    if (knn_error_pct >= 0.0) j["knn_error_pct"] = knn_error_pct;
    j["iwae_per_point"] = iwae_per_point;
    return j.dump();
}

void write_latents_csv(const std::string& path, const Eigen::MatrixXd& means,
                       const std::vector<int>& labels) {
    if (!labels.empty() && static_cast<Eigen::Index>(labels.size()) != means.rows())
        throw ContractError("write_latents_csv: label count mismatch");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    for (Eigen::Index i = 0; i < means.rows(); ++i) {
        for (Eigen::Index j = 0; j < means.cols(); ++j) {
            if (j) out << ',';
            out << means(i, j);
        }
        if (!labels.empty()) out << ',' << labels[static_cast<std::size_t>(i)];
        out << '\n';
    }
    if (!out) throw IoError("write failed: " + path);
}

} // namespace exvae
