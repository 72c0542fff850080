#pragma once

#include <string>
#include <vector>

#include "exvae/dataset.hpp"
#include "exvae/model.hpp"
#include "exvae/prior.hpp"

namespace exvae {

// Per-point single-posterior-sample quantities; elbo = recon - kl exactly.
struct ElboTerms {
    Eigen::VectorXd elbo;
    Eigen::VectorXd kl;    // log q(z|x) - log p(z) at the sampled z
    Eigen::VectorXd recon; // log p(x|z)
};

// One posterior sample per row of x (inputs double as reconstruction targets).
ElboTerms single_sample_elbo_terms(const Model& model, const LatentPrior& prior,
                                   const Eigen::MatrixXd& x, Rng& rng);

// Importance-weighted bound for one point: logsumexp_s[log w_s] - log S with
// w_s = p(x|z_s) p(z_s) / q(z_s|x). Work is chunked so S = 5000 stays cheap
// on memory.
double iwae_bound(const Eigen::VectorXd& x, const Model& model, const LatentPrior& prior,
                  int s, Rng& rng);

Eigen::VectorXd iwae_bound_dataset(const Eigen::MatrixXd& x, const Model& model,
                                   const LatentPrior& prior, int s, Rng& rng);

// Mean KL and mean negative reconstruction over the dataset (Table-style split).
struct ElboDecomposition {
    double mean_kl = 0.0;
    double mean_neg_recon = 0.0;
    ElboTerms terms;
};
ElboDecomposition elbo_decompose(const Eigen::MatrixXd& x, const Model& model,
                                 const LatentPrior& prior, Rng& rng);

// Number of latent dimensions whose posterior-mean variance over the dataset
// exceeds the threshold (population variance).
int active_dimensions(const Eigen::MatrixXd& x, const Model& model, double threshold = 0.01);
int active_dimensions_from_means(const Eigen::MatrixXd& means, double threshold = 0.01);

// Majority-vote kNN classification error in percent. Neighbor ties break by
// smaller train index, vote ties by smaller label id.
double knn_classify(const Eigen::MatrixXd& train_means, const std::vector<int>& train_labels,
                    const Eigen::MatrixXd& test_means, const std::vector<int>& test_labels,
                    int k);

struct EvalReport {
    std::vector<double> iwae_per_point;
    double iwae_mean = 0.0;
    double mean_kl = 0.0;
    double mean_neg_recon = 0.0;
    int active_dims = 0;
    int iwae_samples = 0;
    int knn_k = 0;
    double knn_error_pct = -1.0; // negative when labels were unavailable
    std::string to_json() const;
};

void write_latents_csv(const std::string& path, const Eigen::MatrixXd& means,
                       const std::vector<int>& labels);

} // namespace exvae
