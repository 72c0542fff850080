#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "exvae/cache.hpp"
#include "exvae/dataset.hpp"
#include "exvae/model.hpp"
#include "exvae/optimizer.hpp"
#include "exvae/prior.hpp"

namespace exvae {

enum class PriorKind { exemplar, standard_gaussian };

struct TrainConfig {
    int d_z = 40;
    int hidden = 300;
    int batch = 100;
    double lr = 5e-4;
    double mn_ratio = 0.5;   // exemplar subset size as a fraction of N
    int k_neighbors = 10;
    int anneal_epochs = 100; // linear KL warm-up horizon
    int patience = 50;       // epochs of no validation improvement before stopping
    int max_epochs = 2000;
    std::uint64_t seed = 0;
    PriorKind prior_kind = PriorKind::exemplar;
    bool loo = true;                // leave-one-out + subsampling; off = full prior incl. self
    bool knn_global_filter = false; // query global kNN then intersect with pi (default: kNN within pi)

    void validate(int n_train) const;
};

// Uniform random size-M subset of {0..n-1} \ {i}, sorted ascending.
std::vector<int> subsample_indices(int n, int i, int m, Rng& rng);

// min(1, epoch / anneal_epochs); anneal_epochs <= 0 means no annealing.
double kl_anneal_weight(int epoch, int anneal_epochs);

struct ElboParts {
    double objective;     // annealed: recon - beta * (log q - log prior)
    double objective_raw; // beta = 1
    double recon;
    double kl; // log q - log prior at the sampled z
    bool fallback_used = false;
};

// Single-sample estimate of the training objective for one data point.
// `x` is the (binarized) encoder input and reconstruction target; `pi` the
// exemplar subset (sorted, exclusive of i when LOO is on); `pool` provides
// raw exemplar images for the fresh re-encoding of retrieved neighbors.
ElboParts elbo_exemplar(const Eigen::VectorXd& x, int i, const Model& model,
                        const ExemplarCache& cache, const LabeledDataset& pool,
                        std::span<const int> pi, const TrainConfig& cfg, Rng& rng,
                        double beta = 1.0);

// Same estimator with a standard Gaussian prior.
ElboParts elbo_gaussian(const Eigen::VectorXd& x, const Model& model, Rng& rng,
                        double beta = 1.0);

// ---- batched training step --------------------------------------------------

// All stochastic choices for one minibatch, frozen up front so a step is a
// deterministic function of (params, plan).
struct StepPlan {
    std::vector<int> indices;            // exemplar ids, batch order
    Eigen::MatrixXd x_bin;               // B x d_x binarized inputs/targets
    Eigen::MatrixXd eps;                 // B x d_z reparameterization noise
    std::vector<std::vector<int>> pis;   // per-sample sorted exemplar subsets
};

struct StepResult {
    Var loss;                      // scalar node: -mean(annealed objective)
    double mean_obj_raw = 0.0;
    double mean_obj_annealed = 0.0;
    double mean_recon = 0.0;
    double mean_kl = 0.0;
    int fallback_count = 0;
    Eigen::MatrixXd batch_means;   // fresh posterior means, B x d_z
    std::vector<int> neighbor_ids; // union of retrieved exemplars (sorted)
    Eigen::MatrixXd neighbor_means;
};

StepResult build_step(Graph& g, const BoundModel& bm, const ExemplarCache* cache,
                      const LabeledDataset& pool, const StepPlan& plan, double beta,
                      const TrainConfig& cfg);

// ---- training loop ------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_elbo = 0.0;          // raw (beta = 1) objective mean
    double train_elbo_annealed = 0.0; // what the optimizer actually saw
    double valid_elbo = 0.0;
    double kl = 0.0;
    double recon = 0.0;
    double sigma2 = 0.0;
    long fallback_count = 0;
};

struct TrainCallbacks {
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(const Model&, const ExemplarCache*, const EpochRecord&)> on_improve;
};

struct TrainResult {
    Model model; // best-validation checkpoint
    int best_epoch = 0;
    double best_valid_elbo = 0.0;
    std::vector<EpochRecord> log;
};

// Full training run. Validation ELBO is the evaluation-mode bound: beta = 1,
// untruncated prior over all train exemplars with freshly computed means, no
// leave-one-out, no subsampling. Validation inputs are re-binarized with the
// same per-run substream every epoch so the curve is comparable across epochs.
TrainResult train(const LabeledDataset& train_set, const LabeledDataset& valid_set,
                  const TrainConfig& cfg, const TrainCallbacks& callbacks = {});

} // namespace exvae
