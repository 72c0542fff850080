#pragma once

#include <optional>
#include <vector>

#include "exvae/dataset.hpp"
#include "exvae/model.hpp"
#include "exvae/optimizer.hpp"

namespace exvae {

// ReLU MLP with a 10-way softmax head.
class Classifier {
public:
    Classifier(int d_in, std::vector<int> hidden, Rng& init_rng);
    Classifier(int d_in, std::vector<int> hidden, ParamTree params);

    ParamTree& params() { return params_; }
    const ParamTree& params() const { return params_; }
    const std::vector<int>& hidden() const { return hidden_; }
    int input_dim() const { return d_in_; }

    Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
    std::vector<int> predict(const Eigen::MatrixXd& x) const;
    double error_pct(const Eigen::MatrixXd& x, const std::vector<int>& labels) const;

private:
    int d_in_;
    std::vector<int> hidden_;
    ParamTree params_;
};

struct AugConfig {
    double lambda = 0.4;    // weight on the real-data term; 1 disables synthesis
    double smoothing = 0.1; // label smoothing mass, spread over non-target classes
    double lr = 5e-4;
    int batch = 100;
    int epochs = 20;
    std::vector<int> hidden = {1024, 1024};
    std::uint64_t seed = 0;
    bool union_mode = false; // fold the validation split into training

    void validate() const;
};

// One synthetic counterpart per row: z ~ N(mu(x_i), sigma^2 I), then the
// decoder mean. Labels transfer unchanged (the caller keeps them aligned).
Eigen::MatrixXd synth_minibatch(const Model& vae, const Eigen::MatrixXd& x, Rng& rng);

// -sum_i [ lambda * ls_ll(x_i) + (1-lambda) * ls_ll(x_synth_i) ] where ls_ll
// is the label-smoothed log-likelihood: target gets 1 - alpha, the other
// nine classes alpha/9 each.
double mixed_loss(const Classifier& clf, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& x_synth, const std::vector<int>& labels,
                  double lambda, double alpha);

struct AugEpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_error_pct = 0.0;
};

struct AugResult {
    Classifier classifier;
    std::vector<AugEpochRecord> curve;
    double test_error_pct = -1.0;
};

// Classifier training on the lambda-weighted mix of real and synthesized
// batches. Real inputs stay un-binarized. With lambda = 1 the VAE is never
// consulted (vae may be null) and the run is bit-identical to plain
// cross-entropy training at the same seed.
AugResult train_classifier(const LabeledDataset& train, const LabeledDataset& valid,
                           const Model* vae, const AugConfig& cfg,
                           const LabeledDataset* test = nullptr);

} // namespace exvae
