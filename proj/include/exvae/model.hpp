#pragma once

#include <map>

#include "exvae/graph.hpp"
#include "exvae/numerics.hpp"
#include "exvae/rng.hpp"

namespace exvae {

// Mean + per-dimension log-variance; the variational posterior q(z|x).
struct DiagGaussian {
    Eigen::VectorXd mean;
    Eigen::VectorXd log_var;
};

struct ModelConfig {
    int d_x = 784;
    int d_z = 40;
    int hidden = 300;
};

// Log-variances are clamped to this range at the encoder head, and decoder
// probabilities to [kProbClamp, 1-kProbClamp], so likelihoods stay finite.
constexpr double kLogVarClamp = 20.0;
constexpr double kProbClamp = 1e-7;

// Encoder trunk (d_x-hidden-hidden, sigmoid-gated linear units) with a mean
// head and a log-variance head, a mirrored GLU decoder ending in a sigmoid,
// and a scalar prior log-variance.
//
// The posterior and the exemplar-side encoder share the mean head; they
// differ only in covariance (data-dependent diagonal vs. the scalar prior
// sigma^2), so prior_encode(x) is exactly encode(x).mean.
class Model {
public:
    Model(ModelConfig cfg, Rng& init_rng);
    Model(ModelConfig cfg, ParamTree params);

    const ModelConfig& config() const { return cfg_; }
    ParamTree& params() { return params_; }
    const ParamTree& params() const { return params_; }

    double log_sigma2() const { return params_.at("prior.logsig2")(0, 0); }
    double sigma2() const { return std::exp(log_sigma2()); }

    // Single-sample forwards.
    DiagGaussian encode(const Eigen::VectorXd& x) const;
    Eigen::VectorXd prior_encode(const Eigen::VectorXd& x) const;
    Eigen::VectorXd decode(const Eigen::VectorXd& z) const;

    // Batched forwards; rows are samples.
    struct EncodeBatch {
        Eigen::MatrixXd mean;
        Eigen::MatrixXd log_var;
    };
    EncodeBatch encode_batch(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd prior_means(const Eigen::MatrixXd& x) const;
    Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& z) const;

    // Checkpoint round-trip; dims travel in a "meta.dims" block.
    void save(const std::string& path) const;
    static Model load(const std::string& path);

private:
    ModelConfig cfg_;
    ParamTree params_;
    void check_shapes() const;
};

// z = mean + exp(log_var / 2) * eps
Eigen::VectorXd reparam_sample(const DiagGaussian& g, const Eigen::VectorXd& eps);

// sum_i x_i log mu_i + (1 - x_i) log(1 - mu_i)
double bernoulli_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mu);
Eigen::VectorXd bernoulli_log_prob_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& mu);

// ---- graph builders (training path) ----------------------------------------

// Parameter blocks bound into a graph as named leaves. Bind once per graph;
// every builder below reuses the same leaves so gradients aggregate.
struct BoundModel {
    const Model* model = nullptr;
    std::map<std::string, Var, std::less<>> vars;
    Var at(std::string_view name) const;
};

BoundModel bind_model(Graph& g, const Model& m);

// Reads leaf gradients back out into a tree shaped like model.params().
ParamTree read_grads(const Graph& g, const BoundModel& bm);

struct EncOutG {
    Var mean;
    Var log_var;
};

EncOutG encode_g(Graph& g, const BoundModel& bm, Var x);
Var prior_means_g(Graph& g, const BoundModel& bm, Var x); // trunk + mean head only
Var decode_g(Graph& g, const BoundModel& bm, Var z);
// targets: constant (B,d_x); probs: decoder output. Returns (B,1) row sums.
Var bernoulli_log_prob_g(Graph& g, Var targets, Var probs);

} // namespace exvae
