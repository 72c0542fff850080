#include "exvae/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exvae/graph.hpp"

namespace exvae {

namespace {

constexpr int kClasses = 10;

Eigen::MatrixXd init_weight(int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(in, out);
    for (int i = 0; i < in; ++i)
        for (int j = 0; j < out; ++j) w(i, j) = rng.uniform(-bound, bound);
    return w;
}

Eigen::MatrixXd smoothed_targets(const std::vector<int>& labels, double alpha) {
    Eigen::MatrixXd t(static_cast<Eigen::Index>(labels.size()), kClasses);
    t.setConstant(alpha / (kClasses - 1));
    for (std::size_t i = 0; i < labels.size(); ++i)
        t(static_cast<Eigen::Index>(i), labels[i]) = 1.0 - alpha;
    return t;
}

// row-wise log softmax of logits
Eigen::MatrixXd log_softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const double m = logits.row(i).maxCoeff();
        const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
        out.row(i) = logits.row(i).array() - lse;
    }
    return out;
}

struct BoundClassifier {
    std::map<std::string, Var, std::less<>> vars;
    Var at(std::string_view name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw ContractError("classifier: unknown block");
        return it->second;
    }
};

BoundClassifier bind(Graph& g, const Classifier& clf) {
    BoundClassifier bc;
    for (const auto& [name, m] : clf.params())
        bc.vars.emplace(name, g.leaf(m, name));
    return bc;
}

Var logits_g(Graph& g, const BoundClassifier& bc, const Classifier& clf, Var x) {
    Var h = x;
    for (std::size_t l = 0; l < clf.hidden().size(); ++l) {
        const std::string p = "fc" + std::to_string(l + 1);
        h = g.relu(g.affine(h, bc.at(p + ".W"), bc.at(p + ".b")));
    }
    return g.affine(h, bc.at("out.W"), bc.at("out.b"));
}

// -sum( targets . log_softmax(logits) ), as a graph node
Var smoothed_ce_g(Graph& g, Var logits, const Eigen::MatrixXd& targets) {
    Var lse = g.row_log_sum_exp(logits);
    Var log_sm = g.sub_colvec(logits, lse);
    return g.neg(g.sum(g.mul(g.constant(targets), log_sm)));
}

} // namespace

Classifier::Classifier(int d_in, std::vector<int> hidden, Rng& init_rng)
    : d_in_(d_in), hidden_(std::move(hidden)) {
    int in = d_in_;
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
        const std::string p = "fc" + std::to_string(l + 1);
        params_.add(p + ".W", init_weight(in, hidden_[l], init_rng));
        params_.add(p + ".b", Eigen::MatrixXd::Zero(1, hidden_[l]));
        in = hidden_[l];
    }
    params_.add("out.W", init_weight(in, kClasses, init_rng));
    params_.add("out.b", Eigen::MatrixXd::Zero(1, kClasses));
}

Classifier::Classifier(int d_in, std::vector<int> hidden, ParamTree params)
    : d_in_(d_in), hidden_(std::move(hidden)), params_(std::move(params)) {}

Eigen::MatrixXd Classifier::logits(const Eigen::MatrixXd& x) const {
    if (x.cols() != d_in_) throw ContractError("classifier: input dimension mismatch");
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < hidden_.size(); ++l) {
        const std::string p = "fc" + std::to_string(l + 1);
        Eigen::MatrixXd a = h * params_.at(p + ".W");
        a.rowwise() += params_.at(p + ".b").row(0);
        h = a.cwiseMax(0.0);
    }
    Eigen::MatrixXd out = h * params_.at("out.W");
    out.rowwise() += params_.at("out.b").row(0);
    return out;
}

std::vector<int> Classifier::predict(const Eigen::MatrixXd& x) const {
    const Eigen::MatrixXd lg = logits(x);
    std::vector<int> out(static_cast<std::size_t>(lg.rows()));
    for (Eigen::Index i = 0; i < lg.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < kClasses; ++c)
            if (lg(i, c) > lg(i, best)) best = c;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

double Classifier::error_pct(const Eigen::MatrixXd& x, const std::vector<int>& labels) const {
    const std::vector<int> pred = predict(x);
    if (pred.size() != labels.size()) throw ContractError("classifier: label count mismatch");
    int errors = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] != labels[i]) ++errors;
    return 100.0 * errors / static_cast<double>(pred.size());
}

void AugConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("aug config: lambda must be in [0,1]");
    if (!(smoothing >= 0.0 && smoothing <= 1.0)) throw ArgumentError("aug config: smoothing must be in [0,1]");
    if (batch < 1 || epochs < 1) throw ArgumentError("aug config: batch and epochs must be positive");
    if (hidden.empty()) throw ArgumentError("aug config: at least one hidden layer");
}

Eigen::MatrixXd synth_minibatch(const Model& vae, const Eigen::MatrixXd& x, Rng& rng) {
    if (x.rows() == 0) throw ArgumentError("synth_minibatch: empty batch");
    const Eigen::MatrixXd mu = vae.prior_means(x);
    const double sigma = std::sqrt(vae.sigma2());
    Eigen::MatrixXd z(mu.rows(), mu.cols());
    for (Eigen::Index i = 0; i < mu.rows(); ++i)
        for (Eigen::Index j = 0; j < mu.cols(); ++j) z(i, j) = mu(i, j) + sigma * rng.normal();
    return vae.decode_batch(z);
}

double mixed_loss(const Classifier& clf, const Eigen::MatrixXd& x,
                  const Eigen::MatrixXd& x_synth, const std::vector<int>& labels,
                  double lambda, double alpha) {
    if (x.rows() != x_synth.rows())
        throw ContractError("mixed_loss: real/synthetic batch size mismatch");
    if (!(lambda >= 0.0 && lambda <= 1.0) || !(alpha >= 0.0 && alpha <= 1.0))
        throw ArgumentError("mixed_loss: lambda and alpha must be in [0,1]");
    const Eigen::MatrixXd targets = smoothed_targets(labels, alpha);
    const double real_ll = targets.cwiseProduct(log_softmax(clf.logits(x))).sum();
    const double synth_ll = targets.cwiseProduct(log_softmax(clf.logits(x_synth))).sum();
    return -(lambda * real_ll + (1.0 - lambda) * synth_ll);
}

AugResult train_classifier(const LabeledDataset& train, const LabeledDataset& valid,
                           const Model* vae, const AugConfig& cfg, const LabeledDataset* test) {
    cfg.validate();
    if (!train.has_labels() || !valid.has_labels())
        throw ArgumentError("train_classifier: labeled data required");
    if (cfg.lambda < 1.0 && vae == nullptr)
        throw ArgumentError("train_classifier: lambda < 1 requires a trained generator");

    // union mode: paper-style final runs fold validation into training
    LabeledDataset effective = train;
    if (cfg.union_mode) {
        const int total = train.n() + valid.n();
        effective.images.conservativeResize(total, train.dim());
        effective.images.bottomRows(valid.n()) = valid.images;
        effective.labels.insert(effective.labels.end(), valid.labels.begin(), valid.labels.end());
    }
    const int n = effective.n();

    Rng init_rng = Rng::substream(cfg.seed, "clf-init");
    Rng train_rng = Rng::substream(cfg.seed, "clf-train");
    Rng synth_rng = Rng::substream(cfg.seed, "clf-synth");

    Classifier clf(train.dim(), cfg.hidden, init_rng);
    GnAdamConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    GnAdam opt(opt_cfg);

    AugResult result{clf, {}, -1.0};
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        train_rng.shuffle(order);
        double loss_sum = 0.0;

        for (int start = 0; start < n; start += cfg.batch) {
            const int bsz = std::min(cfg.batch, n - start);
            Eigen::MatrixXd xb(bsz, effective.dim());
            std::vector<int> yb(static_cast<std::size_t>(bsz));
            for (int r = 0; r < bsz; ++r) {
                const int idx = order[static_cast<std::size_t>(start + r)];
                xb.row(r) = effective.images.row(idx);
                yb[static_cast<std::size_t>(r)] = effective.labels[static_cast<std::size_t>(idx)];
            }

            Graph g;
            BoundClassifier bc = bind(g, clf);
            const Eigen::MatrixXd targets = smoothed_targets(yb, cfg.smoothing);

            Var loss;
            if (cfg.lambda >= 1.0) {
                // the no-augmentation path: the generator is never consulted
                Var real_ce = smoothed_ce_g(g, logits_g(g, bc, clf, g.constant(xb)), targets);
                loss = real_ce;
            } else {
                const Eigen::MatrixXd xs = synth_minibatch(*vae, xb, synth_rng);
                Var real_ce = smoothed_ce_g(g, logits_g(g, bc, clf, g.constant(xb)), targets);
                Var synth_ce = smoothed_ce_g(g, logits_g(g, bc, clf, g.constant(xs)), targets);
                loss = g.add(g.scale(real_ce, cfg.lambda), g.scale(synth_ce, 1.0 - cfg.lambda));
            }

            if (!std::isfinite(g.scalar(loss)))
                throw NumericError("train_classifier: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " + std::to_string(start / cfg.batch));
            g.backward(loss);
            ParamTree grads;
            for (const auto& [name, m] : clf.params()) grads.add(name, g.grad(bc.at(name)));
            opt.step(clf.params(), grads);
            loss_sum += g.scalar(loss);
        }

        AugEpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / n;
        rec.valid_error_pct = clf.error_pct(valid.images, valid.labels);
        result.curve.push_back(rec);
    }

    result.classifier = clf;
    if (test != nullptr && test->has_labels())
        result.test_error_pct = clf.error_pct(test->images, test->labels);
    return result;
}

} // namespace exvae
