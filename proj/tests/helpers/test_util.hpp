#pragma once

// Shared test utilities: finite-difference gradient oracle, scalar-loop
// re-implementations of the model forward pass and the training objective,
// and small synthetic data factories. Everything here is deliberately written
// with plain loops so it shares no code path with the library internals it
// checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "exvae/cache.hpp"
#include "exvae/dataset.hpp"
#include "exvae/model.hpp"
#include "exvae/numerics.hpp"
#include "exvae/trainer.hpp"

namespace exvae::testutil {

// Central finite differences of a scalar function of the parameter tree.
inline ParamTree finite_diff_grad(const std::function<double(const ParamTree&)>& f,
                                  ParamTree params, double h = 1e-5) {
    ParamTree out = params.zeros_like();
    auto gi = out.begin();
    for (auto pi = params.begin(); pi != params.end(); ++pi, ++gi) {
        Eigen::MatrixXd& block = pi->second;
        for (Eigen::Index r = 0; r < block.rows(); ++r)
            for (Eigen::Index c = 0; c < block.cols(); ++c) {
                const double orig = block(r, c);
                block(r, c) = orig + h;
                const double fp = f(params);
                block(r, c) = orig - h;
                const double fm = f(params);
                block(r, c) = orig;
                gi->second(r, c) = (fp - fm) / (2.0 * h);
            }
    }
    return out;
}

inline double max_rel_err(const ParamTree& a, const ParamTree& b) {
    double worst = 0.0;
    auto bi = b.begin();
    for (auto ai = a.begin(); ai != a.end(); ++ai, ++bi) {
        for (Eigen::Index r = 0; r < ai->second.rows(); ++r)
            for (Eigen::Index c = 0; c < ai->second.cols(); ++c) {
                const double x = ai->second(r, c), y = bi->second(r, c);
                const double denom = std::max({std::abs(x), std::abs(y), 1e-6});
                worst = std::max(worst, std::abs(x - y) / denom);
            }
    }
    return worst;
}

// ---- scalar-loop model forward ------------------------------------------------

inline double sigmoid_s(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline std::vector<double> glu_scalar(const std::vector<double>& x, const ParamTree& p,
                                      const std::string& prefix) {
    const Eigen::MatrixXd& wa = p.at(prefix + ".Wa");
    const Eigen::MatrixXd& ba = p.at(prefix + ".ba");
    const Eigen::MatrixXd& wg = p.at(prefix + ".Wg");
    const Eigen::MatrixXd& bg = p.at(prefix + ".bg");
    std::vector<double> out(static_cast<std::size_t>(wa.cols()));
    for (Eigen::Index o = 0; o < wa.cols(); ++o) {
        double a = ba(0, o), g = bg(0, o);
        for (Eigen::Index i = 0; i < wa.rows(); ++i) {
            a += x[static_cast<std::size_t>(i)] * wa(i, o);
            g += x[static_cast<std::size_t>(i)] * wg(i, o);
        }
        out[static_cast<std::size_t>(o)] = a * sigmoid_s(g);
    }
    return out;
}

inline std::vector<double> head_scalar(const std::vector<double>& h, const ParamTree& p,
                                       const std::string& prefix) {
    const Eigen::MatrixXd& w = p.at(prefix + ".W");
    const Eigen::MatrixXd& b = p.at(prefix + ".b");
    std::vector<double> out(static_cast<std::size_t>(w.cols()));
    for (Eigen::Index o = 0; o < w.cols(); ++o) {
        double acc = b(0, o);
        for (Eigen::Index i = 0; i < w.rows(); ++i)
            acc += h[static_cast<std::size_t>(i)] * w(i, o);
        out[static_cast<std::size_t>(o)] = acc;
    }
    return out;
}

struct ScalarEncode {
    std::vector<double> mean, log_var;
};

inline ScalarEncode encode_scalar(const ParamTree& p, const std::vector<double>& x) {
    const auto h1 = glu_scalar(x, p, "enc.l1");
    const auto h2 = glu_scalar(h1, p, "enc.l2");
    ScalarEncode out;
    out.mean = head_scalar(h2, p, "enc.mu");
    out.log_var = head_scalar(h2, p, "enc.logvar");
    for (double& v : out.log_var) v = std::clamp(v, -kLogVarClamp, kLogVarClamp);
    return out;
}

inline std::vector<double> decode_scalar(const ParamTree& p, const std::vector<double>& z) {
    const auto h1 = glu_scalar(z, p, "dec.l1");
    const auto h2 = glu_scalar(h1, p, "dec.l2");
    auto out = head_scalar(h2, p, "dec.out");
    for (double& v : out)
        v = std::clamp(sigmoid_s(v), kProbClamp, 1.0 - kProbClamp);
    return out;
}

// ---- straight-line re-implementation of the training objective ----------------
//
// Single-sample value of the exemplar objective for one point: retrieval at
// the fresh posterior mean within pi (ties by index), fresh neighbor means,
// truncated mixture with denominator |pi|, all constants kept.
inline double objective_scalar(const ParamTree& p, const Eigen::VectorXd& x_bin,
                               const Eigen::MatrixXd& pool_images,
                               const Eigen::MatrixXd& cache_means,
                               std::span<const int> pi, const Eigen::VectorXd& eps,
                               int k_neighbors, double beta) {
    std::vector<double> x(x_bin.data(), x_bin.data() + x_bin.size());
    const ScalarEncode enc = encode_scalar(p, x);
    const int d_z = static_cast<int>(enc.mean.size());

    std::vector<double> z(static_cast<std::size_t>(d_z));
    for (int j = 0; j < d_z; ++j)
        z[static_cast<std::size_t>(j)] =
            enc.mean[static_cast<std::size_t>(j)] +
            std::exp(enc.log_var[static_cast<std::size_t>(j)] / 2.0) * eps(j);

    // log q(z|x)
    double log_q = 0.0;
    for (int j = 0; j < d_z; ++j) {
        const double lv = enc.log_var[static_cast<std::size_t>(j)];
        const double diff = z[static_cast<std::size_t>(j)] - enc.mean[static_cast<std::size_t>(j)];
        log_q += -0.5 * (std::log(2.0 * M_PI) + lv + diff * diff / std::exp(lv));
    }

    // reconstruction
    const auto probs = decode_scalar(p, z);
    double recon = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i)
        recon += x[i] * std::log(probs[i]) + (1.0 - x[i]) * std::log(1.0 - probs[i]);

    // retrieval at the fresh mean, within pi, ties by smaller index
    std::vector<std::pair<double, int>> scored;
    for (int idx : pi) {
        double d2 = 0.0;
        for (int j = 0; j < d_z; ++j) {
            const double diff = cache_means(idx, j) - enc.mean[static_cast<std::size_t>(j)];
            d2 += diff * diff;
        }
        scored.emplace_back(d2, idx);
    }
    std::sort(scored.begin(), scored.end());
    const int take = std::min<int>(k_neighbors, static_cast<int>(scored.size()));

    std::vector<int> retrieved;
    for (int t = 0; t < take; ++t) retrieved.push_back(scored[static_cast<std::size_t>(t)].second);
    std::sort(retrieved.begin(), retrieved.end());

    const double sigma2 = std::exp(p.at("prior.logsig2")(0, 0));
    std::vector<double> logits;
    for (int idx : retrieved) {
        std::vector<double> xe(pool_images.cols());
        for (Eigen::Index j = 0; j < pool_images.cols(); ++j)
            xe[static_cast<std::size_t>(j)] = pool_images(idx, j);
        const auto mu = encode_scalar(p, xe).mean; // fresh mean, shared head
        double d2 = 0.0;
        for (int j = 0; j < d_z; ++j) {
            const double diff = z[static_cast<std::size_t>(j)] - mu[static_cast<std::size_t>(j)];
            d2 += diff * diff;
        }
        logits.push_back(-d2 / (2.0 * sigma2));
    }
    const double log_prior = -0.5 * d_z * (std::log(2.0 * M_PI) + std::log(sigma2)) -
                             std::log(static_cast<double>(pi.size())) + log_sum_exp(logits);

    return recon - beta * (log_q - log_prior);
}

// ---- data factories -------------------------------------------------------------

inline LabeledDataset random_dataset(int n, int d, std::uint64_t seed, bool labels = false) {
    Rng rng(seed);
    LabeledDataset ds;
    ds.images.resize(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) ds.images(i, j) = rng.uniform();
    ds.rows = 1;
    ds.cols = d;
    if (labels) {
        ds.labels.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) ds.labels[static_cast<std::size_t>(i)] = i % 10;
    }
    return ds;
}

inline Model tiny_model(int d_x, int d_z, int hidden, std::uint64_t seed) {
    Rng rng(seed);
    return Model(ModelConfig{d_x, d_z, hidden}, rng);
}

// Pearson chi-square statistic against a uniform expectation.
inline double chi_square_uniform(std::span<const long> counts) {
    long total = 0;
    for (long c : counts) total += c;
    const double expected = static_cast<double>(total) / static_cast<double>(counts.size());
    double stat = 0.0;
    for (long c : counts) {
        const double diff = static_cast<double>(c) - expected;
        stat += diff * diff / expected;
    }
    return stat;
}

// 0.99 quantile of chi-square with 9 degrees of freedom (10 uniform cells).
constexpr double kChi2Df9P99 = 21.666;

} // namespace exvae::testutil
