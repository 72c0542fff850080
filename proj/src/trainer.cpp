#include "exvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "exvae/eval.hpp"

namespace exvae {

namespace {
const double kLn2Pi = std::log(2.0 * M_PI);
}

void TrainConfig::validate(int n_train) const {
    if (d_z < 1 || hidden < 1) throw ArgumentError("train config: d_z and hidden must be positive");
    if (batch < 1) throw ArgumentError("train config: batch must be at least 1");
    if (!(lr > 0.0)) throw ArgumentError("train config: learning rate must be positive");
    if (!(mn_ratio > 0.0 && mn_ratio <= 1.0)) throw ArgumentError("train config: M/N must be in (0,1]");
    if (k_neighbors < 1) throw ArgumentError("train config: K must be at least 1");
    if (patience < 0 || max_epochs < 1) throw ArgumentError("train config: bad stopping parameters");
    if (loo && n_train < 2) throw ArgumentError("train config: leave-one-out needs at least 2 exemplars");
}

std::vector<int> subsample_indices(int n, int i, int m, Rng& rng) {
    if (i < 0 || i >= n) throw ArgumentError("subsample_indices: i out of range");
    if (m < 1 || m >= n) throw ArgumentError("subsample_indices: need 1 <= M <= N-1");

    std::vector<int> candidates;
    candidates.reserve(static_cast<std::size_t>(n) - 1);
    for (int j = 0; j < n; ++j)
        if (j != i) candidates.push_back(j);

    // partial Fisher-Yates: first m entries are a uniform sample
    for (int j = 0; j < m; ++j) {
        const int pick = j + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n - 1 - j)));
        std::swap(candidates[static_cast<std::size_t>(j)], candidates[static_cast<std::size_t>(pick)]);
    }
    candidates.resize(static_cast<std::size_t>(m));
    std::sort(candidates.begin(), candidates.end());
    return candidates;
}

double kl_anneal_weight(int epoch, int anneal_epochs) {
    if (epoch < 1) throw ArgumentError("kl_anneal_weight: epoch starts at 1");
    if (anneal_epochs <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch) / anneal_epochs);
}

namespace {

// Retrieval for one sample: indices of the prior components that survive
// truncation, always a non-empty subset of pi.
std::vector<int> retrieve(const ExemplarCache& cache, const Eigen::VectorXd& query,
                          std::span<const int> pi, const TrainConfig& cfg, bool& fallback) {
    fallback = false;
    if (!cfg.knn_global_filter)
        return cache.knn_query(query, cfg.k_neighbors, pi);

    // Alternative semantics: global kNN filtered by pi; may come up empty.
    std::vector<int> global = cache.knn_query(query, cfg.k_neighbors);
    std::unordered_set<int> allowed(pi.begin(), pi.end());
    std::vector<int> kept;
    for (int idx : global)
        if (allowed.count(idx)) kept.push_back(idx);
    if (!kept.empty()) return kept;
    fallback = true;
    return cache.knn_query(query, 1, pi); // nearest member of pi keeps the bound finite
}

} // namespace

StepResult build_step(Graph& g, const BoundModel& bm, const ExemplarCache* cache,
                      const LabeledDataset& pool, const StepPlan& plan, double beta,
                      const TrainConfig& cfg) {
    const int b = static_cast<int>(plan.indices.size());
    const int d_z = bm.model->config().d_z;
    if (plan.x_bin.rows() != b || plan.eps.rows() != b || plan.eps.cols() != d_z)
        throw ContractError("build_step: plan shape mismatch");

    StepResult res;

    Var x = g.constant(plan.x_bin);
    EncOutG enc = encode_g(g, bm, x);
    Var eps = g.constant(plan.eps);
    Var z = g.add(enc.mean, g.mul(g.exp_(g.scale(enc.log_var, 0.5)), eps));

    // log q(z|x) built from the same nodes gradients flow through
    Var diff = g.sub(z, enc.mean);
    Var quad = g.mul(g.square(diff), g.exp_(g.neg(enc.log_var)));
    Var log_q = g.scale(g.row_sum(g.add_const(g.add(enc.log_var, quad), kLn2Pi)), -0.5);

    Var probs = decode_g(g, bm, z);
    Var recon = bernoulli_log_prob_g(g, x, probs);

    res.batch_means = g.value(enc.mean);

    Var log_prior;
    if (cfg.prior_kind == PriorKind::standard_gaussian) {
        log_prior = g.scale(g.row_sum(g.add_const(g.square(z), kLn2Pi)), -0.5);
    } else {
        if (cache == nullptr) throw ContractError("build_step: exemplar prior needs a cache");
        if (static_cast<int>(plan.pis.size()) != b)
            throw ContractError("build_step: one exemplar subset per sample required");

        // Retrieval per sample, keyed on the fresh posterior mean.
        std::vector<std::vector<int>> retrieved(static_cast<std::size_t>(b));
        std::vector<int> union_ids;
        for (int r = 0; r < b; ++r) {
            const auto& pi = plan.pis[static_cast<std::size_t>(r)];
            if (pi.empty()) throw ContractError("build_step: empty exemplar subset");
            if (cfg.loo &&
                std::binary_search(pi.begin(), pi.end(), plan.indices[static_cast<std::size_t>(r)]))
                throw ContractError("build_step: leave-one-out violated: i in its own subset");
            bool fallback = false;
            retrieved[static_cast<std::size_t>(r)] =
                retrieve(*cache, res.batch_means.row(r).transpose(), pi, cfg, fallback);
            if (fallback) ++res.fallback_count;
            union_ids.insert(union_ids.end(), retrieved[static_cast<std::size_t>(r)].begin(),
                             retrieved[static_cast<std::size_t>(r)].end());
        }
        std::sort(union_ids.begin(), union_ids.end());
        union_ids.erase(std::unique(union_ids.begin(), union_ids.end()), union_ids.end());
        res.neighbor_ids = union_ids;

        const int u = static_cast<int>(union_ids.size());
        Eigen::MatrixXd neighbor_x(u, pool.dim());
        for (int c = 0; c < u; ++c)
            neighbor_x.row(c) = pool.images.row(union_ids[static_cast<std::size_t>(c)]);

        // Fresh means, inside the graph: the prior term trains the encoder too.
        // Exemplar inputs stay un-binarized.
        Var mu_nb = prior_means_g(g, bm, g.constant(neighbor_x));
        res.neighbor_means = g.value(mu_nb);

        Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(b, u);
        Eigen::MatrixXd log_m(b, 1);
        for (int r = 0; r < b; ++r) {
            for (int idx : retrieved[static_cast<std::size_t>(r)]) {
                const auto it = std::lower_bound(union_ids.begin(), union_ids.end(), idx);
                mask(r, static_cast<Eigen::Index>(it - union_ids.begin())) = 1.0;
            }
            log_m(r, 0) = std::log(static_cast<double>(plan.pis[static_cast<std::size_t>(r)].size()));
        }

        Var logsig2 = bm.at("prior.logsig2");
        Var neg_half_inv = g.scale(g.exp_(g.neg(logsig2)), -0.5); // 1x1
        Var scaled = g.mul_scalar(g.pairwise_sqdist(z, mu_nb), neg_half_inv);
        Var lse = g.masked_row_log_sum_exp(scaled, std::move(mask));
        // -(d_z/2) log(2 pi sigma^2) - log M, with all constants retained
        Var norm_const = g.add_const(g.scale(logsig2, -0.5 * d_z), -0.5 * d_z * kLn2Pi);
        log_prior = g.sub(g.add_scalar(lse, norm_const), g.constant(log_m));
    }

    Var kl = g.sub(log_q, log_prior);
    Var obj_annealed = g.sub(recon, g.scale(kl, beta));
    res.loss = g.neg(g.mean(obj_annealed));

    const Eigen::VectorXd recon_v = g.value(recon).col(0);
    const Eigen::VectorXd kl_v = g.value(kl).col(0);
    res.mean_recon = recon_v.mean();
    res.mean_kl = kl_v.mean();
    res.mean_obj_raw = (recon_v - kl_v).mean();
    res.mean_obj_annealed = g.value(obj_annealed).col(0).mean();
    return res;
}

namespace {

ElboParts parts_from_single(const StepResult& r) {
    ElboParts p;
    p.objective = r.mean_obj_annealed;
    p.objective_raw = r.mean_obj_raw;
    p.recon = r.mean_recon;
    p.kl = r.mean_kl;
    p.fallback_used = r.fallback_count > 0;
    return p;
}

StepPlan single_plan(const Eigen::VectorXd& x, int i, int d_z, std::span<const int> pi, Rng& rng) {
    StepPlan plan;
    plan.indices = {i};
    plan.x_bin = x.transpose();
    plan.eps.resize(1, d_z);
    for (int j = 0; j < d_z; ++j) plan.eps(0, j) = rng.normal();
    plan.pis.emplace_back(pi.begin(), pi.end());
    return plan;
}

} // namespace

ElboParts elbo_exemplar(const Eigen::VectorXd& x, int i, const Model& model,
                        const ExemplarCache& cache, const LabeledDataset& pool,
                        std::span<const int> pi, const TrainConfig& cfg, Rng& rng, double beta) {
    Graph g;
    BoundModel bm = bind_model(g, model);
    StepPlan plan = single_plan(x, i, model.config().d_z, pi, rng);
    StepResult r = build_step(g, bm, &cache, pool, plan, beta, cfg);
    return parts_from_single(r);
}

ElboParts elbo_gaussian(const Eigen::VectorXd& x, const Model& model, Rng& rng, double beta) {
    Graph g;
    BoundModel bm = bind_model(g, model);
    TrainConfig cfg;
    cfg.prior_kind = PriorKind::standard_gaussian;
    StepPlan plan = single_plan(x, 0, model.config().d_z, {}, rng);
    plan.pis.clear();
    LabeledDataset empty;
    StepResult r = build_step(g, bm, nullptr, empty, plan, beta, cfg);
    return parts_from_single(r);
}

namespace {

// Evaluation-mode validation bound: full prior over all exemplars, fresh
// means, beta = 1, single posterior sample per point.
double validation_elbo(const Model& model, const LabeledDataset& train_set,
                       const Eigen::MatrixXd& valid_images, const TrainConfig& cfg,
                       std::uint64_t seed) {
    Rng eval_rng = Rng::substream(seed, "eval");
    const Eigen::MatrixXd x_bin = dynamic_binarize(valid_images, eval_rng);

    if (cfg.prior_kind == PriorKind::standard_gaussian) {
        return single_sample_elbo_terms(model, LatentPrior::gaussian(), x_bin, eval_rng)
            .elbo.mean();
    }
    const Eigen::MatrixXd fresh_means = model.prior_means(train_set.images);
    MixtureView view{&fresh_means, model.sigma2(), fresh_means.rows()};
    return single_sample_elbo_terms(model, LatentPrior::mixture(view), x_bin, eval_rng)
        .elbo.mean();
}

} // namespace

TrainResult train(const LabeledDataset& train_set, const LabeledDataset& valid_set,
                  const TrainConfig& cfg, const TrainCallbacks& callbacks) {
    const int n = train_set.n();
    cfg.validate(n);
    if (valid_set.n() == 0) throw ArgumentError("train: empty validation set");
    if (valid_set.dim() != train_set.dim()) throw ArgumentError("train: split dimension mismatch");

    Rng init_rng = Rng::substream(cfg.seed, "init");
    Rng train_rng = Rng::substream(cfg.seed, "train");

    ModelConfig mc{train_set.dim(), cfg.d_z, cfg.hidden};
    Model model(mc, init_rng);

    std::optional<ExemplarCache> cache;
    if (cfg.prior_kind == PriorKind::exemplar)
        cache = ExemplarCache::init(train_set, model);

    // M = round(mn_ratio * N) within [1, N-1]; LOO off means the full pool
    // including the point itself.
    const int m_subset = cfg.loo
        ? std::clamp(static_cast<int>(std::lround(cfg.mn_ratio * n)), 1, n - 1)
        : n;
    std::vector<int> full_pi(static_cast<std::size_t>(n));
    std::iota(full_pi.begin(), full_pi.end(), 0);

    GnAdamConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    GnAdam opt(opt_cfg);

    TrainResult result{Model(mc, model.params()), 0,
                       -std::numeric_limits<double>::infinity(), {}};
    int epochs_since_best = 0;

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        if (cache) cache->age_all();
        const double beta = kl_anneal_weight(epoch, cfg.anneal_epochs);
        train_rng.shuffle(order);

        double sum_obj_raw = 0.0, sum_obj_ann = 0.0, sum_recon = 0.0, sum_kl = 0.0;
        long fallbacks = 0;
        int batches = 0;

        for (int start = 0; start < n; start += cfg.batch, ++batches) {
            const int bsz = std::min(cfg.batch, n - start);

            StepPlan plan;
            plan.indices.assign(order.begin() + start, order.begin() + start + bsz);
            Eigen::MatrixXd raw(bsz, train_set.dim());
            for (int r = 0; r < bsz; ++r)
                raw.row(r) = train_set.images.row(plan.indices[static_cast<std::size_t>(r)]);
            plan.x_bin = dynamic_binarize(raw, train_rng);
            plan.eps.resize(bsz, cfg.d_z);
            for (int r = 0; r < bsz; ++r)
                for (int j = 0; j < cfg.d_z; ++j) plan.eps(r, j) = train_rng.normal();
            if (cfg.prior_kind == PriorKind::exemplar) {
                plan.pis.reserve(static_cast<std::size_t>(bsz));
                for (int r = 0; r < bsz; ++r)
                    plan.pis.push_back(cfg.loo ? subsample_indices(
                                                     n, plan.indices[static_cast<std::size_t>(r)],
                                                     m_subset, train_rng)
                                               : full_pi);
            }

            Graph g;
            BoundModel bm = bind_model(g, model);
            StepResult step = build_step(g, bm, cache ? &*cache : nullptr, train_set, plan,
                                         beta, cfg);

            if (!std::isfinite(g.scalar(step.loss)))
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batches));

            g.backward(step.loss);
            ParamTree grads = read_grads(g, bm);
            opt.step(model.params(), grads);

            if (cache) {
                for (int r = 0; r < bsz; ++r)
                    cache->update(plan.indices[static_cast<std::size_t>(r)],
                                  step.batch_means.row(r).transpose());
                for (std::size_t c = 0; c < step.neighbor_ids.size(); ++c)
                    cache->update(step.neighbor_ids[c],
                                  step.neighbor_means.row(static_cast<Eigen::Index>(c)).transpose());
            }

            sum_obj_raw += step.mean_obj_raw * bsz;
            sum_obj_ann += step.mean_obj_annealed * bsz;
            sum_recon += step.mean_recon * bsz;
            sum_kl += step.mean_kl * bsz;
            fallbacks += step.fallback_count;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_elbo = sum_obj_raw / n;
        rec.train_elbo_annealed = sum_obj_ann / n;
        rec.valid_elbo = validation_elbo(model, train_set, valid_set.images, cfg, cfg.seed);
        rec.kl = sum_kl / n;
        rec.recon = sum_recon / n;
        rec.sigma2 = model.sigma2();
        rec.fallback_count = fallbacks;
        result.log.push_back(rec);
        if (callbacks.on_epoch) callbacks.on_epoch(rec);

        if (rec.valid_elbo > result.best_valid_elbo) {
            result.best_valid_elbo = rec.valid_elbo;
            result.best_epoch = epoch;
            result.model = Model(mc, model.params());
            epochs_since_best = 0;
            if (callbacks.on_improve)
                callbacks.on_improve(result.model, cache ? &*cache : nullptr, rec);
        } else {
            ++epochs_since_best;
            if (epochs_since_best > cfg.patience) break;
        }
    }
    return result;
}

} // namespace exvae
