#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <numeric>

#include "exvae/eval.hpp"
#include "exvae/trainer.hpp"
#include "helpers/test_util.hpp"

using namespace exvae;

namespace {

struct TinySetup {
    LabeledDataset pool;
    Model model;
    ExemplarCache cache;
    TrainConfig cfg;
};

TinySetup tiny_setup(std::uint64_t seed, int n = 8, int d_x = 6, int d_z = 2, int k = 2,
                     double mn = 0.5) {
    TinySetup s{testutil::random_dataset(n, d_x, seed),
                testutil::tiny_model(d_x, d_z, 4, seed + 1),
                ExemplarCache(1, 1),
                {}};
    s.cache = ExemplarCache::init(s.pool, s.model);
    s.cfg.d_z = d_z;
    s.cfg.hidden = 4;
    s.cfg.k_neighbors = k;
    s.cfg.mn_ratio = mn;
    s.cfg.seed = seed;
    return s;
}

Eigen::VectorXd binarized_row(const LabeledDataset& ds, int i, std::uint64_t seed) {
    Rng rng(seed);
    return dynamic_binarize(ds.images.row(i), rng).row(0).transpose();
}

} // namespace

TEST_CASE("subsample_indices basics") {
    Rng rng(1);

    SUBCASE("M = N-1 is the full pool minus i") {
        const auto pi = subsample_indices(6, 2, 5, rng);
        CHECK(pi == std::vector<int>{0, 1, 3, 4, 5});
    }
    SUBCASE("i never appears") {
        for (int rep = 0; rep < 10000; ++rep) {
            const auto pi = subsample_indices(9, 4, 3, rng);
            CHECK(pi.size() == 3);
            for (int idx : pi) CHECK(idx != 4);
        }
    }
    SUBCASE("argument errors") {
        CHECK_THROWS_AS(subsample_indices(5, 0, 5, rng), ArgumentError);
        CHECK_THROWS_AS(subsample_indices(5, 0, 0, rng), ArgumentError);
        CHECK_THROWS_AS(subsample_indices(5, 7, 2, rng), ArgumentError);
    }
}

TEST_CASE("subsample_indices is uniform over subsets (chi-square)") {
    // N=6, i=0, M=2: C(5,2) = 10 equally likely subsets
    Rng rng(2);
    std::map<std::pair<int, int>, long> counts;
    const int draws = 100000;
    for (int rep = 0; rep < draws; ++rep) {
        const auto pi = subsample_indices(6, 0, 2, rng);
        ++counts[{pi[0], pi[1]}];
    }
    REQUIRE(counts.size() == 10);
    std::vector<long> flat;
    for (const auto& [key, c] : counts) flat.push_back(c);
    CHECK(testutil::chi_square_uniform(flat) < testutil::kChi2Df9P99);
}

TEST_CASE("kl_anneal_weight") {
    CHECK(kl_anneal_weight(50, 100) == 0.5);
    CHECK(kl_anneal_weight(100, 100) == 1.0);
    CHECK(kl_anneal_weight(500, 100) == 1.0);
    CHECK(kl_anneal_weight(1, 100) == 0.01);
    CHECK(kl_anneal_weight(3, 0) == 1.0);
    CHECK_THROWS_AS(kl_anneal_weight(0, 100), ArgumentError);
}

TEST_CASE("degenerate case: q identical to the single prior component") {
    // Zero weights: every mean is 0, q = N(0, I), sigma2 = 1, so with M = 1
    // the KL integrand vanishes for every sampled z and the objective is the
    // reconstruction term exactly (log M = 0 retained).
    TinySetup s = tiny_setup(3);
    for (auto& [name, b] : s.model.params()) b.setZero();
    s.cache = ExemplarCache::init(s.pool, s.model);

    const std::vector<int> pi = {5};
    Rng rng(7);
    const Eigen::VectorXd x = binarized_row(s.pool, 0, 11);
    const ElboParts parts = elbo_exemplar(x, 0, s.model, s.cache, s.pool, pi, s.cfg, rng);
    CHECK(parts.kl == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parts.objective == doctest::Approx(parts.recon).epsilon(1e-12));
}

TEST_CASE("K >= |pi| reproduces the untruncated subsampled estimate") {
    TinySetup s = tiny_setup(5);
    s.cfg.k_neighbors = 100; // no truncation

    Rng pi_rng(9);
    const auto pi = subsample_indices(s.pool.n(), 1, 4, pi_rng);
    const Eigen::VectorXd x = binarized_row(s.pool, 1, 13);

    Rng rng_a(21);
    const ElboParts truncated = elbo_exemplar(x, 1, s.model, s.cache, s.pool, pi, s.cfg, rng_a);

    // straight-line value over the full subset (k = |pi| keeps everything)
    Rng eps_rng(21);
    Eigen::VectorXd eps(2);
    for (int j = 0; j < 2; ++j) eps(j) = eps_rng.normal();
    const double oracle = testutil::objective_scalar(s.model.params(), x, s.pool.images,
                                                     s.cache.means(), pi, eps,
                                                     static_cast<int>(pi.size()), 1.0);
    CHECK(truncated.objective == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("objective matches the straight-line oracle") {
    for (std::uint64_t seed = 30; seed < 40; ++seed) {
        TinySetup s = tiny_setup(seed);
        Rng pi_rng(seed + 100);
        const int i = static_cast<int>(seed % 8);
        const auto pi = subsample_indices(s.pool.n(), i, 4, pi_rng);
        const Eigen::VectorXd x = binarized_row(s.pool, i, seed + 200);

        Rng rng(seed + 300);
        const ElboParts parts = elbo_exemplar(x, i, s.model, s.cache, s.pool, pi, s.cfg, rng);

        Rng eps_rng(seed + 300);
        Eigen::VectorXd eps(2);
        for (int j = 0; j < 2; ++j) eps(j) = eps_rng.normal();
        const double oracle =
            testutil::objective_scalar(s.model.params(), x, s.pool.images, s.cache.means(),
                                       pi, eps, s.cfg.k_neighbors, 1.0);
        CHECK(parts.objective == doctest::Approx(oracle).epsilon(1e-9));
    }
}

TEST_CASE("bound chain: truncation never raises the objective at the same draws") {
    for (std::uint64_t seed = 50; seed < 60; ++seed) {
        TinySetup s = tiny_setup(seed);
        Rng pi_rng(seed);
        const auto pi = subsample_indices(s.pool.n(), 0, 6, pi_rng);
        const Eigen::VectorXd x = binarized_row(s.pool, 0, seed + 1);

        TrainConfig truncated_cfg = s.cfg;
        truncated_cfg.k_neighbors = 2;
        TrainConfig full_cfg = s.cfg;
        full_cfg.k_neighbors = 100;

        Rng r1(seed + 2), r2(seed + 2); // identical eps draws
        const double lo = elbo_exemplar(x, 0, s.model, s.cache, s.pool, pi, truncated_cfg, r1).objective;
        const double hi = elbo_exemplar(x, 0, s.model, s.cache, s.pool, pi, full_cfg, r2).objective;
        CHECK(lo <= hi + 1e-12);
    }
}

TEST_CASE("Jensen direction: subsampling averages below the LOO full value") {
    // At a fixed z, E_pi[log subsampled mixture] <= log of the LOO mixture.
    TinySetup s = tiny_setup(70, 10, 6, 2, 100, 0.5);
    const int i = 3;
    const Eigen::VectorXd x = binarized_row(s.pool, i, 71);

    // fresh means for the LOO full mixture
    const Eigen::MatrixXd all_means = s.model.prior_means(s.pool.images);
    Eigen::MatrixXd loo_means(9, 2);
    int r = 0;
    for (int j = 0; j < 10; ++j)
        if (j != i) loo_means.row(r++) = all_means.row(j);

    const DiagGaussian q = s.model.encode(x);
    Rng zrng(72);
    Eigen::VectorXd eps(2);
    for (int j = 0; j < 2; ++j) eps(j) = zrng.normal();
    const Eigen::VectorXd z = reparam_sample(q, eps);

    const double full = log_knn_prior(z, loo_means, s.model.sigma2(), 9);

    Rng pi_rng(73);
    const int draws = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int rep = 0; rep < draws; ++rep) {
        const auto pi = subsample_indices(10, i, 5, pi_rng);
        Eigen::MatrixXd sub_means(5, 2);
        for (int k2 = 0; k2 < 5; ++k2) sub_means.row(k2) = all_means.row(pi[static_cast<std::size_t>(k2)]);
        const double v = log_knn_prior(z, sub_means, s.model.sigma2(), 5);
        sum += v;
        sum2 += v * v;
    }
    const double mean = sum / draws;
    const double sd = std::sqrt(std::max(0.0, sum2 / draws - mean * mean));
    const double sem = sd / std::sqrt(static_cast<double>(draws));
    CHECK(mean <= full + 3.0 * sem); // one-sided at 3 sigma
}

TEST_CASE("gaussian estimator closed forms") {
    TinySetup s = tiny_setup(80);
    for (auto& [name, b] : s.model.params()) b.setZero();

    // z = 0 one-dimensional: log prior = -ln(2 pi)/2 per dim
    Rng rng(81);
    const Eigen::VectorXd x = binarized_row(s.pool, 0, 82);
    const ElboParts parts = elbo_gaussian(x, s.model, rng);
    // zero net: q = N(0, I) = prior, so the KL integrand is identically zero
    CHECK(parts.kl == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parts.objective == doctest::Approx(parts.recon).epsilon(1e-12));
}

TEST_CASE("full-objective gradients match finite differences (all blocks)") {
    TinySetup s = tiny_setup(90);
    const int b = 3;
    StepPlan plan;
    plan.indices = {0, 3, 6};
    Eigen::MatrixXd raw(b, 6);
    for (int r = 0; r < b; ++r) raw.row(r) = s.pool.images.row(plan.indices[static_cast<std::size_t>(r)]);
    Rng brng(91);
    plan.x_bin = dynamic_binarize(raw, brng);
    plan.eps.resize(b, 2);
    for (int r = 0; r < b; ++r)
        for (int j = 0; j < 2; ++j) plan.eps(r, j) = brng.normal();
    Rng pi_rng(92);
    for (int r = 0; r < b; ++r)
        plan.pis.push_back(subsample_indices(8, plan.indices[static_cast<std::size_t>(r)], 4, pi_rng));

    auto value = [&](const ParamTree& pt) {
        Model probe(s.model.config(), pt);
        Graph g;
        BoundModel bm = bind_model(g, probe);
        const StepResult res = build_step(g, bm, &s.cache, s.pool, plan, 0.7, s.cfg);
        return g.scalar(res.loss);
    };

    Graph g;
    BoundModel bm = bind_model(g, s.model);
    const StepResult res = build_step(g, bm, &s.cache, s.pool, plan, 0.7, s.cfg);
    g.backward(res.loss);
    const ParamTree analytic = read_grads(g, bm);
    const ParamTree fd = testutil::finite_diff_grad(value, s.model.params(), 1e-5);
    CHECK(testutil::max_rel_err(analytic, fd) < 1e-4);

    // the prior variance block carries signal, not just zeros
    CHECK(analytic.at("prior.logsig2").norm() > 0.0);
}

TEST_CASE("leave-one-out violations are rejected") {
    TinySetup s = tiny_setup(95);
    StepPlan plan;
    plan.indices = {2};
    plan.x_bin = s.pool.images.row(2);
    plan.eps = Eigen::MatrixXd::Zero(1, 2);
    plan.pis = {{1, 2, 3}}; // contains the point itself

    Graph g;
    BoundModel bm = bind_model(g, s.model);
    CHECK_THROWS_AS(build_step(g, bm, &s.cache, s.pool, plan, 1.0, s.cfg), ContractError);
}

TEST_CASE("train: a short run improves the validation bound and is deterministic") {
    LabeledDataset data = testutil::random_dataset(0, 0, 0);
    {
        // small clustered synthetic set so there is structure to learn
        data = testutil::random_dataset(240, 16, 101);
        Rng rng(5);
        for (int i = 0; i < data.n(); ++i) {
            const int c = i % 3;
            for (int j = 0; j < 16; ++j)
                data.images(i, j) = std::clamp(0.15 + 0.7 * ((j % 3) == c) + 0.1 * rng.uniform(), 0.0, 1.0);
        }
    }
    auto [train_set, valid_set, test_set] = split(data, {200, 40, 0}, 7);

    TrainConfig cfg;
    cfg.d_z = 2;
    cfg.hidden = 8;
    cfg.batch = 20;
    cfg.mn_ratio = 0.5;
    cfg.k_neighbors = 4;
    cfg.anneal_epochs = 10;
    cfg.patience = 50;
    cfg.max_epochs = 8;
    cfg.seed = 11;

    const TrainResult a = train(train_set, valid_set, cfg);
    CHECK(a.log.size() == 8);
    CHECK(a.log.back().valid_elbo > a.log.front().valid_elbo);
    CHECK(a.best_valid_elbo >= a.log.front().valid_elbo);
    for (const auto& rec : a.log) CHECK(std::isfinite(rec.valid_elbo));

    const TrainResult b = train(train_set, valid_set, cfg);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].train_elbo == b.log[i].train_elbo);
        CHECK(a.log[i].valid_elbo == b.log[i].valid_elbo);
        CHECK(a.log[i].sigma2 == b.log[i].sigma2);
    }
    for (const auto& [name, block] : a.model.params())
        CHECK(block == b.model.params().at(name));
}

TEST_CASE("train: patience zero stops at the first non-improving epoch") {
    LabeledDataset data = testutil::random_dataset(60, 8, 103);
    auto [train_set, valid_set, test_set] = split(data, {48, 12, 0}, 3);

    TrainConfig cfg;
    cfg.d_z = 2;
    cfg.hidden = 4;
    cfg.batch = 16;
    cfg.k_neighbors = 3;
    cfg.patience = 0;
    cfg.max_epochs = 50;
    cfg.seed = 4;

    const TrainResult res = train(train_set, valid_set, cfg);
    CHECK(static_cast<int>(res.log.size()) < 50);
    // every epoch before the last one improved on its predecessors
    double best = -1e300;
    for (std::size_t i = 0; i + 1 < res.log.size(); ++i) {
        CHECK(res.log[i].valid_elbo > best);
        best = std::max(best, res.log[i].valid_elbo);
    }
    CHECK(res.log.back().valid_elbo <= best);
}

TEST_CASE("train: gaussian prior variant runs the textbook VAE path") {
    LabeledDataset data = testutil::random_dataset(80, 8, 104);
    auto [train_set, valid_set, test_set] = split(data, {64, 16, 0}, 3);

    TrainConfig cfg;
    cfg.d_z = 2;
    cfg.hidden = 4;
    cfg.batch = 16;
    cfg.prior_kind = PriorKind::standard_gaussian;
    cfg.max_epochs = 3;
    cfg.patience = 50;
    cfg.seed = 5;

    const TrainResult res = train(train_set, valid_set, cfg);
    CHECK(res.log.size() == 3);
    for (const auto& rec : res.log) {
        CHECK(std::isfinite(rec.valid_elbo));
        CHECK(rec.fallback_count == 0);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.mn_ratio = 0.0;
    CHECK_THROWS_AS(cfg.validate(100), ArgumentError);
    cfg = TrainConfig{};
    cfg.batch = 0;
    CHECK_THROWS_AS(cfg.validate(100), ArgumentError);
    cfg = TrainConfig{};
    cfg.lr = -1.0;
    CHECK_THROWS_AS(cfg.validate(100), ArgumentError);
}
