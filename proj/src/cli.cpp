#include "exvae/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "exvae/augment.hpp"
#include "exvae/cache.hpp"
#include "exvae/checkpoint.hpp"
#include "exvae/dataset.hpp"
#include "exvae/dataset_synth.hpp"
#include "exvae/errors.hpp"
#include "exvae/eval.hpp"
#include "exvae/prior.hpp"
#include "exvae/sampler.hpp"
#include "exvae/trainer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace exvae {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// every key any subcommand understands; one config file can drive a whole
// train/eval/sample/augment pipeline
constexpr std::string_view kAllKeys[] = {
    "seed", "out_dir", "threads",
    "train_images", "train_labels", "test_images", "test_labels", "synth_n", "limit_n",
    "n_train", "n_valid", "n_test",
    "d_z", "hidden", "batch", "lr", "mn_ratio", "k", "anneal_epochs", "patience",
    "max_epochs", "prior", "loo", "knn_global_filter",
    "checkpoint", "iwae_samples", "iwae_points", "knn_k", "export_latents", "eval_split",
    "mode", "count", "steps", "grid_rows", "grid_cols", "source_index", "source_index_b",
    "noise_seed",
    "lambda", "lambda_grid", "smoothing", "clf_lr", "clf_batch", "clf_epochs", "clf_hidden",
    "union_mode", "aug_seeds",
    "max_exemplars",
};

void apply_threads(const KeyValueConfig& cfg) {
    int threads = static_cast<int>(cfg.get_int("threads", 0));
    if (threads <= 0) {
        if (const char* env = std::getenv("EXVAE_THREADS"))
            threads = std::atoi(env);
    }
    if (threads <= 0) threads = 1;
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
    Eigen::setNbThreads(threads);
}

struct LoadedData {
    LabeledDataset train, valid, test;
};

// Dataset resolution shared by all subcommands: either IDX files from disk
// (train_images/train_labels, optional test_images/test_labels) or the
// synthetic corpus (synth_n). The train file is split deterministically with
// the "data" substream of the root seed.
LoadedData load_data(const KeyValueConfig& cfg, std::uint64_t seed) {
    LabeledDataset full;
    if (auto path = cfg.get("train_images")) {
        std::optional<std::string> labels = cfg.get("train_labels");
        full = load_idx(*path, labels);
    } else {
        const long synth_n = cfg.get_int("synth_n", 0);
        if (synth_n <= 0)
            throw ConfigError("train_images required (or synth_n for the synthetic corpus)");
        full = make_synthetic_digits(static_cast<int>(synth_n),
                                     Rng::substream_seed(seed, "data-synth"));
    }

    const long limit = cfg.get_int("limit_n", 0);
    if (limit > 0 && limit < full.n()) {
        std::vector<int> head(static_cast<std::size_t>(limit));
        for (long i = 0; i < limit; ++i) head[static_cast<std::size_t>(i)] = static_cast<int>(i);
        full = take(full, head);
    }

    LoadedData out;
    bool have_test_file = false;
    if (auto tpath = cfg.get("test_images")) {
        out.test = load_idx(*tpath, cfg.get("test_labels"));
        out.test.tag = SplitTag::test;
        have_test_file = true;
    }

    const int n = full.n();
    long n_valid = cfg.get_int("n_valid", -1);
    long n_test = cfg.get_int("n_test", -1);
    long n_train = cfg.get_int("n_train", -1);
    if (n_valid < 0 && n_test < 0 && n_train < 0 && n == 60000) {
        // conventional MNIST-family split
        n_train = 50000;
        n_valid = 10000;
        n_test = have_test_file ? 0 : 10000;
    }
    if (n_valid < 0) n_valid = n / 10;
    if (n_test < 0) n_test = have_test_file ? 0 : n / 10;
    if (n_train < 0) n_train = n - n_valid - n_test;

    auto [tr, va, te] = split(full, {static_cast<int>(n_train), static_cast<int>(n_valid),
                                     static_cast<int>(n_test)},
                              Rng::substream_seed(seed, "data-split"));
    out.train = std::move(tr);
    out.valid = std::move(va);
    if (!have_test_file) out.test = std::move(te);
    return out;
}

fs::path prepare_out_dir(const KeyValueConfig& cfg) {
    const fs::path dir = cfg.get_str("out_dir", ".");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw IoError("cannot create output directory: " + dir.string());
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

TrainConfig train_config_from(const KeyValueConfig& cfg, std::uint64_t seed) {
    TrainConfig tc;
    tc.seed = seed;
    tc.d_z = static_cast<int>(cfg.get_int("d_z", tc.d_z));
    tc.hidden = static_cast<int>(cfg.get_int("hidden", tc.hidden));
    tc.batch = static_cast<int>(cfg.get_int("batch", tc.batch));
    tc.lr = cfg.get_double("lr", tc.lr);
    tc.mn_ratio = cfg.get_double("mn_ratio", tc.mn_ratio);
    tc.k_neighbors = static_cast<int>(cfg.get_int("k", tc.k_neighbors));
    tc.anneal_epochs = static_cast<int>(cfg.get_int("anneal_epochs", tc.anneal_epochs));
    tc.patience = static_cast<int>(cfg.get_int("patience", tc.patience));
    tc.max_epochs = static_cast<int>(cfg.get_int("max_epochs", tc.max_epochs));
    tc.loo = cfg.get_bool("loo", tc.loo);
    tc.knn_global_filter = cfg.get_bool("knn_global_filter", tc.knn_global_filter);
    const std::string prior = cfg.get_str("prior", "exemplar");
    if (prior == "exemplar")
        tc.prior_kind = PriorKind::exemplar;
    else if (prior == "standard-gaussian")
        tc.prior_kind = PriorKind::standard_gaussian;
    else
        throw ConfigError("config key prior: expected exemplar|standard-gaussian, got " + prior);
    return tc;
}

json epoch_json(const EpochRecord& r) {
    return json{{"epoch", r.epoch},
                {"train_elbo", r.train_elbo},
                {"train_elbo_annealed", r.train_elbo_annealed},
                {"valid_elbo", r.valid_elbo},
                {"kl", r.kl},
                {"recon", r.recon},
                {"sigma2", r.sigma2},
                {"fallback_count", r.fallback_count}};
}

int guarded(const KeyValueConfig& cfg, int (*body)(const KeyValueConfig&)) {
    try {
        return body(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---- train ------------------------------------------------------------------

int cmd_train_body(const KeyValueConfig& cfg) {
    const std::uint64_t seed = cfg.require_seed();
    apply_threads(cfg);
    const fs::path out_dir = prepare_out_dir(cfg);
    const LoadedData data = load_data(cfg, seed);
    const TrainConfig tc = train_config_from(cfg, seed);
    cfg.reject_outside(kAllKeys);

    write_text(out_dir / "config.resolved", cfg.resolved_text());

    std::ofstream log(out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log) throw IoError("cannot open train log");

    TrainCallbacks callbacks;
    callbacks.on_epoch = [&](const EpochRecord& r) {
        log << epoch_json(r).dump() << "\n";
        log.flush();
    };
    callbacks.on_improve = [&](const Model& m, const ExemplarCache* cache, const EpochRecord&) {
        m.save((out_dir / "checkpoint_best.bin").string());
        if (cache) cache->dump((out_dir / "cache_best.bin").string());
    };

    const TrainResult result = train(data.train, data.valid, tc, callbacks);
    result.model.save((out_dir / "checkpoint_last.bin").string());

    std::cout << "best_epoch " << result.best_epoch << "\n";
    std::cout << "final_valid_elbo " << result.best_valid_elbo << "\n";
    return 0;
}

// ---- eval -------------------------------------------------------------------

int cmd_eval_body(const KeyValueConfig& cfg) {
    const std::uint64_t seed = cfg.require_seed();
    apply_threads(cfg);
    const fs::path out_dir = prepare_out_dir(cfg);
    const LoadedData data = load_data(cfg, seed);
    const Model model = Model::load(cfg.require_str("checkpoint"));

    const int iwae_samples = static_cast<int>(cfg.get_int("iwae_samples", 5000));
    const int iwae_points = static_cast<int>(cfg.get_int("iwae_points", 0));
    const int knn_k = static_cast<int>(cfg.get_int("knn_k", 5));
    const bool export_latents = cfg.get_bool("export_latents", false);
    const std::string which = cfg.get_str("eval_split", "test");
    const std::string prior_name = cfg.get_str("prior", "exemplar");
    cfg.reject_outside(kAllKeys);

    const LabeledDataset& eval_set =
        which == "valid" ? data.valid : (which == "train" ? data.train : data.test);
    if (eval_set.n() == 0) throw ConfigError("eval split '" + which + "' is empty");

    // Evaluation-mode prior: every train exemplar, fresh means, no truncation.
    Eigen::MatrixXd fresh_means;
    LatentPrior prior = LatentPrior::gaussian();
    if (prior_name == "exemplar") {
        fresh_means = model.prior_means(data.train.images);
        prior = LatentPrior::mixture(MixtureView{&fresh_means, model.sigma2(),
                                                 fresh_means.rows()});
    } else if (prior_name != "standard-gaussian") {
        throw ConfigError("config key prior: expected exemplar|standard-gaussian");
    }

    Rng eval_rng = Rng::substream(seed, "eval");
    const Eigen::MatrixXd x_bin = dynamic_binarize(eval_set.images, eval_rng);

    EvalReport report;
    report.iwae_samples = iwae_samples;
    report.knn_k = knn_k;

    const int points = iwae_points > 0 ? std::min<int>(iwae_points, eval_set.n()) : eval_set.n();
    const Eigen::VectorXd iwae =
        iwae_bound_dataset(x_bin.topRows(points), model, prior, iwae_samples, eval_rng);
    report.iwae_per_point.assign(iwae.data(), iwae.data() + iwae.size());
    report.iwae_mean = iwae.mean();

    const ElboDecomposition decomp = elbo_decompose(x_bin, model, prior, eval_rng);
    report.mean_kl = decomp.mean_kl;
    report.mean_neg_recon = decomp.mean_neg_recon;
    report.active_dims = active_dimensions(eval_set.images, model);

    if (data.train.has_labels() && eval_set.has_labels()) {
        const Eigen::MatrixXd train_means = model.prior_means(data.train.images);
        const Eigen::MatrixXd eval_means = model.prior_means(eval_set.images);
        report.knn_error_pct =
            knn_classify(train_means, data.train.labels, eval_means, eval_set.labels, knn_k);
        if (export_latents) {
            write_latents_csv((out_dir / "latents_train.csv").string(), train_means,
                              data.train.labels);
            write_latents_csv((out_dir / ("latents_" + which + ".csv")).string(), eval_means,
                              eval_set.labels);
        }
    } else if (export_latents) {
        write_latents_csv((out_dir / ("latents_" + which + ".csv")).string(),
                          model.prior_means(eval_set.images), eval_set.labels);
    }

    write_text(out_dir / "eval_report.json", report.to_json() + "\n");
    std::cout << "iwae_mean " << report.iwae_mean << "\n";
    std::cout << "mean_kl " << report.mean_kl << "\n";
    std::cout << "mean_neg_recon " << report.mean_neg_recon << "\n";
    std::cout << "active_dims " << report.active_dims << "\n";
    if (report.knn_error_pct >= 0)
        std::cout << "knn_error_pct " << report.knn_error_pct << "\n";
    return 0;
}

// ---- sample -----------------------------------------------------------------

int cmd_sample_body(const KeyValueConfig& cfg) {
    const std::uint64_t seed = cfg.require_seed();
    apply_threads(cfg);
    const fs::path out_dir = prepare_out_dir(cfg);
    const LoadedData data = load_data(cfg, seed);
    const Model model = Model::load(cfg.require_str("checkpoint"));

    const std::string mode = cfg.get_str("mode", "generate");
    const int count = static_cast<int>(cfg.get_int("count", 64));
    const int steps = static_cast<int>(cfg.get_int("steps", 8));
    int grid_rows = static_cast<int>(cfg.get_int("grid_rows", 0));
    int grid_cols = static_cast<int>(cfg.get_int("grid_cols", 0));
    const int source = static_cast<int>(cfg.get_int("source_index", 0));
    const int source_b = static_cast<int>(cfg.get_int("source_index_b", 1));
    const bool noise_seed = cfg.get_bool("noise_seed", false);
    cfg.reject_outside(kAllKeys);

    Rng rng = Rng::substream(seed, "sample");
    SampleBatch batch;
    if (mode == "generate") {
        batch = generate(model, data.train.images, count, rng);
    } else if (mode == "conditioned") {
        batch = conditioned(model, data.train.images.row(source).transpose(), count, rng);
    } else if (mode == "iterate") {
        Eigen::VectorXd start;
        if (noise_seed) {
            start.resize(model.config().d_x);
            for (Eigen::Index j = 0; j < start.size(); ++j) start(j) = rng.uniform();
        } else {
            start = data.train.images.row(source).transpose();
        }
        batch = iterate(model, start, steps, rng);
    } else if (mode == "interpolate") {
        batch = interpolate(model, data.train.images.row(source).transpose(),
                            data.train.images.row(source_b).transpose(), steps);
    } else {
        throw ConfigError("config key mode: expected generate|conditioned|iterate|interpolate");
    }

    const int n_imgs = static_cast<int>(batch.images.rows());
    if (grid_cols <= 0) grid_cols = std::min(8, n_imgs);
    if (grid_rows <= 0) grid_rows = (n_imgs + grid_cols - 1) / grid_cols;

    const fs::path pgm = out_dir / ("samples_" + mode + ".pgm");
    write_pgm_grid(pgm.string(), batch.images, grid_rows, grid_cols, data.train.rows,
                   data.train.cols);

    LabeledDataset as_ds;
    as_ds.images = batch.images;
    as_ds.rows = data.train.rows;
    as_ds.cols = data.train.cols;
    const fs::path idx = out_dir / ("samples_" + mode + ".idx");
    const auto bytes = serialize_idx_images(as_ds);
    write_file(idx.string(), bytes);

    std::cout << "wrote " << pgm.string() << "\n";
    std::cout << "wrote " << idx.string() << "\n";
    return 0;
}

// ---- augment ------------------------------------------------------------------

int cmd_augment_body(const KeyValueConfig& cfg) {
    const std::uint64_t seed = cfg.require_seed();
    apply_threads(cfg);
    const fs::path out_dir = prepare_out_dir(cfg);
    const LoadedData data = load_data(cfg, seed);

    std::optional<Model> vae;
    if (auto ckpt = cfg.get("checkpoint")) vae = Model::load(*ckpt);

    AugConfig ac;
    ac.smoothing = cfg.get_double("smoothing", ac.smoothing);
    ac.lr = cfg.get_double("clf_lr", ac.lr);
    ac.batch = static_cast<int>(cfg.get_int("clf_batch", ac.batch));
    ac.epochs = static_cast<int>(cfg.get_int("clf_epochs", ac.epochs));
    ac.hidden = cfg.get_int_list("clf_hidden", ac.hidden);
    ac.union_mode = cfg.get_bool("union_mode", false);
    const std::vector<double> lambdas =
        cfg.get_double_list("lambda_grid", {cfg.get_double("lambda", 0.4)});
    const int n_seeds = static_cast<int>(cfg.get_int("aug_seeds", 1));
    cfg.reject_outside(kAllKeys);

    for (double lam : lambdas)
        if (lam < 1.0 && !vae)
            throw ConfigError("checkpoint required for lambda < 1");

    std::ofstream sweep(out_dir / "aug_sweep.jsonl", std::ios::trunc);
    if (!sweep) throw IoError("cannot open aug_sweep.jsonl");

    std::cout << "lambda mean_test_error std n_seeds\n";
    for (double lam : lambdas) {
        std::vector<double> errs;
        for (int s = 0; s < n_seeds; ++s) {
            AugConfig run_cfg = ac;
            run_cfg.lambda = lam;
            run_cfg.seed = seed + static_cast<std::uint64_t>(s);
            const AugResult res = train_classifier(data.train, data.valid,
                                                   vae ? &*vae : nullptr, run_cfg, &data.test);
            errs.push_back(res.test_error_pct);
            json row{{"lambda", lam},
                     {"seed", run_cfg.seed},
                     {"test_error_pct", res.test_error_pct},
                     {"final_valid_error_pct", res.curve.back().valid_error_pct},
                     {"hidden", run_cfg.hidden},
                     {"epochs", run_cfg.epochs},
                     {"optimizer", "gn_adam"},
                     {"lr", run_cfg.lr}};
            sweep << row.dump() << "\n";
        }
        double mean = 0.0;
        for (double e : errs) mean += e;
        mean /= static_cast<double>(errs.size());
        double var = 0.0;
        for (double e : errs) var += (e - mean) * (e - mean);
        const double sd = errs.size() > 1 ? std::sqrt(var / (static_cast<double>(errs.size()) - 1)) : 0.0;
        std::cout << lam << " " << mean << " " << sd << " " << errs.size() << "\n";
    }
    return 0;
}

// ---- parzen -------------------------------------------------------------------

int cmd_parzen_body(const KeyValueConfig& cfg) {
    const std::uint64_t seed = cfg.require_seed();
    apply_threads(cfg);
    const fs::path out_dir = prepare_out_dir(cfg);
    const LoadedData data = load_data(cfg, seed);
    const long max_exemplars = cfg.get_int("max_exemplars", 0);
    cfg.reject_outside(kAllKeys);

    Eigen::MatrixXd exemplars = data.train.images;
    if (max_exemplars > 0 && max_exemplars < exemplars.rows())
        exemplars = exemplars.topRows(max_exemplars);

    const double sigma2 = fit_bandwidth(exemplars, data.valid.images);
    const LabeledDataset& eval_set = data.test.n() > 0 ? data.test : data.valid;
    MixtureView view{&exemplars, sigma2, exemplars.rows()};
    const double mean_ld = log_mixture_density_batch(eval_set.images, view).mean();

    json out{{"sigma2", sigma2},
             {"mean_test_log_density", mean_ld},
             {"n_exemplars", exemplars.rows()},
             {"n_eval", eval_set.n()}};
    write_text(out_dir / "parzen_report.json", out.dump() + "\n");
    std::cout << "sigma2 " << sigma2 << "\n";
    std::cout << "mean_test_log_density " << mean_ld << "\n";
    return 0;
}

} // namespace

int cmd_train(const KeyValueConfig& cfg) { return guarded(cfg, cmd_train_body); }
int cmd_eval(const KeyValueConfig& cfg) { return guarded(cfg, cmd_eval_body); }
int cmd_sample(const KeyValueConfig& cfg) { return guarded(cfg, cmd_sample_body); }
int cmd_augment(const KeyValueConfig& cfg) { return guarded(cfg, cmd_augment_body); }
int cmd_parzen(const KeyValueConfig& cfg) { return guarded(cfg, cmd_parzen_body); }

int run_cli(int argc, char** argv) {
    CLI::App app{"Exemplar VAE: training, evaluation, sampling, augmentation, Parzen baseline"};
    app.require_subcommand(1);

    struct SubArgs {
        std::string config_path;
        std::vector<std::string> sets;
        CLI::App* sub = nullptr;
    };
    std::map<std::string, SubArgs> subs;

    const std::vector<std::pair<std::string, std::string>> names = {
        {"train", "Train an Exemplar VAE or Gaussian-prior baseline"},
        {"eval", "IWAE bound, ELBO split, active dimensions, kNN error"},
        {"sample", "Generate image grids (generate|conditioned|iterate|interpolate)"},
        {"augment", "Classifier training with generative augmentation"},
        {"parzen", "Pixel-space Parzen window baseline"},
    };
    for (const auto& [name, desc] : names) {
        SubArgs& sa = subs[name];
        sa.sub = app.add_subcommand(name, desc);
        sa.sub->add_option("--config", sa.config_path, "key = value config file");
        sa.sub->add_option("--set", sa.sets, "override: key=value (repeatable)")
            ->take_all();
        sa.sub->allow_extras();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    for (const auto& [name, sa] : subs) {
        if (!sa.sub->parsed()) continue;

        KeyValueConfig cfg;
        try {
            if (!sa.config_path.empty()) cfg = KeyValueConfig::from_file(sa.config_path);
            // remaining --key value / --key=value extras map onto config keys
            const std::vector<std::string> extras = sa.sub->remaining();
            for (std::size_t i = 0; i < extras.size(); ++i) {
                std::string tok = extras[i];
                if (tok.rfind("--", 0) != 0)
                    throw ConfigError("unexpected argument: " + tok);
                tok = tok.substr(2);
                std::string key, value;
                const auto eq = tok.find('=');
                if (eq != std::string::npos) {
                    key = tok.substr(0, eq);
                    value = tok.substr(eq + 1);
                } else {
                    key = tok;
                    if (i + 1 >= extras.size())
                        throw ConfigError("flag --" + key + " needs a value");
                    value = extras[++i];
                }
                for (char& c : key)
                    if (c == '-') c = '_';
                cfg.set(key, value);
            }
            for (const auto& kv : sa.sets) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw ConfigError("--set expects key=value, got " + kv);
                cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }

        if (name == "train") return cmd_train(cfg);
        if (name == "eval") return cmd_eval(cfg);
        if (name == "sample") return cmd_sample(cfg);
        if (name == "augment") return cmd_augment(cfg);
        if (name == "parzen") return cmd_parzen(cfg);
    }
    return 1;
}

} // namespace exvae
