#include "exvae/model.hpp"

#include <cmath>

#include "exvae/checkpoint.hpp"

namespace exvae {

namespace {

Eigen::MatrixXd init_weight(int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Eigen::MatrixXd w(in, out);
    for (int i = 0; i < in; ++i)
        for (int j = 0; j < out; ++j)
            w(i, j) = rng.uniform(-bound, bound);
    return w;
}

double sigmoid(double t) {
    return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// One gated hidden layer: (x Wa + ba) * sigmoid(x Wg + bg)
Eigen::MatrixXd glu_plain(const Eigen::MatrixXd& x, const ParamTree& p, const std::string& prefix) {
    Eigen::MatrixXd a = x * p.at(prefix + ".Wa");
    a.rowwise() += p.at(prefix + ".ba").row(0);
    Eigen::MatrixXd gate = x * p.at(prefix + ".Wg");
    gate.rowwise() += p.at(prefix + ".bg").row(0);
    return a.cwiseProduct(gate.unaryExpr([](double t) { return sigmoid(t); }));
}

Eigen::MatrixXd head_plain(const Eigen::MatrixXd& h, const ParamTree& p, const std::string& prefix) {
    Eigen::MatrixXd out = h * p.at(prefix + ".W");
    out.rowwise() += p.at(prefix + ".b").row(0);
    return out;
}

} // namespace

Model::Model(ModelConfig cfg, Rng& init_rng) : cfg_(cfg) {
    auto add_glu = [&](const std::string& prefix, int in, int out) {
        params_.add(prefix + ".Wa", init_weight(in, out, init_rng));
        params_.add(prefix + ".ba", Eigen::MatrixXd::Zero(1, out));
        params_.add(prefix + ".Wg", init_weight(in, out, init_rng));
        params_.add(prefix + ".bg", Eigen::MatrixXd::Zero(1, out));
    };
    auto add_head = [&](const std::string& prefix, int in, int out) {
        params_.add(prefix + ".W", init_weight(in, out, init_rng));
        params_.add(prefix + ".b", Eigen::MatrixXd::Zero(1, out));
    };

    add_glu("enc.l1", cfg_.d_x, cfg_.hidden);
    add_glu("enc.l2", cfg_.hidden, cfg_.hidden);
    add_head("enc.mu", cfg_.hidden, cfg_.d_z);
    add_head("enc.logvar", cfg_.hidden, cfg_.d_z);
    add_glu("dec.l1", cfg_.d_z, cfg_.hidden);
    add_glu("dec.l2", cfg_.hidden, cfg_.hidden);
    add_head("dec.out", cfg_.hidden, cfg_.d_x);
    params_.add("prior.logsig2", Eigen::MatrixXd::Zero(1, 1));
}

Model::Model(ModelConfig cfg, ParamTree params) : cfg_(cfg), params_(std::move(params)) {
    check_shapes();
}

void Model::check_shapes() const {
    auto expect = [&](const std::string& name, int rows, int cols) {
        const auto& m = params_.at(name);
        if (m.rows() != rows || m.cols() != cols)
            throw ContractError("model: block " + name + " has wrong shape");
    };
    expect("enc.l1.Wa", cfg_.d_x, cfg_.hidden);
    expect("enc.l2.Wa", cfg_.hidden, cfg_.hidden);
    expect("enc.mu.W", cfg_.hidden, cfg_.d_z);
    expect("enc.logvar.W", cfg_.hidden, cfg_.d_z);
    expect("dec.l1.Wa", cfg_.d_z, cfg_.hidden);
    expect("dec.out.W", cfg_.hidden, cfg_.d_x);
    expect("prior.logsig2", 1, 1);
}

Model::EncodeBatch Model::encode_batch(const Eigen::MatrixXd& x) const {
    if (x.cols() != cfg_.d_x) throw ContractError("encode: input dimension mismatch");
    const Eigen::MatrixXd h1 = glu_plain(x, params_, "enc.l1");
    const Eigen::MatrixXd h2 = glu_plain(h1, params_, "enc.l2");
    EncodeBatch out;
    out.mean = head_plain(h2, params_, "enc.mu");
    out.log_var = head_plain(h2, params_, "enc.logvar").cwiseMax(-kLogVarClamp).cwiseMin(kLogVarClamp);
    return out;
}

Eigen::MatrixXd Model::prior_means(const Eigen::MatrixXd& x) const {
    if (x.cols() != cfg_.d_x) throw ContractError("prior_encode: input dimension mismatch");
    const Eigen::MatrixXd h1 = glu_plain(x, params_, "enc.l1");
    const Eigen::MatrixXd h2 = glu_plain(h1, params_, "enc.l2");
    return head_plain(h2, params_, "enc.mu");
}

DiagGaussian Model::encode(const Eigen::VectorXd& x) const {
    const EncodeBatch b = encode_batch(x.transpose());
    return DiagGaussian{b.mean.row(0).transpose(), b.log_var.row(0).transpose()};
}

Eigen::VectorXd Model::prior_encode(const Eigen::VectorXd& x) const {
    return encode(x).mean;
}

Eigen::MatrixXd Model::decode_batch(const Eigen::MatrixXd& z) const {
    if (z.cols() != cfg_.d_z) throw ContractError("decode: latent dimension mismatch");
    const Eigen::MatrixXd h1 = glu_plain(z, params_, "dec.l1");
    const Eigen::MatrixXd h2 = glu_plain(h1, params_, "dec.l2");
    Eigen::MatrixXd logits = head_plain(h2, params_, "dec.out");
    return logits.unaryExpr([](double t) { return sigmoid(t); })
        .cwiseMax(kProbClamp)
        .cwiseMin(1.0 - kProbClamp);
}

Eigen::VectorXd Model::decode(const Eigen::VectorXd& z) const {
    return decode_batch(z.transpose()).row(0).transpose();
}

void Model::save(const std::string& path) const {
    ParamTree with_meta;
    Eigen::MatrixXd dims(1, 3);
    dims << cfg_.d_x, cfg_.d_z, cfg_.hidden;
    with_meta.add("meta.dims", dims);
    for (const auto& [name, m] : params_)
        with_meta.add(name, m);
    save_blocks(path, with_meta);
}

Model Model::load(const std::string& path) {
    ParamTree raw = load_blocks(path);
    const Eigen::MatrixXd& dims = raw.at("meta.dims");
    ModelConfig cfg;
    cfg.d_x = static_cast<int>(dims(0, 0));
    cfg.d_z = static_cast<int>(dims(0, 1));
    cfg.hidden = static_cast<int>(dims(0, 2));
    ParamTree params;
    for (const auto& [name, m] : raw)
        if (name != "meta.dims") params.add(name, m);
    return Model(cfg, std::move(params));
}

Eigen::VectorXd reparam_sample(const DiagGaussian& g, const Eigen::VectorXd& eps) {
    if (eps.size() != g.mean.size())
        throw ContractError("reparam_sample: noise length mismatch");
    return g.mean.array() + (g.log_var.array() / 2.0).exp() * eps.array();
}

double bernoulli_log_prob(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) {
    if (x.size() != mu.size()) throw ContractError("bernoulli_log_prob: length mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        acc += x(i) * std::log(mu(i)) + (1.0 - x(i)) * std::log(1.0 - mu(i));
    if (std::isnan(acc)) throw NumericError("bernoulli_log_prob: NaN");
    return acc;
}

Eigen::VectorXd bernoulli_log_prob_rows(const Eigen::MatrixXd& x, const Eigen::MatrixXd& mu) {
    if (x.rows() != mu.rows() || x.cols() != mu.cols())
        throw ContractError("bernoulli_log_prob_rows: shape mismatch");
    Eigen::VectorXd out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        out(i) = bernoulli_log_prob(x.row(i).transpose(), mu.row(i).transpose());
    return out;
}

// ---- graph builders ---------------------------------------------------------

Var BoundModel::at(std::string_view name) const {
    auto it = vars.find(name);
    if (it == vars.end())
        throw ContractError("BoundModel: no block named " + std::string(name));
    return it->second;
}

BoundModel bind_model(Graph& g, const Model& m) {
    BoundModel bm;
    bm.model = &m;
    for (const auto& [name, mat] : m.params())
        bm.vars.emplace(name, g.leaf(mat, name));
    return bm;
}

ParamTree read_grads(const Graph& g, const BoundModel& bm) {
    ParamTree grads;
    for (const auto& [name, mat] : bm.model->params())
        grads.add(name, g.grad(bm.at(name)));
    return grads;
}

namespace {

Var glu_g(Graph& g, const BoundModel& bm, Var x, const std::string& prefix) {
    Var a = g.affine(x, bm.at(prefix + ".Wa"), bm.at(prefix + ".ba"));
    Var gate = g.sigmoid(g.affine(x, bm.at(prefix + ".Wg"), bm.at(prefix + ".bg")));
    return g.mul(a, gate);
}

} // namespace

EncOutG encode_g(Graph& g, const BoundModel& bm, Var x) {
    Var h1 = glu_g(g, bm, x, "enc.l1");
    Var h2 = glu_g(g, bm, h1, "enc.l2");
    EncOutG out;
    out.mean = g.affine(h2, bm.at("enc.mu.W"), bm.at("enc.mu.b"));
    out.log_var = g.clamp(g.affine(h2, bm.at("enc.logvar.W"), bm.at("enc.logvar.b")),
                          -kLogVarClamp, kLogVarClamp);
    return out;
}

Var prior_means_g(Graph& g, const BoundModel& bm, Var x) {
    Var h1 = glu_g(g, bm, x, "enc.l1");
    Var h2 = glu_g(g, bm, h1, "enc.l2");
    return g.affine(h2, bm.at("enc.mu.W"), bm.at("enc.mu.b"));
}

Var decode_g(Graph& g, const BoundModel& bm, Var z) {
    Var h1 = glu_g(g, bm, z, "dec.l1");
    Var h2 = glu_g(g, bm, h1, "dec.l2");
    Var probs = g.sigmoid(g.affine(h2, bm.at("dec.out.W"), bm.at("dec.out.b")));
    return g.clamp(probs, kProbClamp, 1.0 - kProbClamp);
}

Var bernoulli_log_prob_g(Graph& g, Var targets, Var probs) {
    Var log_p = g.log_(probs);
    Var log_q = g.log_(g.add_const(g.neg(probs), 1.0));
    Var one_minus_x = g.add_const(g.neg(targets), 1.0);
    return g.row_sum(g.add(g.mul(targets, log_p), g.mul(one_minus_x, log_q)));
}

} // namespace exvae
