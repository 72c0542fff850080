#include "exvae/numerics.hpp"

#include <cmath>
#include <limits>

namespace exvae {

double log_sum_exp(std::span<const double> values) {
    if (values.empty())
        throw ArgumentError("log_sum_exp: empty input");
    double m = -std::numeric_limits<double>::infinity();
    for (double v : values) m = std::max(m, v);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - m);
    return m + std::log(acc);
}

double log_sum_exp(const Eigen::VectorXd& values) {
    return log_sum_exp(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

Eigen::MatrixXd& ParamTree::add(std::string name, Eigen::MatrixXd init) {
    if (has(name)) throw ContractError("ParamTree: duplicate block " + name);
    blocks_.emplace_back(std::move(name), std::move(init));
    return blocks_.back().second;
}

Eigen::MatrixXd& ParamTree::at(std::string_view name) {
    for (auto& [n, m] : blocks_)
        if (n == name) return m;
    throw ContractError("ParamTree: no block named " + std::string(name));
}

const Eigen::MatrixXd& ParamTree::at(std::string_view name) const {
    for (const auto& [n, m] : blocks_)
        if (n == name) return m;
    throw ContractError("ParamTree: no block named " + std::string(name));
}

bool ParamTree::has(std::string_view name) const {
    for (const auto& [n, m] : blocks_)
        if (n == name) return true;
    return false;
}

ParamTree ParamTree::zeros_like() const {
    ParamTree out;
    for (const auto& [n, m] : blocks_)
        out.add(n, Eigen::MatrixXd::Zero(m.rows(), m.cols()));
    return out;
}

void ParamTree::check_same_shape(const ParamTree& other, const char* what) const {
    if (other.size() != size())
        throw ContractError(std::string(what) + ": block count mismatch");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& [na, ma] = blocks_[i];
        const auto& [nb, mb] = other.blocks_[i];
        if (na != nb || ma.rows() != mb.rows() || ma.cols() != mb.cols())
            throw ContractError(std::string(what) + ": mismatch at block " + na);
    }
}

bool ParamTree::all_finite() const {
    for (const auto& [n, m] : blocks_)
        if (!m.allFinite()) return false;
    return true;
}

} // namespace exvae
