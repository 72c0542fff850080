#include "exvae/cache.hpp"

#include <algorithm>

#include "exvae/checkpoint.hpp"
#include "exvae/dataset.hpp"
#include "exvae/errors.hpp"
#include "exvae/model.hpp"

namespace exvae {

ExemplarCache::ExemplarCache(int n, int d_z)
    : means_(Eigen::MatrixXd::Zero(n, d_z)), staleness_(static_cast<std::size_t>(n), 0) {
    if (n < 1 || d_z < 1) throw ArgumentError("ExemplarCache: n and d_z must be positive");
}

ExemplarCache ExemplarCache::init(const LabeledDataset& exemplars, const Model& model) {
    if (exemplars.n() == 0) throw ArgumentError("cache_init: empty dataset");
    ExemplarCache cache(exemplars.n(), model.config().d_z);
    // chunked so the hidden activations stay modest for large pools
    constexpr int kChunk = 1024;
    for (int start = 0; start < exemplars.n(); start += kChunk) {
        const int count = std::min(kChunk, exemplars.n() - start);
        cache.means_.middleRows(start, count) =
            model.prior_means(exemplars.images.middleRows(start, count));
    }
    return cache;
}

void ExemplarCache::update(int index, const Eigen::VectorXd& mean) {
    if (index < 0 || index >= size())
        throw ContractError("cache_update: index out of range");
    if (mean.size() != dim())
        throw ContractError("cache_update: dimension mismatch");
    means_.row(index) = mean.transpose();
    staleness_[static_cast<std::size_t>(index)] = 0;
}

Eigen::VectorXd ExemplarCache::entry(int index) const {
    if (index < 0 || index >= size())
        throw ContractError("cache entry: index out of range");
    return means_.row(index).transpose();
}

int ExemplarCache::staleness(int index) const {
    if (index < 0 || index >= size())
        throw ContractError("cache staleness: index out of range");
    return staleness_[static_cast<std::size_t>(index)];
}

void ExemplarCache::age_all() {
    for (int& s : staleness_) ++s;
}

std::vector<int> ExemplarCache::knn_query(const Eigen::VectorXd& query, int k,
                                          std::optional<std::span<const int>> candidates) const {
    if (query.size() != dim())
        throw ContractError("knn_query: dimension mismatch");
    if (k < 1)
        throw ContractError("knn_query: k must be at least 1");

    std::vector<std::pair<double, int>> scored;
    if (candidates) {
        scored.reserve(candidates->size());
        for (int idx : *candidates) {
            if (idx < 0 || idx >= size())
                throw ContractError("knn_query: candidate index out of range");
            scored.emplace_back((means_.row(idx).transpose() - query).squaredNorm(), idx);
        }
    } else {
        scored.reserve(static_cast<std::size_t>(size()));
        for (int idx = 0; idx < size(); ++idx)
            scored.emplace_back((means_.row(idx).transpose() - query).squaredNorm(), idx);
    }

    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end());
    std::vector<int> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(scored[i].second);
    return out;
}

void ExemplarCache::dump(const std::string& path) const {
    ParamTree tree;
    tree.add("cache.means", means_);
    Eigen::MatrixXd st(1, size());
    for (int i = 0; i < size(); ++i) st(0, i) = staleness_[static_cast<std::size_t>(i)];
    tree.add("cache.staleness", st);
    save_blocks(path, tree);
}

ExemplarCache ExemplarCache::restore(const std::string& path) {
    ParamTree tree = load_blocks(path);
    const Eigen::MatrixXd& means = tree.at("cache.means");
    ExemplarCache cache(static_cast<int>(means.rows()), static_cast<int>(means.cols()));
    cache.means_ = means;
    const Eigen::MatrixXd& st = tree.at("cache.staleness");
    for (int i = 0; i < cache.size(); ++i)
        cache.staleness_[static_cast<std::size_t>(i)] = static_cast<int>(st(0, i));
    return cache;
}

} // namespace exvae
