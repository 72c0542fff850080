#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace exvae {

class Model;
struct LabeledDataset;

// Mutable table of cached latent means, one row per exemplar, with exact
// brute-force kNN queries. Retrieval only ever selects *which* components
// enter the truncated prior; their means are re-encoded fresh by the caller,
// so the lower bound stays valid no matter how stale the table is.
//
// Single-writer: the training loop owns updates; concurrent reads are fine
// between write phases.
class ExemplarCache {
public:
    ExemplarCache(int n, int d_z);

    // One pass of the prior encoder (mean head) over all exemplars.
    static ExemplarCache init(const LabeledDataset& exemplars, const Model& model);

    int size() const { return static_cast<int>(means_.rows()); }
    int dim() const { return static_cast<int>(means_.cols()); }

    void update(int index, const Eigen::VectorXd& mean);
    Eigen::VectorXd entry(int index) const;
    const Eigen::MatrixXd& means() const { return means_; }
    int staleness(int index) const;
    // Called once per epoch by the trainer; bumps every counter, updates reset them.
    void age_all();

    // Indices of the K smallest squared distances to `query`, restricted to
    // `candidates` when given. Sorted by (distance, index); asking for more
    // neighbors than there are candidates returns all of them. This is
    // kNN-within-the-restriction, not global kNN filtered afterwards.
    std::vector<int> knn_query(const Eigen::VectorXd& query, int k,
                               std::optional<std::span<const int>> candidates = std::nullopt) const;

    void dump(const std::string& path) const;
    static ExemplarCache restore(const std::string& path);

private:
    Eigen::MatrixXd means_;       // n x d_z
    std::vector<int> staleness_;  // epochs since last refresh; diagnostics only
};

} // namespace exvae
