#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "exvae/errors.hpp"

namespace exvae {

// log(sum_i exp(v_i)), shifted by the max so any finite input is overflow
// safe. An all -inf vector yields -inf; an empty vector is an error.
double log_sum_exp(std::span<const double> values);
double log_sum_exp(const Eigen::VectorXd& values);

// Named parameter blocks in insertion order. The gradient tree of a model is
// simply another ParamTree with identical block names and shapes.
class ParamTree {
public:
    Eigen::MatrixXd& add(std::string name, Eigen::MatrixXd init);

    Eigen::MatrixXd& at(std::string_view name);
    const Eigen::MatrixXd& at(std::string_view name) const;
    bool has(std::string_view name) const;

    std::size_t size() const { return blocks_.size(); }
    auto begin() { return blocks_.begin(); }
    auto end() { return blocks_.end(); }
    auto begin() const { return blocks_.begin(); }
    auto end() const { return blocks_.end(); }

    // Same names and shapes, all zeros; the canonical gradient tree.
    ParamTree zeros_like() const;

    // Throws ContractError unless `other` mirrors this tree exactly.
    void check_same_shape(const ParamTree& other, const char* what) const;

    bool all_finite() const;

private:
    std::vector<std::pair<std::string, Eigen::MatrixXd>> blocks_;
};

} // namespace exvae
