#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "exvae/rng.hpp"

namespace exvae {

enum class SplitTag { train, valid, test };

// Flattened grayscale images in [0,1] with optional class labels.
// Immutable after construction by convention; all transforms return copies.
struct LabeledDataset {
    Eigen::MatrixXd images;      // n x d, row-major samples, values in [0,1]
    std::vector<int> labels;     // empty, or one label in {0..9} per row
    int rows = 0;                // image height (rows * cols == images.cols())
    int cols = 0;                // image width
    SplitTag tag = SplitTag::train;

    int n() const { return static_cast<int>(images.rows()); }
    int dim() const { return static_cast<int>(images.cols()); }
    bool has_labels() const { return !labels.empty(); }

    // Throws if any invariant is violated (pixel range, label length, n > 0).
    void validate() const;
};

// IDX container (the MNIST/Fashion-MNIST on-disk format).
//
//   images: magic 0x00000803 | count | rows | cols | uint8 pixels, row-major
//   labels: magic 0x00000801 | count | uint8 labels
//
// All header words are big-endian. Pixels are scaled to [0,1] by /255 so the
// endpoints 0 and 1 are preserved exactly.
LabeledDataset parse_idx(std::span<const std::uint8_t> image_bytes,
                         std::optional<std::span<const std::uint8_t>> label_bytes = std::nullopt);

// Inverse of parse_idx. Pixel bytes are round(p * 255); lossless for any
// dataset that came out of parse_idx.
std::vector<std::uint8_t> serialize_idx_images(const LabeledDataset& ds);
std::vector<std::uint8_t> serialize_idx_labels(const LabeledDataset& ds);

// Reads IDX from disk; paths ending in ".gz" are decompressed transparently.
LabeledDataset load_idx(const std::string& image_path,
                        const std::optional<std::string>& label_path = std::nullopt);

void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

// Resamples every pixel as an independent Bernoulli(pixel). Fresh draws on
// every call; callers re-binarize per epoch. Exemplars that feed the prior
// encoder are never passed through this.
Eigen::MatrixXd dynamic_binarize(const Eigen::MatrixXd& batch, Rng& rng);

// Seed-deterministic disjoint partition; sizes must sum to n.
std::tuple<LabeledDataset, LabeledDataset, LabeledDataset>
split(const LabeledDataset& ds, std::array<int, 3> sizes, std::uint64_t seed);

// Row subset in the given index order.
LabeledDataset take(const LabeledDataset& ds, std::span<const int> indices);

} // namespace exvae
