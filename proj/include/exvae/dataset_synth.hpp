#pragma once

#include <cstdint>

#include "exvae/dataset.hpp"

namespace exvae {

// Deterministic MNIST-shaped synthetic corpus: 10 classes of 28x28 grayscale
// glyphs in [0,1]. Each class is a fixed arrangement of Gaussian strokes;
// each sample jitters that arrangement (shift, rotation, scale, per-stroke
// noise), so classes form smooth low-dimensional manifolds.
//
// Used for demos and for desk-scale experiments when no real IDX files are
// at hand. Classes are balanced (label = index mod 10).
LabeledDataset make_synthetic_digits(int n, std::uint64_t seed, int img_size = 28);

} // namespace exvae
