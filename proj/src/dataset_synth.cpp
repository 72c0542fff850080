#include "exvae/dataset_synth.hpp"

#include <cmath>
#include <vector>

namespace exvae {

namespace {

struct Stroke {
    double x, y;      // center, pixel coordinates
    double sigma;     // isotropic radius
    double weight;
};

std::vector<Stroke> class_prototype(std::uint64_t seed, int c, int img) {
    Rng rng = Rng::substream(seed, "synth-class-" + std::to_string(c));
    const double lo = img * 0.22, hi = img * 0.78;
    const int n_strokes = 4 + rng.uniform_int(3); // 4..6
    std::vector<Stroke> strokes(static_cast<std::size_t>(n_strokes));
    for (auto& s : strokes) {
        s.x = rng.uniform(lo, hi);
        s.y = rng.uniform(lo, hi);
        s.sigma = rng.uniform(1.6, 3.4);
        s.weight = rng.uniform(0.7, 1.0);
    }
    return strokes;
}

} // namespace

LabeledDataset make_synthetic_digits(int n, std::uint64_t seed, int img_size) {
    if (n <= 0) throw ArgumentError("make_synthetic_digits: n must be positive");

    std::vector<std::vector<Stroke>> protos;
    protos.reserve(10);
    for (int c = 0; c < 10; ++c)
        protos.push_back(class_prototype(seed, c, img_size));

    LabeledDataset ds;
    ds.rows = img_size;
    ds.cols = img_size;
    ds.images.resize(n, static_cast<Eigen::Index>(img_size) * img_size);
    ds.labels.resize(static_cast<std::size_t>(n));

    Rng rng = Rng::substream(seed, "synth-samples");
    const double c0 = (img_size - 1) / 2.0;

    for (int i = 0; i < n; ++i) {
        const int label = i % 10;
        ds.labels[static_cast<std::size_t>(i)] = label;

        const double dx = rng.uniform(-2.5, 2.5);
        const double dy = rng.uniform(-2.5, 2.5);
        const double scale = rng.uniform(0.88, 1.12);
        const double theta = rng.uniform(-0.25, 0.25);
        const double ct = std::cos(theta), st = std::sin(theta);

        std::vector<Stroke> strokes = protos[static_cast<std::size_t>(label)];
        for (auto& s : strokes) {
            const double rx = s.x - c0, ry = s.y - c0;
            s.x = c0 + scale * (ct * rx - st * ry) + dx + 0.35 * rng.normal();
            s.y = c0 + scale * (st * rx + ct * ry) + dy + 0.35 * rng.normal();
            s.weight *= rng.uniform(0.85, 1.15);
        }

        for (int py = 0; py < img_size; ++py)
            for (int px = 0; px < img_size; ++px) {
                double v = 0.0;
                for (const auto& s : strokes) {
                    const double ddx = px - s.x, ddy = py - s.y;
                    v += s.weight * std::exp(-(ddx * ddx + ddy * ddy) / (2.0 * s.sigma * s.sigma));
                }
                ds.images(i, static_cast<Eigen::Index>(py) * img_size + px) = std::min(1.0, v);
            }
    }
    return ds;
}

} // namespace exvae
