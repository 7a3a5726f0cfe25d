// Random instance generators shared by the unit and acceptance suites.
#pragma once

#include <random>

#include <dfrf/dfrf.hpp>

namespace dfrf::fixtures {

struct Instance {
    LabelField labels;
    LabelField prev;
    EncodingLayer enc;
    UnaryField unary;
    LayerEnergyParams params;
};

inline LabelField random_labels(int w, int h, std::mt19937_64& rng) {
    LabelField out(w, h);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) out.set(i, coin(rng) ? kForeground : kBackground);
    return out;
}

/// Dense random responsibilities (rows from normalized exponentials).
inline Matrix random_responsibilities(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::exponential_distribution<double> draw(1.0);
    Matrix resp(n, k);
    for (std::size_t j = 0; j < n; ++j) {
        double total = 0.0;
        for (std::size_t m = 0; m < k; ++m) total += resp(j, m) = draw(rng);
        for (std::size_t m = 0; m < k; ++m) resp(j, m) /= total;
    }
    return resp;
}

/// Pixels laid out as a single row; unary costs in [0, 3); alpha in [0, 1],
/// beta in [0, 4).
inline Instance random_instance(std::mt19937_64& rng, int pixels, std::size_t nodes, std::size_t top_k) {
    std::uniform_real_distribution<double> cost(0.0, 3.0), unit(0.0, 1.0);
    Instance in;
    in.labels = random_labels(pixels, 1, rng);
    in.prev = random_labels(pixels, 1, rng);
    in.enc = EncodingLayer::from_dense(random_responsibilities(static_cast<std::size_t>(pixels), nodes, rng), top_k);
    in.unary = UnaryField(pixels, 1);
    for (int j = 0; j < pixels; ++j) in.unary.set(static_cast<std::size_t>(j), cost(rng), cost(rng));
    in.params = {unit(rng), 4.0 * unit(rng)};
    return in;
}

/// Brute-force minimum of layer_energy over all 2^n labelings.
inline double exhaustive_minimum(const Instance& in) {
    const std::size_t n = in.prev.pixel_count();
    double best = std::numeric_limits<double>::infinity();
    LabelField y(in.prev.width(), in.prev.height());
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
        for (std::size_t j = 0; j < n; ++j) y.set(j, static_cast<Label>((bits >> j) & 1u));
        best = std::min(best, explicit_pairwise_energy(y, in.enc, in.unary, in.prev, in.params));
    }
    return best;
}

}  // namespace dfrf::fixtures
