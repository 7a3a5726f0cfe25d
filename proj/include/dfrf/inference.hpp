/**
 * @file inference.hpp
 * @brief Layer energy, its factorized O(N * top_k) evaluation, ICM-based MAP
 * inference and the full layer stack.
 *
 * Layer energy for labels y given previous layer labels p:
 *
 *   E(y) = sum_j [ alpha * U_j(y_j) + (1 - alpha) * [y_j != p_j] ]
 *        + beta * sum_j sum_{k != j} w_jk [y_j != y_k]
 *
 *   w_jk = sum_m r_jm r_km / max(R_m - r_jm, eps)
 *
 * where r are the encoding responsibilities and R_m the node masses. With
 * S_m(c) = sum_k r_km [y_k = c] the pairwise part collapses to
 * sum_j sum_m r_jm S_m(1 - y_j) / max(R_m - r_jm, eps), which needs only the
 * top_k links of each pixel.
 */
#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "encoding.hpp"
#include "unary.hpp"

namespace dfrf {

inline constexpr double kMassEpsilon = 1e-12;
/// Flips must lower the energy by more than this; keeps rounding noise from
/// toggling pixels back and forth.
inline constexpr double kFlipTolerance = 1e-12;
inline constexpr std::size_t kExplicitEnergyLimit = 200;

struct LayerEnergyParams {
    double alpha = DfrfConfig{}.alpha;
    double beta = DfrfConfig{}.beta;

    void validate() const {
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in [0,1]");
        if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "beta must be >= 0");
    }
};

/// Per-node label statistics.
///   mass[m][c]   = S_m(c) = sum_k r_km [y_k = c]
///   scaled[m][c] = T_m(c) = sum_k r_km / max(R_m - r_km, eps) [y_k = c]
/// T is what a flip needs to update the other pixels' view of the flipped one.
struct NodeLabelStats {
    std::vector<std::array<double, 2>> mass;
    std::vector<std::array<double, 2>> scaled;

    static NodeLabelStats compute(const LabelField& labels, const EncodingLayer& enc) {
        NodeLabelStats s;
        s.mass.assign(enc.node_count(), {0.0, 0.0});
        s.scaled.assign(enc.node_count(), {0.0, 0.0});
        const auto node_mass = enc.node_mass();
        for (std::size_t j = 0; j < enc.pixel_count(); ++j) {
            const Label y = labels[j];
            const auto nodes = enc.nodes(j);
            const auto weights = enc.weights(j);
            for (std::size_t s_i = 0; s_i < nodes.size(); ++s_i) {
                const auto m = nodes[s_i];
                const double r = weights[s_i];
                s.mass[m][y] += r;
                s.scaled[m][y] += r / std::max(node_mass[m] - r, kMassEpsilon);
            }
        }
        return s;
    }
};

struct LayerRecord {
    int layer = 0;
    std::size_t n_ev = 0;
    double energy_before = 0.0;
    double energy_after = 0.0;
    std::size_t flips = 0;
    int sweeps = 0;
    double seconds = 0.0;
};

using LayerTrace = std::vector<LayerRecord>;

namespace detail {

inline void check_dimensions(const LabelField& labels, const EncodingLayer& enc, const UnaryField& unary,
                             const LabelField& prev) {
    const std::size_t n = labels.pixel_count();
    if (enc.pixel_count() != n || unary.pixel_count() != n || prev.pixel_count() != n)
        throw Error(ErrorCode::DimensionMismatch, "labels, encoding layer, unary field and previous layer disagree");
}

inline double blended_unary(std::size_t j, Label y, const UnaryField& unary, const LabelField& prev,
                            const LayerEnergyParams& params) {
    return params.alpha * unary.cost(j, y) + (1.0 - params.alpha) * (y != prev[j] ? 1.0 : 0.0);
}

/// Energy change from flipping pixel j, in O(top_k).
inline double flip_delta(std::size_t j, const LabelField& labels, const EncodingLayer& enc, const UnaryField& unary,
                         const LabelField& prev, const LayerEnergyParams& params, const NodeLabelStats& stats) {
    const Label from = labels[j];
    const Label to = from ^ 1u;
    double delta = blended_unary(j, to, unary, prev, params) - blended_unary(j, from, unary, prev, params);
    if (params.beta == 0.0) return delta;

    const auto node_mass = enc.node_mass();
    const auto nodes = enc.nodes(j);
    const auto weights = enc.weights(j);
    double pairwise = 0.0;
    for (std::size_t s = 0; s < nodes.size(); ++s) {
        const auto m = nodes[s];
        const double r = weights[s];
        const double inv_den = 1.0 / std::max(node_mass[m] - r, kMassEpsilon);
        // j's own row: disagreeing mass goes from S(to) to S(from) minus itself
        const double own = (stats.mass[m][from] - r - stats.mass[m][to]) * inv_den;
        // other rows pointing at j: pixels labelled `to` stop disagreeing, `from` start
        const double others = stats.scaled[m][from] - r * inv_den - stats.scaled[m][to];
        pairwise += r * (own + others);
    }
    return delta + params.beta * pairwise;
}

inline void apply_flip(std::size_t j, LabelField& labels, const EncodingLayer& enc, NodeLabelStats& stats) {
    const Label from = labels[j];
    const Label to = from ^ 1u;
    const auto node_mass = enc.node_mass();
    const auto nodes = enc.nodes(j);
    const auto weights = enc.weights(j);
    for (std::size_t s = 0; s < nodes.size(); ++s) {
        const auto m = nodes[s];
        const double r = weights[s];
        const double scaled = r / std::max(node_mass[m] - r, kMassEpsilon);
        stats.mass[m][from] -= r;
        stats.mass[m][to] += r;
        stats.scaled[m][from] -= scaled;
        stats.scaled[m][to] += scaled;
    }
    labels.flip(j);
}

inline double unary_energy(const LabelField& labels, const UnaryField& unary, const LabelField& prev,
                           const LayerEnergyParams& params) {
    double total = 0.0;
    for (std::size_t j = 0; j < labels.pixel_count(); ++j) total += blended_unary(j, labels[j], unary, prev, params);
    return total;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

/// Factorized layer energy, O(N * top_k).
inline double layer_energy(const LabelField& labels, const EncodingLayer& enc, const UnaryField& unary,
                           const LabelField& prev, const LayerEnergyParams& params) {
    detail::check_dimensions(labels, enc, unary, prev);
    double energy = detail::unary_energy(labels, unary, prev, params);
    if (params.beta == 0.0) return energy;

    const auto stats = NodeLabelStats::compute(labels, enc);
    const auto node_mass = enc.node_mass();
    double pairwise = 0.0;
    for (std::size_t j = 0; j < labels.pixel_count(); ++j) {
        const Label other = labels[j] ^ 1u;
        const auto nodes = enc.nodes(j);
        const auto weights = enc.weights(j);
        for (std::size_t s = 0; s < nodes.size(); ++s) {
            const auto m = nodes[s];
            const double r = weights[s];
            pairwise += r * stats.mass[m][other] / std::max(node_mass[m] - r, kMassEpsilon);
        }
    }
    return energy + params.beta * pairwise;
}

/// Same energy via the explicit N x N weights w_jk over ordered pairs j != k.
/// Quadratic; meant as a reference for small instances.
inline double explicit_pairwise_energy(const LabelField& labels, const EncodingLayer& enc, const UnaryField& unary,
                                       const LabelField& prev, const LayerEnergyParams& params) {
    detail::check_dimensions(labels, enc, unary, prev);
    const std::size_t n = labels.pixel_count();
    if (n > kExplicitEnergyLimit)
        throw Error(ErrorCode::InstanceTooLarge,
                    std::to_string(n) + " pixels exceeds the explicit-energy limit of " +
                        std::to_string(kExplicitEnergyLimit));

    Matrix resp(n, enc.node_count());
    for (std::size_t j = 0; j < n; ++j) {
        const auto nodes = enc.nodes(j);
        const auto weights = enc.weights(j);
        for (std::size_t s = 0; s < nodes.size(); ++s) resp(j, nodes[s]) += weights[s];
    }
    std::vector<double> node_mass(enc.node_count(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t m = 0; m < enc.node_count(); ++m) node_mass[m] += resp(j, m);

    double pairwise = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j || labels[j] == labels[k]) continue;
            double w = 0.0;
            for (std::size_t m = 0; m < enc.node_count(); ++m)
                w += resp(j, m) * resp(k, m) / std::max(node_mass[m] - resp(j, m), kMassEpsilon);
            pairwise += w;
        }
    }
    return detail::unary_energy(labels, unary, prev, params) + params.beta * pairwise;
}

struct SweepResult {
    std::size_t flips = 0;
    /// Sum of the accepted flip deltas (always <= 0).
    double energy_change = 0.0;
};

/// One row-major ICM pass. A pixel flips only when that lowers the energy;
/// stats are kept consistent with labels.
inline SweepResult icm_sweep(LabelField& labels, const EncodingLayer& enc, const UnaryField& unary,
                             const LabelField& prev, const LayerEnergyParams& params, NodeLabelStats& stats) {
    detail::check_dimensions(labels, enc, unary, prev);
    SweepResult result;
    for (std::size_t j = 0; j < labels.pixel_count(); ++j) {
        const double delta = detail::flip_delta(j, labels, enc, unary, prev, params, stats);
        if (delta < -kFlipTolerance) {
            detail::apply_flip(j, labels, enc, stats);
            ++result.flips;
            result.energy_change += delta;
        }
    }
    return result;
}

struct InferenceResult {
    LabelField labels;
    double energy = 0.0;
    double initial_energy = 0.0;
    std::size_t flips = 0;
    int sweeps = 0;
};

/// MAP labeling of one layer by ICM, started from the previous layer's labels.
inline InferenceResult map_inference(const UnaryField& unary, const EncodingLayer& enc, const LabelField& prev,
                                     const LayerEnergyParams& params, int max_sweeps) {
    if (max_sweeps < 1) throw Error(ErrorCode::InvalidArgument, "max_sweeps must be >= 1");
    params.validate();
    InferenceResult result;
    result.labels = prev;
    result.initial_energy = layer_energy(result.labels, enc, unary, prev, params);
    auto stats = NodeLabelStats::compute(result.labels, enc);
    while (result.sweeps < max_sweeps) {
        const auto sweep = icm_sweep(result.labels, enc, unary, prev, params, stats);
        ++result.sweeps;
        result.flips += sweep.flips;
        if (sweep.flips == 0) break;
    }
    result.energy = result.flips == 0 ? result.initial_energy : layer_energy(result.labels, enc, unary, prev, params);
    return result;
}

struct DfrfResult {
    LabelField labels;
    LabelField initial_labels;  ///< Y_0, the seed-model argmax
    LayerTrace trace;
};

/// Seed unary, then n_layers rounds of (build encoding layer, MAP inference)
/// with the node count growing by nev_step per layer.
inline DfrfResult run_dfrf(const ImageObservation& image, const SeedMask& seeds, const DfrfConfig& config) {
    config.validate();
    validate_inputs(image, seeds);
    using clock = std::chrono::steady_clock;

    auto [unary, y0] = seed_unary(image, seeds, config.seed_components, config.rng_seed);
    DfrfResult result;
    result.initial_labels = y0;
    LabelField current = std::move(y0);
    const LayerEnergyParams params{config.alpha, config.beta};

    for (int layer = 1; layer <= config.n_layers; ++layer) {
        const auto start = clock::now();
        const auto n_ev = static_cast<std::size_t>(config.nodes_at_layer(layer));
        const auto enc = build_encoding_layer(image, n_ev, static_cast<std::size_t>(config.top_k),
                                              config.spatial_scale, detail::mix_seed(config.rng_seed, layer));
        auto inferred = map_inference(unary, enc, current, params, config.icm_sweeps);

        LayerRecord record;
        record.layer = layer;
        record.n_ev = n_ev;
        record.energy_before = inferred.initial_energy;
        record.energy_after = inferred.energy;
        record.flips = inferred.flips;
        record.sweeps = inferred.sweeps;
        record.seconds = std::chrono::duration<double>(clock::now() - start).count();
        result.trace.push_back(record);
        current = std::move(inferred.labels);
    }
    result.labels = std::move(current);
    return result;
}

}  // namespace dfrf
