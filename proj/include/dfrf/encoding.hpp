/**
 * @file encoding.hpp
 * @brief Auto-encoding layers: a mixture over pixel colour and position whose
 * sparsified responsibilities connect every pixel to a handful of nodes.
 *
 * Pixels sharing a node interact through it, so the label layer is fully
 * connected implicitly while each pixel stores only top_k links.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "core.hpp"
#include "mixture.hpp"
#include "parallel.hpp"

namespace dfrf {

inline constexpr std::size_t kFeatureDims = 5;
inline constexpr std::size_t kMaxFitSamples = 20000;
/// Variance floor for encoding mixtures. Much wider than the generic floor:
/// noise clipped at 0 or 255 otherwise spawns near-singular colour components
/// that group pixels by clipping pattern instead of by region.
inline constexpr double kEncodingVarianceFloor = 1e-2;

inline FitOptions encoding_fit_options() {
    FitOptions options;
    options.variance_floor = kEncodingVarianceFloor;
    return options;
}

/// Rows (r, g, b, s*x/W, s*y/H) in row-major pixel order.
inline Matrix pixel_features(const ImageObservation& image, double spatial_scale) {
    if (!(spatial_scale >= 0.0)) throw Error(ErrorCode::InvalidArgument, "spatial_scale must be >= 0");
    Matrix out(image.pixel_count(), kFeatureDims);
    const auto w = static_cast<double>(image.width());
    const auto h = static_cast<double>(image.height());
    std::size_t i = 0;
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x, ++i) {
            const auto px = image.pixel(i);
            out(i, 0) = px[0];
            out(i, 1) = px[1];
            out(i, 2) = px[2];
            out(i, 3) = spatial_scale * x / w;
            out(i, 4) = spatial_scale * y / h;
        }
    }
    return out;
}

struct SparseRow {
    std::vector<std::uint32_t> nodes;  ///< ascending node index
    std::vector<double> weights;       ///< sums to 1

    bool operator==(const SparseRow&) const = default;
};

/// Keeps the top_k largest entries of a probability row (ties to the lower
/// index) and renormalizes them.
inline SparseRow sparsify(std::span<const double> row, std::size_t top_k) {
    if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");
    std::vector<std::uint32_t> order(row.size());
    std::iota(order.begin(), order.end(), 0u);
    const std::size_t keep = std::min(top_k, row.size());
    auto larger = [&](std::uint32_t a, std::uint32_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), larger);
    order.resize(keep);
    std::sort(order.begin(), order.end());

    SparseRow out;
    out.nodes = order;
    double total = 0.0;
    for (auto m : order) total += row[m];
    out.weights.reserve(keep);
    for (auto m : order) out.weights.push_back(row[m] / total);
    return out;
}

/// Row-sparse pixel-to-node responsibilities with a fixed number of slots per
/// pixel. Slot weights of a pixel sum to one.
class EncodingLayer {
public:
    EncodingLayer() = default;

    EncodingLayer(std::size_t n_ev, std::size_t pixels, std::size_t slots, MixtureModel model = {})
        : n_ev_(n_ev), pixels_(pixels), slots_(slots), model_(std::move(model)), nodes_(pixels * slots, 0),
          weights_(pixels * slots, 0.0), node_mass_(n_ev, 0.0) {}

    std::size_t node_count() const noexcept { return n_ev_; }
    std::size_t pixel_count() const noexcept { return pixels_; }
    std::size_t slots() const noexcept { return slots_; }
    const MixtureModel& model() const noexcept { return model_; }

    std::span<const std::uint32_t> nodes(std::size_t pixel) const {
        return {nodes_.data() + pixel * slots_, slots_};
    }
    std::span<const double> weights(std::size_t pixel) const {
        return {weights_.data() + pixel * slots_, slots_};
    }
    /// R_m = sum over pixels of resp[j, m].
    std::span<const double> node_mass() const noexcept { return node_mass_; }

    void set_row(std::size_t pixel, std::span<const std::uint32_t> nodes, std::span<const double> weights) {
        if (nodes.size() != slots_ || weights.size() != slots_)
            throw Error(ErrorCode::DimensionMismatch, "row does not fill the layer's slots");
        for (std::size_t s = 0; s < slots_; ++s) {
            if (nodes[s] >= n_ev_) throw Error(ErrorCode::OutOfBounds, "node index out of range");
            nodes_[pixel * slots_ + s] = nodes[s];
            weights_[pixel * slots_ + s] = weights[s];
        }
    }

    /// Recomputes node_mass from the rows.
    void finalize() {
        std::fill(node_mass_.begin(), node_mass_.end(), 0.0);
        for (std::size_t e = 0; e < nodes_.size(); ++e) node_mass_[nodes_[e]] += weights_[e];
    }

    /// Builds a layer from an explicit dense responsibility table (n_pixels x n_ev).
    static EncodingLayer from_dense(const Matrix& resp, std::size_t top_k) {
        const std::size_t slots = std::min(top_k, resp.cols());
        EncodingLayer layer(resp.cols(), resp.rows(), slots);
        for (std::size_t j = 0; j < resp.rows(); ++j) {
            const auto row = sparsify(resp.row(j), slots);
            layer.set_row(j, row.nodes, row.weights);
        }
        layer.finalize();
        return layer;
    }

    bool operator==(const EncodingLayer&) const = default;

private:
    std::size_t n_ev_ = 0;
    std::size_t pixels_ = 0;
    std::size_t slots_ = 0;
    MixtureModel model_;
    std::vector<std::uint32_t> nodes_;
    std::vector<double> weights_;
    std::vector<double> node_mass_;
};

/// Fits an n_ev-node mixture to pixel features (on a seeded uniform subsample
/// of at most 20000 pixels), then scores every pixel and keeps its top_k nodes.
inline EncodingLayer build_encoding_layer(const ImageObservation& image, std::size_t n_ev, std::size_t top_k,
                                          double spatial_scale, std::uint64_t rng_seed) {
    const std::size_t n = image.pixel_count();
    if (n_ev < 1 || n_ev >= n)
        throw Error(ErrorCode::InvalidArgument, "encoding layer needs 1 <= n_ev < n_pixels (n_ev=" +
                                                    std::to_string(n_ev) + ", n_pixels=" + std::to_string(n) + ")");
    if (top_k < 1) throw Error(ErrorCode::InvalidArgument, "top_k must be >= 1");

    const Matrix features = pixel_features(image, spatial_scale);
    std::mt19937_64 rng(rng_seed);
    MixtureModel model;
    if (n > kMaxFitSamples) {
        std::vector<std::size_t> all(n), picked;
        std::iota(all.begin(), all.end(), std::size_t{0});
        picked.reserve(kMaxFitSamples);
        std::sample(all.begin(), all.end(), std::back_inserter(picked), kMaxFitSamples, rng);
        Matrix subset(picked.size(), kFeatureDims);
        for (std::size_t r = 0; r < picked.size(); ++r)
            std::copy_n(features.row(picked[r]).begin(), kFeatureDims, subset.row(r).begin());
        model = fit_fmm(subset, n_ev, rng(), encoding_fit_options());
    } else {
        model = fit_fmm(features, n_ev, rng(), encoding_fit_options());
    }

    const std::size_t slots = std::min(top_k, n_ev);
    const detail::ComponentScorer scorer(model);
    EncodingLayer layer(n_ev, n, slots, model);
    detail::parallel_chunks(n, 2048, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> scores(n_ev);
        std::vector<std::uint32_t> order(n_ev);
        std::vector<double> weights(slots);
        for (std::size_t j = begin; j < end; ++j) {
            scorer.score(features.row(j), scores);
            // ranking log-scores ranks responsibilities; renormalizing over the
            // kept nodes equals sparsify() applied to the full posterior row
            std::iota(order.begin(), order.end(), 0u);
            auto larger = [&](std::uint32_t a, std::uint32_t b) {
                return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
            };
            std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(slots), order.end(), larger);
            std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(slots));
            double best = scores[order[0]];
            for (std::size_t s = 1; s < slots; ++s) best = std::max(best, scores[order[s]]);
            double total = 0.0;
            for (std::size_t s = 0; s < slots; ++s) {
                weights[s] = std::exp(scores[order[s]] - best);
                total += weights[s];
            }
            for (double& w : weights) w /= total;
            layer.set_row(j, std::span<const std::uint32_t>(order.data(), slots), weights);
        }
    });
    layer.finalize();
    return layer;
}

}  // namespace dfrf
