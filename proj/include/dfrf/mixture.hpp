/**
 * @file mixture.hpp
 * @brief Diagonal-covariance Gaussian mixture models: EM fitting with
 * k-means++ seeding, posterior responsibilities and log-likelihood.
 *
 * The same machinery trains the per-class seed colour models and the
 * encoding-layer mixtures over pixel features.
 */
#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "core.hpp"
#include "parallel.hpp"

namespace dfrf {

inline constexpr double kVarianceFloor = 1e-6;

struct MixtureModel {
    std::vector<double> weights;  ///< k entries, sum to 1
    Matrix means;                 ///< k x d
    Matrix variances;             ///< k x d, each >= kVarianceFloor

    std::size_t components() const noexcept { return weights.size(); }
    std::size_t dimension() const noexcept { return means.cols(); }

    void validate() const {
        const std::size_t k = components();
        if (k == 0) throw Error(ErrorCode::InvalidArgument, "mixture needs at least one component");
        if (means.rows() != k || variances.rows() != k || variances.cols() != means.cols())
            throw Error(ErrorCode::DimensionMismatch, "mixture parameter tables disagree in shape");
        double total = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "negative mixture weight");
            total += w;
        }
        if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "weights do not sum to 1");
        for (double v : variances.values())
            if (!(v >= kVarianceFloor)) throw Error(ErrorCode::InvalidArgument, "variance below floor");
    }

    bool operator==(const MixtureModel&) const = default;
};

struct FitOptions {
    int max_iterations = 50;
    double relative_tolerance = 1e-5;
    double variance_floor = kVarianceFloor;
};

struct FitReport {
    MixtureModel model;
    /// Training log-likelihood evaluated at the start of each EM iteration.
    std::vector<double> log_likelihood;
    int reseeded_components = 0;
    bool converged = false;
};

namespace detail {

// Per-component constants for fast log-density evaluation:
// log N(x) + log w = offset_k + sum_d coef_kd * (x_d - mu_kd)^2
// Stored dimension-major so the inner loop runs across components.
class ComponentScorer {
public:
    explicit ComponentScorer(const MixtureModel& model)
        : k_(model.components()), d_(model.dimension()), means_(k_ * d_), coef_(k_ * d_), offset_(k_) {
        const double log_two_pi = std::log(2.0 * std::numbers::pi);
        for (std::size_t c = 0; c < k_; ++c) {
            double acc = std::log(model.weights[c]);
            for (std::size_t j = 0; j < d_; ++j) {
                const double var = model.variances(c, j);
                means_[j * k_ + c] = model.means(c, j);
                coef_[j * k_ + c] = -0.5 / var;
                acc -= 0.5 * (log_two_pi + std::log(var));
            }
            offset_[c] = acc;
        }
    }

    ComponentScorer() = default;

    std::size_t components() const noexcept { return k_; }

    /// Indices of the components whose weighted log-density can come within
    /// `margin` (negative) of the best component somewhere in the box
    /// [lo, hi]. Every other component scores below best + margin at every
    /// point of the box.
    void candidates(std::span<const double> lo, std::span<const double> hi, double margin,
                    std::vector<std::uint32_t>& out, std::vector<double>& scratch) const {
        scratch.resize(2 * k_);
        double* upper = scratch.data();
        double* lower = scratch.data() + k_;
        std::copy(offset_.begin(), offset_.end(), upper);
        std::copy(offset_.begin(), offset_.end(), lower);
        for (std::size_t j = 0; j < d_; ++j)
            bound(upper, lower, means_.data() + j * k_, coef_.data() + j * k_, lo[j], hi[j], k_);
        const double floor = *std::max_element(lower, lower + k_) + margin;
        out.clear();
        for (std::size_t c = 0; c < k_; ++c)
            if (upper[c] >= floor) out.push_back(static_cast<std::uint32_t>(c));
    }

    /// Makes this scorer evaluate only the listed components of `full`, in order.
    void assign_subset(const ComponentScorer& full, std::span<const std::uint32_t> ids) {
        k_ = ids.size();
        d_ = full.d_;
        means_.resize(k_ * d_);
        coef_.resize(k_ * d_);
        offset_.resize(k_);
        for (std::size_t c = 0; c < k_; ++c) {
            offset_[c] = full.offset_[ids[c]];
            for (std::size_t j = 0; j < d_; ++j) {
                means_[j * k_ + c] = full.means_[j * full.k_ + ids[c]];
                coef_[j * k_ + c] = full.coef_[j * full.k_ + ids[c]];
            }
        }
    }

    /// Writes weighted log-densities for x into out (size k); returns their maximum.
    double score(std::span<const double> x, std::span<double> out) const {
        double* acc = out.data();
        std::copy(offset_.begin(), offset_.end(), acc);
        for (std::size_t j = 0; j < d_; ++j)
            accumulate(acc, means_.data() + j * k_, coef_.data() + j * k_, x[j], k_);
        // four independent running maxima; a single chain stalls on compare latency
        double lane[4] = {acc[0], acc[0], acc[0], acc[0]};
        std::size_t c = 0;
        for (; c + 4 <= k_; c += 4)
            for (std::size_t l = 0; l < 4; ++l) lane[l] = acc[c + l] > lane[l] ? acc[c + l] : lane[l];
        for (; c < k_; ++c) lane[0] = acc[c] > lane[0] ? acc[c] : lane[0];
        return std::max(std::max(lane[0], lane[1]), std::max(lane[2], lane[3]));
    }

private:
#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
    [[gnu::target_clones("avx2", "default")]]
#endif
    static void accumulate(double* __restrict acc, const double* __restrict mu, const double* __restrict coef,
                           double xj, std::size_t k) {
        for (std::size_t c = 0; c < k; ++c) {
            const double diff = xj - mu[c];
            acc[c] += coef[c] * diff * diff;
        }
    }

#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
    [[gnu::target_clones("avx2", "default")]]
#endif
    static void bound(double* __restrict upper, double* __restrict lower, const double* __restrict mu,
                      const double* __restrict coef, double lo, double hi, std::size_t k) {
        for (std::size_t c = 0; c < k; ++c) {
            const double near = std::max(std::max(lo - mu[c], mu[c] - hi), 0.0);
            const double far = std::max(mu[c] - lo, hi - mu[c]);
            upper[c] += coef[c] * near * near;
            lower[c] += coef[c] * far * far;
        }
    }

    std::size_t k_ = 0;
    std::size_t d_ = 0;
    std::vector<double> means_;
    std::vector<double> coef_;
    std::vector<double> offset_;
};

inline void check_finite(const Matrix& samples) {
    for (double v : samples.values())
        if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "samples contain NaN or infinity");
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        acc += diff * diff;
    }
    return acc;
}

/// k-means++ (D^2) seeding. Returns the chosen sample indices.
inline std::vector<std::size_t> kmeans_plus_plus(const Matrix& samples, std::size_t k, std::mt19937_64& rng) {
    const std::size_t n = samples.rows();
    std::vector<std::size_t> centers;
    centers.reserve(k);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    centers.push_back(pick(rng));
    std::vector<double> nearest(n);
    for (std::size_t i = 0; i < n; ++i) nearest[i] = squared_distance(samples.row(i), samples.row(centers[0]));

    while (centers.size() < k) {
        double total = 0.0;
        for (double v : nearest) total += v;
        std::size_t chosen = 0;
        if (total <= 0.0) {
            // every sample coincides with a chosen center
            chosen = pick(rng);
        } else {
            const double target = unit(rng) * total;
            double running = 0.0;
            chosen = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                running += nearest[i];
                if (running > target && nearest[i] > 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        centers.push_back(chosen);
        const auto c = samples.row(chosen);
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], squared_distance(samples.row(i), c));
    }
    return centers;
}

inline std::vector<double> global_variance(const Matrix& samples, double floor) {
    const std::size_t n = samples.rows(), d = samples.cols();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) mean[j] += samples(i, j);
    for (double& m : mean) m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = samples(i, j) - mean[j];
            var[j] += diff * diff;
        }
    for (double& v : var) v = std::max(v / static_cast<double>(n), floor);
    return var;
}

inline MixtureModel initial_model(const Matrix& samples, std::size_t k, double floor, std::mt19937_64& rng) {
    const std::size_t n = samples.rows(), d = samples.cols();
    const auto centers = kmeans_plus_plus(samples, k, rng);
    const auto fallback = global_variance(samples, floor);

    MixtureModel model;
    model.means = Matrix(k, d);
    model.variances = Matrix(k, d);
    model.weights.assign(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t j = 0; j < d; ++j) model.means(c, j) = samples(centers[c], j);

    // hard assignment to the nearest center, lowest index on ties
    std::vector<double> count(k, 0.0);
    Matrix scatter(k, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = samples.row(i);
        std::size_t best = 0;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = squared_distance(x, model.means.row(c));
            if (dist < best_dist) {
                best_dist = dist;
                best = c;
            }
        }
        count[best] += 1.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = x[j] - model.means(best, j);
            scatter(best, j) += diff * diff;
        }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const double mass = std::max(count[c], 1.0);
        model.weights[c] = mass;
        total += mass;
        for (std::size_t j = 0; j < d; ++j)
            model.variances(c, j) = count[c] >= 2.0 ? std::max(scatter(c, j) / count[c], floor) : fallback[j];
    }
    for (double& w : model.weights) w /= total;
    return model;
}

/// Samples grouped into small axis-aligned boxes by recursive median splits
/// along the widest dimension.
struct SampleBoxes {
    std::vector<std::uint32_t> order;  ///< sample indices, box by box
    std::vector<std::size_t> box_end;  ///< end offset into order per box
    std::vector<double> lo, hi;        ///< per box, d values each

    std::size_t size() const noexcept { return box_end.size(); }
    std::size_t box_begin(std::size_t b) const noexcept { return b == 0 ? 0 : box_end[b - 1]; }
};

inline SampleBoxes partition_samples(const Matrix& samples, std::size_t leaf_size) {
    const std::size_t n = samples.rows(), d = samples.cols();
    SampleBoxes boxes;
    boxes.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) boxes.order[i] = static_cast<std::uint32_t>(i);
    std::vector<double> lo(d), hi(d);
    auto extent = [&](std::size_t begin, std::size_t end) {
        std::fill(lo.begin(), lo.end(), std::numeric_limits<double>::infinity());
        std::fill(hi.begin(), hi.end(), -std::numeric_limits<double>::infinity());
        for (std::size_t e = begin; e < end; ++e) {
            const auto x = samples.row(boxes.order[e]);
            for (std::size_t j = 0; j < d; ++j) {
                lo[j] = std::min(lo[j], x[j]);
                hi[j] = std::max(hi[j], x[j]);
            }
        }
    };
    auto split = [&](auto&& self, std::size_t begin, std::size_t end) -> void {
        extent(begin, end);
        if (end - begin <= leaf_size) {
            boxes.box_end.push_back(end);
            boxes.lo.insert(boxes.lo.end(), lo.begin(), lo.end());
            boxes.hi.insert(boxes.hi.end(), hi.begin(), hi.end());
            return;
        }
        std::size_t axis = 0;
        for (std::size_t j = 1; j < d; ++j)
            if (hi[j] - lo[j] > hi[axis] - lo[axis]) axis = j;
        const std::size_t mid = begin + (end - begin) / 2;
        auto first = boxes.order.begin();
        std::nth_element(first + static_cast<std::ptrdiff_t>(begin), first + static_cast<std::ptrdiff_t>(mid),
                         first + static_cast<std::ptrdiff_t>(end), [&](std::uint32_t a, std::uint32_t b) {
                             const double va = samples(a, axis), vb = samples(b, axis);
                             return va < vb || (va == vb && a < b);
                         });
        self(self, begin, mid);
        self(self, mid, end);
    };
    if (n > 0) split(split, 0, n);
    return boxes;
}

inline double log_sum_exp(std::span<const double> values, double max_value) {
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - max_value);
    return max_value + std::log(acc);
}

}  // namespace detail

/// Posterior component probabilities for each feature row (n x k).
inline Matrix responsibilities(const MixtureModel& model, const Matrix& features) {
    if (features.cols() != model.dimension())
        throw Error(ErrorCode::DimensionMismatch, "feature dimension " + std::to_string(features.cols()) +
                                                      " does not match model dimension " +
                                                      std::to_string(model.dimension()));
    const detail::ComponentScorer scorer(model);
    const std::size_t k = model.components();
    Matrix out(features.rows(), k);
    detail::parallel_chunks(features.rows(), 2048, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto row = out.row(i);
            const double best = scorer.score(features.row(i), row);
            double total = 0.0;
            for (double& v : row) {
                v = std::exp(v - best);
                total += v;
            }
            for (double& v : row) v /= total;
        }
    });
    return out;
}

/// Sum over samples of the log mixture density.
inline double log_likelihood(const MixtureModel& model, const Matrix& samples) {
    if (samples.cols() != model.dimension())
        throw Error(ErrorCode::DimensionMismatch, "sample dimension does not match model dimension");
    const detail::ComponentScorer scorer(model);
    std::vector<double> scratch(model.components());
    double total = 0.0;
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const double best = scorer.score(samples.row(i), scratch);
        total += detail::log_sum_exp(scratch, best);
    }
    return total;
}

/// EM fit of a k-component diagonal Gaussian mixture, keeping the per-iteration
/// training log-likelihood. Deterministic for a given rng_seed.
inline FitReport fit_fmm_report(const Matrix& samples, std::size_t k, std::uint64_t rng_seed,
                                const FitOptions& options = {}) {
    const std::size_t n = samples.rows(), d = samples.cols();
    if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (d < 1) throw Error(ErrorCode::InvalidArgument, "samples must have at least one dimension");
    if (n < k)
        throw Error(ErrorCode::InsufficientSamples,
                    std::to_string(n) + " samples cannot support " + std::to_string(k) + " components");
    detail::check_finite(samples);

    std::mt19937_64 rng(rng_seed);
    FitReport report;
    report.model = detail::initial_model(samples, k, options.variance_floor, rng);
    const auto fallback = detail::global_variance(samples, options.variance_floor);

    // Terms more than e^-40 below a sample's best component are dropped from
    // the E-step; their contribution is below double rounding of the total.
    // Whole components are skipped per box of nearby samples when a bound
    // shows they fall below that cutoff everywhere in the box.
    constexpr double kLogCutoff = -40.0;
    constexpr std::size_t kBoxSize = 32;
    constexpr std::size_t kBoxesPerChunk = 32;
    const auto boxes = detail::partition_samples(samples, kBoxSize);
    const std::size_t chunks = (boxes.size() + kBoxesPerChunk - 1) / kBoxesPerChunk;

    struct ChunkStats {
        std::vector<std::uint32_t> row;        // sample index per row
        std::vector<std::uint32_t> component;  // flattened sparse responsibilities
        std::vector<double> weight;
        std::vector<std::uint32_t> row_end;
        double log_likelihood = 0.0;
    };
    std::vector<ChunkStats> stats(chunks);
    std::vector<double> sample_ll(n);

    for (int iteration = 0; iteration < options.max_iterations; ++iteration) {
        const detail::ComponentScorer scorer(report.model);
        detail::parallel_chunks(boxes.size(), kBoxesPerChunk, [&](std::size_t c, std::size_t first_box,
                                                                   std::size_t last_box) {
            ChunkStats& s = stats[c];
            s.row.clear();
            s.component.clear();
            s.weight.clear();
            s.row_end.clear();
            s.log_likelihood = 0.0;
            std::vector<double> scratch(k), bound_scratch;
            std::vector<std::uint32_t> ids;
            detail::ComponentScorer local;
            for (std::size_t b = first_box; b < last_box; ++b) {
                scorer.candidates(std::span(boxes.lo).subspan(b * d, d), std::span(boxes.hi).subspan(b * d, d),
                                  kLogCutoff, ids, bound_scratch);
                local.assign_subset(scorer, ids);
                const std::span<double> scores(scratch.data(), ids.size());
                for (std::size_t e = boxes.box_begin(b); e < boxes.box_end[b]; ++e) {
                    const std::uint32_t i = boxes.order[e];
                    const double best = local.score(samples.row(i), scores);
                    const std::size_t first = s.weight.size();
                    double total = 0.0;
                    for (std::size_t m = 0; m < ids.size(); ++m) {
                        const double rel = scores[m] - best;
                        if (rel < kLogCutoff) continue;
                        const double w = std::exp(rel);
                        s.component.push_back(ids[m]);
                        s.weight.push_back(w);
                        total += w;
                    }
                    for (std::size_t f = first; f < s.weight.size(); ++f) s.weight[f] /= total;
                    s.row.push_back(i);
                    s.row_end.push_back(static_cast<std::uint32_t>(s.weight.size()));
                    sample_ll[i] = best + std::log(total);
                    s.log_likelihood += sample_ll[i];
                }
            }
        });
        double ll = 0.0;
        for (const auto& s : stats) ll += s.log_likelihood;

        if (!report.log_likelihood.empty()) {
            const double previous = report.log_likelihood.back();
            assert(ll >= previous - 1e-8 * std::abs(previous) && "EM decreased the log-likelihood");
            report.log_likelihood.push_back(ll);
            if (std::abs(ll - previous) < options.relative_tolerance * std::abs(previous)) {
                report.converged = true;
                break;
            }
        } else {
            report.log_likelihood.push_back(ll);
        }
        if (iteration + 1 == options.max_iterations) break;

        // M-step
        std::vector<double> mass(k, 0.0);
        Matrix mean_acc(k, d);
        for (std::size_t c = 0; c < chunks; ++c) {
            const ChunkStats& s = stats[c];
            std::size_t e = 0;
            for (std::size_t r = 0; r < s.row_end.size(); ++r) {
                const auto x = samples.row(s.row[r]);
                for (; e < s.row_end[r]; ++e) {
                    const std::size_t m = s.component[e];
                    const double w = s.weight[e];
                    mass[m] += w;
                    for (std::size_t j = 0; j < d; ++j) mean_acc(m, j) += w * x[j];
                }
            }
        }
        for (std::size_t m = 0; m < k; ++m)
            if (mass[m] > 0.0)
                for (std::size_t j = 0; j < d; ++j) mean_acc(m, j) /= mass[m];
        Matrix var_acc(k, d);
        for (std::size_t c = 0; c < chunks; ++c) {
            const ChunkStats& s = stats[c];
            std::size_t e = 0;
            for (std::size_t r = 0; r < s.row_end.size(); ++r) {
                const auto x = samples.row(s.row[r]);
                for (; e < s.row_end[r]; ++e) {
                    const std::size_t m = s.component[e];
                    const double w = s.weight[e];
                    for (std::size_t j = 0; j < d; ++j) {
                        const double diff = x[j] - mean_acc(m, j);
                        var_acc(m, j) += w * diff * diff;
                    }
                }
            }
        }

        // Components that lost (almost) all mass are re-seeded at the samples the
        // current model explains worst.
        constexpr double kEmptyMass = 1e-8;
        std::vector<std::size_t> worst;
        std::size_t next_worst = 0;
        MixtureModel next;
        next.means = Matrix(k, d);
        next.variances = Matrix(k, d);
        next.weights.assign(k, 0.0);
        double weight_total = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            if (mass[m] < kEmptyMass) {
                if (worst.empty()) {
                    worst.resize(n);
                    for (std::size_t i = 0; i < n; ++i) worst[i] = i;
                    std::stable_sort(worst.begin(), worst.end(),
                                     [&](std::size_t a, std::size_t b) { return sample_ll[a] < sample_ll[b]; });
                }
                const std::size_t at = worst[next_worst++ % n];
                for (std::size_t j = 0; j < d; ++j) {
                    next.means(m, j) = samples(at, j);
                    next.variances(m, j) = fallback[j];
                }
                next.weights[m] = kEmptyMass;
                ++report.reseeded_components;
            } else {
                for (std::size_t j = 0; j < d; ++j) {
                    next.means(m, j) = mean_acc(m, j);
                    next.variances(m, j) = std::max(var_acc(m, j) / mass[m], options.variance_floor);
                }
                next.weights[m] = mass[m];
            }
            weight_total += next.weights[m];
        }
        for (double& w : next.weights) w /= weight_total;
        report.model = std::move(next);
    }
    return report;
}

inline MixtureModel fit_fmm(const Matrix& samples, std::size_t k, std::uint64_t rng_seed,
                            const FitOptions& options = {}) {
    return fit_fmm_report(samples, k, rng_seed, options).model;
}

}  // namespace dfrf
