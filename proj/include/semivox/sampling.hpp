#pragma once

// Imbalance statistics and the progressive class-sampling curriculum that
// drives patch mixing: imbalance ratios, the focused class-balanced
// distribution, its epoch interpolation toward uniform, center-voxel
// sampling, and the label-consistent cut-and-paste itself.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <vector>

#include "semivox/rng.hpp"
#include "semivox/volume.hpp"

namespace semivox {

// I_c = min over positive counts / N_c; 1.0 marks the rarest class, 0 marks a
// class absent from the labeled data.
struct ImbalanceRatios {
    std::vector<double> ratios;
    int num_classes() const { return static_cast<int>(ratios.size()); }
};

struct SamplingDistribution {
    std::vector<double> probs;
    int num_classes() const { return static_cast<int>(probs.size()); }
};

// Shift-speed eta may be infinity, which pins the schedule to the balanced
// distribution; eta = 0 pins it to uniform from epoch 0.
struct MixSchedule {
    double gamma = 1.0;
    double eta = 2.0 / 3.0;
    int max_epochs = 1;
};

struct PatchSpec {
    Dims3 dims;
};

// Inside the paste mask the image is the labeled source and the target is its
// ground truth; outside, the strongly-augmented unlabeled view and the
// pseudo-label. The equality is exact, there is no blending at the seam.
struct MixResult {
    Volume image;
    LabelMap target;
    std::vector<std::uint8_t> mask;
    Coord3 box_origin;
    Dims3 box_dims;
};

inline ImbalanceRatios imbalance_ratios(const ClassStats& stats) {
    std::uint64_t min_positive = std::numeric_limits<std::uint64_t>::max();
    for (std::uint64_t n : stats.counts)
        if (n > 0) min_positive = std::min(min_positive, n);
    if (min_positive == std::numeric_limits<std::uint64_t>::max())
        throw std::invalid_argument("imbalance_ratios: all class counts are zero");
    ImbalanceRatios out;
    out.ratios.reserve(stats.counts.size());
    for (std::uint64_t n : stats.counts)
        out.ratios.push_back(n == 0 ? 0.0 : static_cast<double>(min_positive) / static_cast<double>(n));
    return out;
}

// P_bal(c) = I_c^gamma / sum_j I_j^gamma. Zero ratios stay zero for any
// gamma; gamma = 0 collapses to uniform over the classes present.
inline SamplingDistribution balanced_distribution(const ImbalanceRatios& ratios, double gamma) {
    if (!(gamma >= 0)) throw std::invalid_argument("balanced_distribution: gamma must be >= 0");
    SamplingDistribution out;
    out.probs.assign(ratios.ratios.size(), 0.0);
    double sum = 0;
    for (std::size_t c = 0; c < ratios.ratios.size(); ++c) {
        const double r = ratios.ratios[c];
        if (r > 0) {
            out.probs[c] = gamma == 0 ? 1.0 : std::pow(r, gamma);
            sum += out.probs[c];
        }
    }
    if (!(sum > 0))
        throw std::invalid_argument("balanced_distribution: no class has a positive ratio");
    for (double& p : out.probs) p /= sum;
    return out;
}

inline SamplingDistribution uniform_over_support(const SamplingDistribution& base) {
    SamplingDistribution out;
    out.probs.assign(base.probs.size(), 0.0);
    int present = 0;
    for (double p : base.probs)
        if (p > 0) ++present;
    for (std::size_t c = 0; c < base.probs.size(); ++c)
        if (base.probs[c] > 0) out.probs[c] = 1.0 / present;
    return out;
}

inline double progress_alpha(int epoch, const MixSchedule& schedule) {
    if (std::isinf(schedule.eta)) return 0.0;
    const double denom = schedule.eta * schedule.max_epochs;
    if (denom <= 0.0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch) / denom);
}

// P_E = (1 - alpha) * P_bal + alpha * P_uni, where P_uni is uniform over the
// classes present in the labeled data (the support of P_bal).
inline SamplingDistribution progressive_distribution(const SamplingDistribution& balanced,
                                                     int epoch, const MixSchedule& schedule) {
    if (epoch < 0) throw std::invalid_argument("progressive_distribution: epoch must be >= 0");
    const double alpha = progress_alpha(epoch, schedule);
    const SamplingDistribution uni = uniform_over_support(balanced);
    SamplingDistribution out;
    out.probs.resize(balanced.probs.size());
    for (std::size_t c = 0; c < out.probs.size(); ++c)
        out.probs[c] = (1.0 - alpha) * balanced.probs[c] + alpha * uni.probs[c];
    return out;
}

inline int draw_class(RngEngine& eng, const SamplingDistribution& dist) {
    const double u = rng_u01(eng);
    double acc = 0;
    int last_positive = -1;
    for (int c = 0; c < dist.num_classes(); ++c) {
        if (dist.probs[c] <= 0) continue;
        last_positive = c;
        acc += dist.probs[c];
        if (u < acc) return c;
    }
    if (last_positive < 0)
        throw std::invalid_argument("draw_class: distribution has no positive mass");
    return last_positive;  // u landed in the rounding tail
}

struct CenterSample {
    int class_id = 0;
    Coord3 voxel;
};

// Draw a class from dist, fall back once to dist renormalized over the
// classes actually present in this label map, then pick a voxel of that class
// uniformly.
inline CenterSample sample_center(const SamplingDistribution& dist, const LabelMap& labels,
                                  RngEngine& eng) {
    if (dist.num_classes() < labels.num_classes)
        throw std::invalid_argument("sample_center: distribution shorter than label classes");
    std::vector<std::uint64_t> present(dist.num_classes(), 0);
    for (std::uint8_t v : labels.data) ++present[v];

    int class_id = draw_class(eng, dist);
    if (present[class_id] == 0) {
        SamplingDistribution feasible;
        feasible.probs.assign(dist.probs.size(), 0.0);
        double sum = 0;
        for (int c = 0; c < dist.num_classes(); ++c)
            if (present[c] > 0 && dist.probs[c] > 0) {
                feasible.probs[c] = dist.probs[c];
                sum += dist.probs[c];
            }
        if (sum <= 0)
            throw std::invalid_argument("sample_center: no sampleable class in this label map");
        for (double& p : feasible.probs) p /= sum;
        class_id = draw_class(eng, feasible);
    }

    const std::uint64_t pick = rng_index(eng, present[class_id]);
    std::uint64_t seen = 0;
    for (std::int32_t d = 0; d < labels.dims.d; ++d)
        for (std::int32_t h = 0; h < labels.dims.h; ++h)
            for (std::int32_t w = 0; w < labels.dims.w; ++w)
                if (labels.at(d, h, w) == class_id && seen++ == pick)
                    return CenterSample{class_id, {d, h, w}};
    throw std::logic_error("sample_center: voxel scan out of sync");
}

// Axis-aligned box of patch dims centered at `center`, shifted (never shrunk)
// to fit inside the volume.
inline std::pair<Coord3, Dims3> patch_box(const Dims3& dims, const Coord3& center,
                                          const PatchSpec& patch) {
    Coord3 origin;
    for (int ax = 0; ax < 3; ++ax) {
        if (patch.dims[ax] < 1 || patch.dims[ax] > dims[ax])
            throw std::invalid_argument("patch_box: patch dims invalid on axis " +
                                        std::to_string(ax));
        const std::int32_t want = center[ax] - patch.dims[ax] / 2;
        const std::int32_t lo = std::clamp(want, 0, dims[ax] - patch.dims[ax]);
        (ax == 0 ? origin.d : ax == 1 ? origin.h : origin.w) = lo;
    }
    return {origin, patch.dims};
}

inline MixResult cutmix_paste(const Volume& labeled_image, const LabelMap& labeled_gt,
                              const Volume& unlabeled_strong, const LabelMap& pseudo,
                              const Coord3& center, const PatchSpec& patch) {
    const Dims3 dims = labeled_image.dims;
    if (labeled_gt.dims != dims || unlabeled_strong.dims != dims || pseudo.dims != dims)
        throw std::invalid_argument("cutmix_paste: all inputs must share dims");
    for (int ax = 0; ax < 3; ++ax)
        if (center[ax] < 0 || center[ax] >= dims[ax])
            throw std::invalid_argument("cutmix_paste: center outside volume on axis " +
                                        std::to_string(ax));
    const auto [origin, box] = patch_box(dims, center, patch);

    MixResult out;
    out.box_origin = origin;
    out.box_dims = box;
    out.image = unlabeled_strong;
    out.target = pseudo;
    out.target.num_classes = std::max(pseudo.num_classes, labeled_gt.num_classes);
    out.mask.assign(static_cast<std::size_t>(dims.voxels()), 0);
    for (std::int32_t d = origin.d; d < origin.d + box.d; ++d)
        for (std::int32_t h = origin.h; h < origin.h + box.h; ++h) {
            const std::int64_t row = flat_index(dims, d, h, origin.w);
            for (std::int32_t i = 0; i < box.w; ++i) {
                out.image.data[row + i] = labeled_image.data[row + i];
                out.target.data[row + i] = labeled_gt.data[row + i];
                out.mask[row + i] = 1;
            }
        }
    return out;
}

// One row per epoch: epoch, alpha, then the full class distribution.
inline void write_schedule_csv(std::ostream& os, const SamplingDistribution& balanced,
                               const MixSchedule& schedule) {
    os << "epoch,alpha";
    for (int c = 0; c < balanced.num_classes(); ++c) os << ",p" << c;
    os << "\n";
    char buf[64];
    for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
        const SamplingDistribution p = progressive_distribution(balanced, epoch, schedule);
        std::snprintf(buf, sizeof buf, "%d,%.9g", epoch, progress_alpha(epoch, schedule));
        os << buf;
        for (double v : p.probs) {
            std::snprintf(buf, sizeof buf, ",%.9g", v);
            os << buf;
        }
        os << "\n";
    }
}

}  // namespace semivox
