#pragma once

// Segmentation losses: combined Dice + cross-entropy with an optional voxel
// keep-mask, the imbalance-weighted keep-mask for the auxiliary head, and the
// composite objective.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "semivox/rng.hpp"
#include "semivox/sampling.hpp"
#include "semivox/tensor.hpp"
#include "semivox/volume.hpp"

namespace semivox {

struct LossBreakdown {
    double sup = 0;
    double sup_aux = 0;
    double unsup = 0;
    double unsup_aux = 0;
    double distill = 0;
    double total = 0;
};

inline double total_loss(double sup, double sup_aux, double unsup, double unsup_aux,
                         double distill, double lambda_unsup) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v))
            throw std::runtime_error(std::string("total_loss: non-finite term ") + name);
    };
    check(sup, "sup");
    check(sup_aux, "sup_aux");
    check(unsup, "unsup");
    check(unsup_aux, "unsup_aux");
    check(distill, "distill");
    return sup + sup_aux + distill + lambda_unsup * (unsup + unsup_aux);
}

inline LossBreakdown make_breakdown(double sup, double sup_aux, double unsup, double unsup_aux,
                                    double distill, double lambda_unsup) {
    LossBreakdown b;
    b.sup = sup;
    b.sup_aux = sup_aux;
    b.unsup = unsup;
    b.unsup_aux = unsup_aux;
    b.distill = distill;
    b.total = total_loss(sup, sup_aux, unsup, unsup_aux, distill, lambda_unsup);
    return b;
}

// 0.5 * soft Dice loss (class mean, smoothing 1e-5) + 0.5 * voxel-mean
// cross-entropy, both restricted to kept voxels. An all-zero keep mask gives
//, by definition, a zero loss (and zero gradient).
inline double seg_loss(const Tensor4& logits, const LabelMap& target,
                       std::span<const std::uint8_t> keep_mask = {},
                       Tensor4* grad_logits = nullptr) {
    if (!(logits.sp == target.dims))
        throw std::invalid_argument("seg_loss: logits dims " + to_string(logits.sp) +
                                    " do not match target dims " + to_string(target.dims));
    const int C = logits.channels;
    const std::int64_t n = logits.spatial();
    if (!keep_mask.empty() && static_cast<std::int64_t>(keep_mask.size()) != n)
        throw std::invalid_argument("seg_loss: keep mask length mismatch");
    for (std::uint8_t v : target.data)
        if (v >= C)
            throw std::invalid_argument("seg_loss: target label " + std::to_string(int(v)) +
                                        " >= channel count " + std::to_string(C));
    if (grad_logits) *grad_logits = make_tensor(C, logits.sp);

    constexpr double smooth = 1e-5;
    std::int64_t kept = 0;
    double ce = 0;
    std::vector<double> inter(C, 0.0), denom(C, 0.0), prob(C);

    auto softmax_at = [&](std::int64_t i, std::vector<double>& p) {
        double zmax = logits.v[i];
        for (int c = 1; c < C; ++c) zmax = std::max(zmax, static_cast<double>(logits.v[c * n + i]));
        double sum = 0;
        for (int c = 0; c < C; ++c) {
            p[c] = std::exp(static_cast<double>(logits.v[c * n + i]) - zmax);
            sum += p[c];
        }
        for (int c = 0; c < C; ++c) p[c] /= sum;
    };

    for (std::int64_t i = 0; i < n; ++i) {
        if (!keep_mask.empty() && !keep_mask[static_cast<std::size_t>(i)]) continue;
        ++kept;
        softmax_at(i, prob);
        const int y = target.data[static_cast<std::size_t>(i)];
        ce -= std::log(std::max(prob[y], 1e-300));
        for (int c = 0; c < C; ++c) denom[c] += prob[c];
        inter[y] += prob[y];
        denom[y] += 1.0;
    }
    if (kept == 0) return 0.0;
    ce /= static_cast<double>(kept);

    double dice_sum = 0;
    for (int c = 0; c < C; ++c) dice_sum += (2.0 * inter[c] + smooth) / (denom[c] + smooth);
    const double dice_loss = 1.0 - dice_sum / C;
    const double loss = 0.5 * dice_loss + 0.5 * ce;

    if (grad_logits) {
        // d(diceLoss)/d p_c at voxel of class y, then chain through softmax.
        std::vector<double> dLdp(C), factor(C);
        for (int c = 0; c < C; ++c)
            factor[c] = (2.0 * inter[c] + smooth) / ((denom[c] + smooth) * (denom[c] + smooth));
        for (std::int64_t i = 0; i < n; ++i) {
            if (!keep_mask.empty() && !keep_mask[static_cast<std::size_t>(i)]) continue;
            softmax_at(i, prob);
            const int y = target.data[static_cast<std::size_t>(i)];
            for (int c = 0; c < C; ++c) {
                const double two_y = c == y ? 2.0 : 0.0;
                dLdp[c] = -(1.0 / C) * (two_y / (denom[c] + smooth) - factor[c]);
            }
            double dot = 0;
            for (int c = 0; c < C; ++c) dot += dLdp[c] * prob[c];
            for (int c = 0; c < C; ++c) {
                const double dice_part = prob[c] * (dLdp[c] - dot);
                const double ce_part = (prob[c] - (c == y ? 1.0 : 0.0)) / kept;
                grad_logits->v[c * n + i] = static_cast<float>(0.5 * dice_part + 0.5 * ce_part);
            }
        }
    }
    return loss;
}

// Voxels of class c are kept independently with probability I_c, so the
// rarest present class is always kept and frequent classes are thinned.
inline std::vector<std::uint8_t> aux_keep_mask(const LabelMap& target,
                                               const ImbalanceRatios& ratios, RngEngine& eng) {
    if (ratios.num_classes() < target.num_classes)
        throw std::invalid_argument("aux_keep_mask: ratios not defined for all target classes");
    std::vector<std::uint8_t> mask(target.data.size());
    for (std::size_t i = 0; i < target.data.size(); ++i)
        mask[i] = rng_u01(eng) < ratios.ratios[target.data[i]] ? 1 : 0;
    return mask;
}

}  // namespace semivox
