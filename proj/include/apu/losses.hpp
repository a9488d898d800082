// Scalar loss terms of the two-person fitting objective. Every term is
// generic over the scalar type, so the same code yields values (double) and
// exact gradients (Dual<N>).

#pragma once

#include "apu/body.hpp"
#include "apu/dual.hpp"
#include "apu/error.hpp"
#include "apu/gmm.hpp"
#include "apu/taxonomy.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace apu {

struct LossWeights {
    double lambda_c = 1.0;
    double lambda_j = 0.02;
    double lambda_gmm = 0.01;
    double lambda_beta = 0.01;
    double lambda_theta_bar = 0.1;
    double lambda_p = 1.0;

    void validate() const {
        for (double l : {lambda_c, lambda_j, lambda_gmm, lambda_beta, lambda_theta_bar, lambda_p})
            if (l < 0.0) throw ValidationError("loss weights must be nonnegative");
    }
};

constexpr double kReprojKernelPx = 50.0;  // Geman-McClure scale c

// ---------------------------------------------------------------------------
// Keypoint reprojection

// Geman-McClure on the squared residual: e^2 / (e^2 + c^2), smooth at 0.
template <typename T>
T geman_mcclure_sq(const T& sq_residual) {
    return sq_residual / (sq_residual + kReprojKernelPx * kReprojKernelPx);
}

namespace detail {

template <typename T>
T person_reprojection(const PosedBodyT<T>& posed, const Keypoints2D& kps,
                      const Camera& camera, const BodyModelAsset& model) {
    T sum(0.0);
    int used = 0;
    for (const auto& mk : model_keypoints(posed, model)) {
        if (mk.keypoint >= static_cast<int>(kps.points.size())) continue;
        const auto& det = kps.points[mk.keypoint];
        if (det.confidence <= 0.0) continue;
        const auto proj = project(camera, mk.position);
        if (!proj.valid) continue;
        const T du = proj.u - det.x;
        const T dv = proj.v - det.y;
        sum += det.confidence * geman_mcclure_sq(du * du + dv * dv);
        ++used;
    }
    if (used == 0) throw Error("unconstrained person");
    return sum;
}

}  // namespace detail

// Confidence-weighted robust reprojection of both people's model keypoints.
template <typename T>
T reprojection_loss(const PosedBodyT<T>& posed_a, const PosedBodyT<T>& posed_b,
                    const Keypoints2D& kps_a, const Keypoints2D& kps_b, const Camera& camera,
                    const BodyModelAsset& model) {
    return detail::person_reprojection(posed_a, kps_a, camera, model) +
           detail::person_reprojection(posed_b, kps_b, camera, model);
}

// ---------------------------------------------------------------------------
// Contact

// Sum over active cells of W_ij * squared minimum sample distance between
// region i on body a and region j on body b. The minimizing sample pair is
// located with plain values, then its distance is recomputed generically so
// the gradient follows the active pair.
template <typename T>
T contact_loss(const PosedBodyT<T>& posed_a, const PosedBodyT<T>& posed_b, const ContactMap& c,
               const SoftWeights& w, const BodyModelAsset& model) {
    if (c.regions != model.region_count || w.regions != model.region_count)
        throw ValidationError("contact map dimension disagrees with the body asset");
    T total(0.0);
    for (int i = 1; i <= c.regions; ++i) {
        for (int j = 1; j <= c.regions; ++j) {
            if (!c.at(i, j) || w.at(i, j) == 0.0) continue;
            const auto& samples_a = model.region_sample_index[i];
            const auto& samples_b = model.region_sample_index[j];
            double best = 1e300;
            int best_a = samples_a[0], best_b = samples_b[0];
            for (int sa : samples_a) {
                const auto& va = posed_a.surface[sa].position;
                for (int sb : samples_b) {
                    const auto& vb = posed_b.surface[sb].position;
                    const double dx = value_of(va.x) - value_of(vb.x);
                    const double dy = value_of(va.y) - value_of(vb.y);
                    const double dz = value_of(va.z) - value_of(vb.z);
                    const double sq = dx * dx + dy * dy + dz * dz;
                    if (sq < best) {
                        best = sq;
                        best_a = sa;
                        best_b = sb;
                    }
                }
            }
            const Vec3<T> d = posed_a.surface[best_a].position - posed_b.surface[best_b].position;
            total += w.at(i, j) * d.squared_norm();
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Parameter priors

template <typename T>
T shape_prior(const std::array<T, kShapeDims>& beta) {
    T sum(0.0);
    for (const auto& b : beta) sum += b * b;
    return sum;
}

template <typename T>
T pose_deviation(const std::array<Vec3<T>, kArticulatedJoints>& theta,
                 const std::array<Vec3d, kArticulatedJoints>& theta_init) {
    T sum(0.0);
    for (int j = 0; j < kArticulatedJoints; ++j) {
        const Vec3<T> d = theta[j] - Vec3<T>::from(theta_init[j]);
        sum += d.squared_norm();
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Interpenetration

// Minimum distance between segments [p1,q1] and [p2,q2] (Ericson's clamped
// closed form), generic over the scalar.
template <typename T>
T segment_distance(const Vec3<T>& p1, const Vec3<T>& q1, const Vec3<T>& p2, const Vec3<T>& q2) {
    const Vec3<T> d1 = q1 - p1;
    const Vec3<T> d2 = q2 - p2;
    const Vec3<T> r = p1 - p2;
    const T a = d1.squared_norm();
    const T e = d2.squared_norm();
    const T f = d2.dot(r);

    T s(0.0), t(0.0);
    constexpr double eps = 1e-12;
    if (value_of(a) <= eps && value_of(e) <= eps) {
        // both degenerate: point-point
    } else if (value_of(a) <= eps) {
        t = clamp01(f / e);
    } else {
        const T c = d1.dot(r);
        if (value_of(e) <= eps) {
            s = clamp01(-c / a);
        } else {
            const T b = d1.dot(d2);
            const T denom = a * e - b * b;
            if (value_of(denom) > eps) s = clamp01((b * f - c * e) / denom);
            t = (b * s + f) / e;
            if (value_of(t) < 0.0) {
                t = T(0.0);
                s = clamp01(-c / a);
            } else if (value_of(t) > 1.0) {
                t = T(1.0);
                s = clamp01((b - c) / a);
            }
        }
    }
    const Vec3<T> closest1 = p1 + d1 * s;
    const Vec3<T> closest2 = p2 + d2 * t;
    const T sq = (closest1 - closest2).squared_norm();
    return sqrt(sq + T(1e-24));  // tiny bias keeps the root differentiable at 0
}

// Sum over cross-person capsule pairs of squared overlap depth.
template <typename T>
T penetration_loss(const PosedBodyT<T>& posed_a, const PosedBodyT<T>& posed_b) {
    T total(0.0);
    for (const auto& ca : posed_a.capsules) {
        for (const auto& cb : posed_b.capsules) {
            const T dist = segment_distance(ca.a, ca.b, cb.a, cb.b);
            const T pen = ca.radius + cb.radius - dist;
            if (value_of(pen) > 0.0) total += pen * pen;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Combined objective

template <typename T>
struct LossTerms {
    T j{}, gmm{}, beta{}, theta_bar{}, c{}, p{};
    T diffusion{};  // generative-prior pull term; zero outside guided fits
    T total{};
    bool config_swapped = false;  // transposed contact map achieved the lower L_C
};

namespace detail {

template <typename T>
void check_finite(const T& term, const char* name) {
    if (!std::isfinite(value_of(term))) throw Error(std::string("non-finite ") + name);
}

}  // namespace detail

// Full objective. Stage 1 omits L_P; beta freezing in stage 2 is the
// optimizer's masking concern, not the loss's. L_C takes the better of the
// two person-assignment configurations (C vs C transposed).
template <typename T>
LossTerms<T> total_loss_terms(int stage, const BodyParamsT<T>& params_a,
                              const BodyParamsT<T>& params_b, const Keypoints2D& kps_a,
                              const Keypoints2D& kps_b, const Camera& camera,
                              const LossWeights& weights, const ContactMap& c,
                              const SoftWeights& w,
                              const std::array<Vec3d, kArticulatedJoints>& theta_init_a,
                              const std::array<Vec3d, kArticulatedJoints>& theta_init_b,
                              const GmmPrior* gmm, const BodyModelAsset& model) {
    if (stage != 1 && stage != 2) throw ValidationError("stage must be 1 or 2");
    weights.validate();

    const auto posed_a = forward_kinematics(model, params_a);
    const auto posed_b = forward_kinematics(model, params_b);

    LossTerms<T> terms;
    terms.j = reprojection_loss(posed_a, posed_b, kps_a, kps_b, camera, model);
    detail::check_finite(terms.j, "L_J");

    if (gmm) {
        terms.gmm = gmm_loss(*gmm, flatten_pose_t(params_a.theta)) +
                    gmm_loss(*gmm, flatten_pose_t(params_b.theta));
        detail::check_finite(terms.gmm, "L_GMM");
    }

    terms.beta = shape_prior(params_a.beta) + shape_prior(params_b.beta);
    detail::check_finite(terms.beta, "L_beta");

    terms.theta_bar = pose_deviation(params_a.theta, theta_init_a) +
                      pose_deviation(params_b.theta, theta_init_b);
    detail::check_finite(terms.theta_bar, "L_theta_bar");

    if (c.any()) {
        const T direct = contact_loss(posed_a, posed_b, c, w, model);
        const auto [ct, wt] = swap_persons(c, w);
        const T swapped = contact_loss(posed_a, posed_b, ct, wt, model);
        if (value_of(swapped) < value_of(direct)) {
            terms.c = swapped;
            terms.config_swapped = true;
        } else {
            terms.c = direct;
        }
        detail::check_finite(terms.c, "L_C");
    }

    if (stage == 2) {
        terms.p = penetration_loss(posed_a, posed_b);
        detail::check_finite(terms.p, "L_P");
    }

    terms.total = weights.lambda_j * terms.j + weights.lambda_gmm * terms.gmm +
                  weights.lambda_beta * terms.beta + weights.lambda_theta_bar * terms.theta_bar +
                  weights.lambda_c * terms.c + (stage == 2 ? weights.lambda_p * terms.p : T(0.0));
    detail::check_finite(terms.total, "total loss");
    return terms;
}

template <typename T>
T total_loss(int stage, const BodyParamsT<T>& params_a, const BodyParamsT<T>& params_b,
             const Keypoints2D& kps_a, const Keypoints2D& kps_b, const Camera& camera,
             const LossWeights& weights, const ContactMap& c, const SoftWeights& w,
             const std::array<Vec3d, kArticulatedJoints>& theta_init_a,
             const std::array<Vec3d, kArticulatedJoints>& theta_init_b, const GmmPrior* gmm,
             const BodyModelAsset& model) {
    return total_loss_terms(stage, params_a, params_b, kps_a, kps_b, camera, weights, c, w,
                            theta_init_a, theta_init_b, gmm, model)
        .total;
}

}  // namespace apu
