// Central finite-difference verification of every analytic gradient path:
// the individual fitting loss terms, the guidance pull, and the forward
// kinematics Jacobian. Each term is probed on seeded random configurations
// along random parameter-space directions; the dual-number directional
// derivative is compared against (f(x + h d) - f(x - h d)) / 2h.

#pragma once

#include "apu/body.hpp"
#include "apu/gmm.hpp"
#include "apu/losses.hpp"
#include "apu/optimize.hpp"
#include "apu/prior.hpp"
#include "apu/rng.hpp"
#include "apu/synth.hpp"
#include "apu/taxonomy.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace apu {

struct GradCheckRow {
    std::string name;
    int configs = 0;
    double max_rel_err = 0.0;
};

constexpr double kGradCheckStep = 1e-5;
constexpr double kGradCheckTol = 1e-4;

namespace detail {

// Everything held fixed while one configuration is probed.
struct GradCase {
    PairParamVector x{};
    double sigma_a = 0.0, sigma_b = 0.0;
    Keypoints2D kps_a, kps_b;
    Camera camera;
    ContactMap c;
    SoftWeights w;
    std::array<Vec3d, kArticulatedJoints> theta_init_a{}, theta_init_b{};
    BodyParams guide_a, guide_b;  // fixed denoised guidance targets
    GuidanceWeights gw;
    std::vector<Vec3d> fk_joint_weights;                 // random FK functional
    std::vector<std::pair<int, Vec3d>> fk_surface_weights;
};

inline BodyParams grad_case_person(Rng& rng, double x_offset) {
    BodyParams p;
    for (auto& t : p.theta)
        t = {rng.uniform_in(-0.25, 0.25), rng.uniform_in(-0.25, 0.25),
             rng.uniform_in(-0.25, 0.25)};
    for (auto& b : p.beta) b = rng.uniform_in(-0.5, 0.5);
    p.sigma = rng.uniform();
    p.phi = {rng.uniform_in(-0.3, 0.3), rng.uniform_in(-1.5, 1.5), rng.uniform_in(-0.3, 0.3)};
    p.gamma = {x_offset + rng.uniform_in(-0.05, 0.05), rng.uniform_in(-0.05, 0.05),
               3.0 + rng.uniform_in(-0.2, 0.2)};
    return p;
}

inline Keypoints2D grad_case_keypoints(const BodyParams& truth, const BodyModelAsset& model,
                                       const Camera& camera, Rng& rng) {
    Keypoints2D kps;
    const auto posed = forward_kinematics(model, truth);
    for (const auto& mk : model_keypoints(posed, model)) {
        const auto proj = project(camera, mk.position);
        Keypoint2D p;
        if (proj.valid) {
            p = {proj.u + rng.normal() * 3.0, proj.v + rng.normal() * 3.0,
                 rng.uniform_in(0.3, 1.0), mk.side};
        }
        kps.points.push_back(p);
    }
    return kps;
}

inline GradCase make_grad_case(const BodyModelAsset& model, const DenoiserBase& denoiser,
                               const DiffusionSchedule& schedule, std::uint64_t seed) {
    Rng rng(seed);
    GradCase gc;

    // Overlapping bodies keep contact and penetration terms active.
    BodyParams a = grad_case_person(rng, -0.12);
    BodyParams b = grad_case_person(rng, 0.12);
    gc.sigma_a = a.sigma;
    gc.sigma_b = b.sigma;
    gc.x = pack_pair(a, b);

    gc.kps_a = grad_case_keypoints(a, model, gc.camera, rng);
    gc.kps_b = grad_case_keypoints(b, model, gc.camera, rng);

    gc.c = ContactMap(model.region_count);
    gc.w = SoftWeights(model.region_count);
    for (int k = 0; k < 3; ++k) {
        const int i = rng.uniform_int(1, model.region_count);
        const int j = rng.uniform_int(1, model.region_count);
        gc.c.set(i, j, 1);
        gc.w.set(i, j, rng.uniform_in(0.3, 1.0));
    }

    for (auto& t : gc.theta_init_a)
        t = {rng.uniform_in(-0.2, 0.2), rng.uniform_in(-0.2, 0.2), rng.uniform_in(-0.2, 0.2)};
    for (auto& t : gc.theta_init_b)
        t = {rng.uniform_in(-0.2, 0.2), rng.uniform_in(-0.2, 0.2), rng.uniform_in(-0.2, 0.2)};

    gc.gw.lambda_phi_hat = rng.uniform_in(0.2, 2.0);
    gc.gw.lambda_theta_hat = rng.uniform_in(0.2, 2.0);
    gc.gw.lambda_beta_hat = rng.uniform_in(0.2, 2.0);
    gc.gw.lambda_gamma_hat = rng.uniform_in(0.2, 2.0);
    gc.gw.t_guid = rng.uniform_int(1, schedule.T);
    PriorVec eps;
    for (int i = 0; i < kPairParamDims; ++i) eps[i] = rng.normal();
    const PriorVec target =
        guidance_target(to_prior_vec(gc.x), denoiser, schedule, gc.gw.t_guid, eps);
    std::tie(gc.guide_a, gc.guide_b) =
        unpack_pair(from_prior_vec(target), gc.sigma_a, gc.sigma_b);

    for (int j = 0; j < model.joint_count; ++j)
        gc.fk_joint_weights.push_back(
            {rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)});
    const int samples = static_cast<int>(model.surface_samples.size());
    for (int k = 0; k < 5; ++k)
        gc.fk_surface_weights.push_back(
            {rng.uniform_int(0, samples - 1),
             Vec3d{rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0),
                   rng.uniform_in(-1.0, 1.0)}});
    return gc;
}

constexpr int kGradCheckTerms = 8;

inline const char* grad_term_name(int term) {
    switch (term) {
        case 0: return "reprojection";
        case 1: return "contact";
        case 2: return "pose_mixture";
        case 3: return "shape_prior";
        case 4: return "pose_deviation";
        case 5: return "penetration";
        case 6: return "guidance";
        default: return "forward_kinematics";
    }
}

template <typename T>
T grad_term_value(int term, const GradCase& gc, const BodyParamsT<T>& pa,
                  const BodyParamsT<T>& pb, const BodyModelAsset& model, const GmmPrior& gmm) {
    switch (term) {
        case 0: {
            const auto posed_a = forward_kinematics(model, pa);
            const auto posed_b = forward_kinematics(model, pb);
            return reprojection_loss(posed_a, posed_b, gc.kps_a, gc.kps_b, gc.camera, model);
        }
        case 1: {
            const auto posed_a = forward_kinematics(model, pa);
            const auto posed_b = forward_kinematics(model, pb);
            return contact_loss(posed_a, posed_b, gc.c, gc.w, model);
        }
        case 2:
            return gmm_loss(gmm, flatten_pose_t(pa.theta)) +
                   gmm_loss(gmm, flatten_pose_t(pb.theta));
        case 3:
            return shape_prior(pa.beta) + shape_prior(pb.beta);
        case 4:
            return pose_deviation(pa.theta, gc.theta_init_a) +
                   pose_deviation(pb.theta, gc.theta_init_b);
        case 5: {
            const auto posed_a = forward_kinematics(model, pa);
            const auto posed_b = forward_kinematics(model, pb);
            return penetration_loss(posed_a, posed_b);
        }
        case 6:
            return guidance_group_loss(pa, pb, gc.guide_a, gc.guide_b, gc.gw);
        default: {
            // Random linear functional over every joint and a few surface
            // samples of person a: probes the full kinematic Jacobian.
            const auto posed_a = forward_kinematics(model, pa);
            T sum(0.0);
            for (size_t j = 0; j < posed_a.joints.size(); ++j)
                sum += posed_a.joints[j].dot(Vec3<T>::from(gc.fk_joint_weights[j]));
            for (const auto& [idx, wv] : gc.fk_surface_weights)
                sum += posed_a.surface[idx].position.dot(Vec3<T>::from(wv));
            return sum;
        }
    }
}

inline double grad_term_value_at(int term, const GradCase& gc, const PairParamVector& x,
                                 const BodyModelAsset& model, const GmmPrior& gmm) {
    const auto [a, b] = unpack_pair(x, gc.sigma_a, gc.sigma_b);
    return grad_term_value(term, gc, BodyParamsT<double>::lift(a), BodyParamsT<double>::lift(b),
                           model, gmm);
}

}  // namespace detail

// Runs every gradient check and reports the worst relative error per term.
// directions_per_config random unit directions are probed per configuration.
inline std::vector<GradCheckRow> run_gradient_checks(const BodyModelAsset& model,
                                                     int configs = 20,
                                                     double step = kGradCheckStep,
                                                     std::uint64_t seed = 0,
                                                     int directions_per_config = 3) {
    if (configs < 1) throw ValidationError("gradient check needs at least one configuration");
    if (step <= 0.0) throw ValidationError("finite-difference step must be positive");
    if (directions_per_config < 1)
        throw ValidationError("gradient check needs at least one direction");

    const GmmPrior gmm = fit_gmm(make_pose_library(60, seed + 404), 2, 11);
    const Denoiser denoiser = Denoiser::seeded(seed + 808, 2, 32);
    const DiffusionSchedule schedule = make_schedule(50, 1e-4, 0.02);

    std::vector<GradCheckRow> rows;
    for (int term = 0; term < detail::kGradCheckTerms; ++term)
        rows.push_back({detail::grad_term_name(term), configs, 0.0});

    for (int cfg = 0; cfg < configs; ++cfg) {
        const detail::GradCase gc =
            detail::make_grad_case(model, denoiser, schedule, seed + 1000 + cfg);
        const auto [la, lb] = lift_pair(gc.x, gc.sigma_a, gc.sigma_b);
        Rng dir_rng(seed + 5000 + cfg);

        for (int term = 0; term < detail::kGradCheckTerms; ++term) {
            const PairDual value = detail::grad_term_value(term, gc, la, lb, model, gmm);

            for (int rep = 0; rep < directions_per_config; ++rep) {
                std::array<double, kPairParamDims> dir{};
                double norm = 0.0;
                for (auto& d : dir) {
                    d = dir_rng.normal();
                    norm += d * d;
                }
                norm = std::sqrt(norm);

                double ad = 0.0;
                PairParamVector plus = gc.x, minus = gc.x;
                for (int i = 0; i < kPairParamDims; ++i) {
                    const double di = dir[i] / norm;
                    ad += value.d[i] * di;
                    plus[i] += step * di;
                    minus[i] -= step * di;
                }
                const double fd = (detail::grad_term_value_at(term, gc, plus, model, gmm) -
                                   detail::grad_term_value_at(term, gc, minus, model, gmm)) /
                                  (2.0 * step);
                const double rel =
                    std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-3});
                rows[term].max_rel_err = std::max(rows[term].max_rel_err, rel);
            }
        }
    }
    return rows;
}

}  // namespace apu
