// Two-stage first-order fitting of a two-person parameter pair, plus the
// reprojection-error metric and automatic pair filtering.
//
// Stage 1 optimizes {phi, theta, beta, gamma} per person (phi subject to a
// config toggle); stage 2 freezes beta and adds the interpenetration term.
// Sigma is never optimized. Steps follow Adam moments with a loss-increase
// backoff: a step raising the loss by more than 10% is reverted and the step
// size halved, up to five times per iteration. Each stage returns its
// best-ever parameters, so the final loss never exceeds the initial one.

#pragma once

#include "apu/body.hpp"
#include "apu/dual.hpp"
#include "apu/error.hpp"
#include "apu/losses.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace apu {

// ---------------------------------------------------------------------------
// Packed parameter layout, shared with the generative prior: per person
// [phi(3), theta(63), beta(10), gamma(3)] = 79, person a then person b.

constexpr int kPersonParamDims = 79;
constexpr int kPairParamDims = 2 * kPersonParamDims;

using PairParamVector = std::array<double, kPairParamDims>;
using PairDual = Dual<kPairParamDims>;

inline void pack_person(const BodyParams& p, double* v) {
    v[0] = p.phi.x;
    v[1] = p.phi.y;
    v[2] = p.phi.z;
    for (int j = 0; j < kArticulatedJoints; ++j) {
        v[3 + 3 * j + 0] = p.theta[j].x;
        v[3 + 3 * j + 1] = p.theta[j].y;
        v[3 + 3 * j + 2] = p.theta[j].z;
    }
    for (int i = 0; i < kShapeDims; ++i) v[66 + i] = p.beta[i];
    v[76] = p.gamma.x;
    v[77] = p.gamma.y;
    v[78] = p.gamma.z;
}

inline BodyParams unpack_person(const double* v, double sigma) {
    BodyParams p;
    p.phi = {v[0], v[1], v[2]};
    for (int j = 0; j < kArticulatedJoints; ++j)
        p.theta[j] = {v[3 + 3 * j + 0], v[3 + 3 * j + 1], v[3 + 3 * j + 2]};
    for (int i = 0; i < kShapeDims; ++i) p.beta[i] = v[66 + i];
    p.gamma = {v[76], v[77], v[78]};
    p.sigma = sigma;
    return p;
}

inline PairParamVector pack_pair(const BodyParams& a, const BodyParams& b) {
    PairParamVector v;
    pack_person(a, v.data());
    pack_person(b, v.data() + kPersonParamDims);
    return v;
}

inline std::pair<BodyParams, BodyParams> unpack_pair(const PairParamVector& v, double sigma_a,
                                                     double sigma_b) {
    return {unpack_person(v.data(), sigma_a),
            unpack_person(v.data() + kPersonParamDims, sigma_b)};
}

// Lift the packed vector into dual scalars with one derivative slot per entry.
inline std::pair<BodyParamsT<PairDual>, BodyParamsT<PairDual>> lift_pair(const PairParamVector& v,
                                                                         double sigma_a,
                                                                         double sigma_b) {
    const auto [a, b] = unpack_pair(v, sigma_a, sigma_b);
    auto la = BodyParamsT<PairDual>::lift(a);
    auto lb = BodyParamsT<PairDual>::lift(b);
    auto seed_person = [](BodyParamsT<PairDual>& p, int base) {
        p.phi.x.d[base + 0] = 1.0;
        p.phi.y.d[base + 1] = 1.0;
        p.phi.z.d[base + 2] = 1.0;
        for (int j = 0; j < kArticulatedJoints; ++j) {
            p.theta[j].x.d[base + 3 + 3 * j + 0] = 1.0;
            p.theta[j].y.d[base + 3 + 3 * j + 1] = 1.0;
            p.theta[j].z.d[base + 3 + 3 * j + 2] = 1.0;
        }
        for (int i = 0; i < kShapeDims; ++i) p.beta[i].d[base + 66 + i] = 1.0;
        p.gamma.x.d[base + 76] = 1.0;
        p.gamma.y.d[base + 77] = 1.0;
        p.gamma.z.d[base + 78] = 1.0;
    };
    seed_person(la, 0);
    seed_person(lb, kPersonParamDims);
    return {std::move(la), std::move(lb)};
}

// ---------------------------------------------------------------------------
// Fit plumbing types

enum class InitSource { estimator_file, synth_oracle, zero_init };

inline const char* to_string(InitSource s) {
    switch (s) {
        case InitSource::estimator_file: return "estimator_file";
        case InitSource::synth_oracle: return "synth_oracle";
        default: return "zero_init";
    }
}

inline InitSource init_source_from_string(const std::string& s) {
    if (s == "estimator_file") return InitSource::estimator_file;
    if (s == "synth_oracle") return InitSource::synth_oracle;
    if (s == "zero_init") return InitSource::zero_init;
    throw ParseError("unknown init source '" + s + "'");
}

struct FitInit {
    BodyParams a, b;
    InitSource source = InitSource::zero_init;
};

constexpr double kBackoffIncreaseTolerance = 0.10;  // relative rise triggering a revert
constexpr int kMaxStepHalvings = 5;
constexpr int kConvergenceWindow = 20;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

struct OptimConfig {
    int stage1_steps = 300;
    int stage2_steps = 200;
    double step_size = 0.01;
    double convergence_eps = 1e-7;  // max-min of the trailing window
    unsigned seed = 0;
    bool optimize_phi_stage1 = true;

    void validate() const {
        if (stage1_steps <= 0 || stage2_steps <= 0)
            throw ValidationError("optimizer step counts must be positive");
        if (step_size <= 0.0) throw ValidationError("optimizer step size must be positive");
        if (convergence_eps < 0.0)
            throw ValidationError("convergence epsilon must be nonnegative");
    }
};

struct FitResult {
    BodyParams final_a, final_b;
    FitInit init;
    // Per-term losses at the initial point, then each accepted step, then
    // the returned (best) point; the last total never exceeds the first.
    std::vector<LossTerms<double>> trace_stage1, trace_stage2;
    double reproj_error_a = 0.0, reproj_error_b = 0.0;
    bool config_swapped = false;
    int iterations_stage1 = 0, iterations_stage2 = 0;
};

inline std::vector<double> total_trace(const std::vector<LossTerms<double>>& trace) {
    std::vector<double> out;
    out.reserve(trace.size());
    for (const auto& t : trace) out.push_back(t.total);
    return out;
}

// ---------------------------------------------------------------------------
// Reprojection error (raw pixels in a bbox-normalized frame)

// Mean raw pixel distance per person between reprojected model keypoints and
// detections, measured after scaling the image so the bounding box of both
// people's valid detections has height 256. Keypoints with confidence 0 and
// invalid projections are excluded.
inline std::pair<double, double> reprojection_error(const BodyParams& pa, const BodyParams& pb,
                                                    const Keypoints2D& kps_a,
                                                    const Keypoints2D& kps_b, const Camera& camera,
                                                    const BodyModelAsset& model) {
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -std::numeric_limits<double>::infinity();
    for (const auto* kps : {&kps_a, &kps_b})
        for (const auto& p : kps->points)
            if (p.confidence > 0.0) {
                ymin = std::min(ymin, p.y);
                ymax = std::max(ymax, p.y);
            }
    if (!(ymax >= ymin)) throw Error("unconstrained person");
    const double scale = 256.0 / std::max(ymax - ymin, 1e-6);

    auto person = [&](const BodyParams& p, const Keypoints2D& kps) {
        const auto posed = forward_kinematics(model, p);
        double sum = 0.0;
        int used = 0;
        for (const auto& mk : model_keypoints(posed, model)) {
            if (mk.keypoint >= static_cast<int>(kps.points.size())) continue;
            const auto& det = kps.points[mk.keypoint];
            if (det.confidence <= 0.0) continue;
            const auto proj = project(camera, mk.position);
            if (!proj.valid) continue;
            sum += scale * std::hypot(proj.u - det.x, proj.v - det.y);
            ++used;
        }
        if (used == 0) throw Error("unconstrained person");
        return sum / used;
    };
    return {person(pa, kps_a), person(pb, kps_b)};
}

inline std::pair<double, double> reprojection_error(const FitResult& r, const Keypoints2D& kps_a,
                                                    const Keypoints2D& kps_b, const Camera& camera,
                                                    const BodyModelAsset& model) {
    return reprojection_error(r.final_a, r.final_b, kps_a, kps_b, camera, model);
}

// ---------------------------------------------------------------------------
// Optimizer internals

namespace detail {

inline std::array<bool, kPairParamDims> stage_mask(int stage, bool optimize_phi_stage1) {
    std::array<bool, kPairParamDims> mask{};
    for (int person = 0; person < 2; ++person) {
        const int base = person * kPersonParamDims;
        const bool phi = (stage == 2) || optimize_phi_stage1;
        for (int i = 0; i < 3; ++i) mask[base + i] = phi;
        for (int i = 3; i < 66; ++i) mask[base + i] = true;            // theta
        for (int i = 66; i < 76; ++i) mask[base + i] = (stage == 1);   // beta frozen in stage 2
        for (int i = 76; i < 79; ++i) mask[base + i] = true;           // gamma
    }
    return mask;
}

struct AdamState {
    Eigen::Matrix<double, kPairParamDims, 1> m = Eigen::Matrix<double, kPairParamDims, 1>::Zero();
    Eigen::Matrix<double, kPairParamDims, 1> v = Eigen::Matrix<double, kPairParamDims, 1>::Zero();
    int t = 0;
};

inline LossTerms<double> values_of_terms(const LossTerms<PairDual>& t) {
    LossTerms<double> out;
    out.j = t.j.v;
    out.gmm = t.gmm.v;
    out.beta = t.beta.v;
    out.theta_bar = t.theta_bar.v;
    out.c = t.c.v;
    out.p = t.p.v;
    out.diffusion = t.diffusion.v;
    out.total = t.total.v;
    out.config_swapped = t.config_swapped;
    return out;
}

// Shared Adam-with-backoff stage runner. begin_iteration(step, x) runs before
// the initial evaluation (step 0) and before each iteration; objectives with
// per-iteration state (such as fresh guidance noise) refresh it there, and
// every evaluation until the next call sees that same state, so acceptance
// comparisons stay consistent within an iteration.
template <typename EvalValue, typename EvalGrad, typename BeginIteration>
void run_adam_stage(int stage, int steps, const OptimConfig& config,
                    const std::array<bool, kPairParamDims>& mask, EvalValue&& eval_value,
                    EvalGrad&& eval_grad, BeginIteration&& begin_iteration, PairParamVector& x,
                    std::vector<LossTerms<double>>& trace, int& iterations) {
    auto with_step_context = [](const Error& e, int stage_n, int step) -> Error {
        return Error(std::string(e.what()) + " (stage " + std::to_string(stage_n) + ", step " +
                     std::to_string(step) + ")");
    };

    begin_iteration(0, x);
    LossTerms<double> current;
    try {
        current = eval_value(x);
    } catch (const Error& e) {
        if (std::string(e.what()).find("non-finite") != std::string::npos)
            throw with_step_context(e, stage, 0);
        throw;
    }
    trace.push_back(current);
    PairParamVector best_x = x;
    LossTerms<double> best = current;

    AdamState adam;
    double lr = config.step_size;

    for (int step = 1; step <= steps; ++step) {
        begin_iteration(step, x);
        Eigen::Matrix<double, kPairParamDims, 1> g;
        try {
            const auto grad_terms = eval_grad(x);
            current = values_of_terms(grad_terms);  // value under this iteration's state
            g = grad_terms.total.d;
        } catch (const Error& e) {
            throw with_step_context(e, stage, step);
        }

        // Tentative moments are lr-independent, so retries reuse them.
        AdamState trial = adam;
        trial.t += 1;
        trial.m = kAdamBeta1 * adam.m + (1.0 - kAdamBeta1) * g;
        trial.v = kAdamBeta2 * adam.v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
        const double bc1 = 1.0 - std::pow(kAdamBeta1, trial.t);
        const double bc2 = 1.0 - std::pow(kAdamBeta2, trial.t);

        int halvings = 0;
        for (;;) {
            PairParamVector candidate = x;
            for (int k = 0; k < kPairParamDims; ++k)
                if (mask[k])
                    candidate[k] -=
                        lr * (trial.m[k] / bc1) / (std::sqrt(trial.v[k] / bc2) + kAdamEpsilon);

            LossTerms<double> cand_terms;
            bool cand_ok = true;
            std::string cand_error;
            try {
                cand_terms = eval_value(candidate);
            } catch (const Error& e) {
                cand_ok = false;
                cand_error = e.what();
            }

            const bool acceptable =
                cand_ok && cand_terms.total <= current.total * (1.0 + kBackoffIncreaseTolerance);
            if (acceptable || halvings >= kMaxStepHalvings) {
                if (!cand_ok) throw with_step_context(Error(cand_error), stage, step);
                adam = trial;
                x = candidate;
                current = cand_terms;
                break;
            }
            ++halvings;
            lr *= 0.5;
        }

        trace.push_back(current);
        if (current.total < best.total) {
            best = current;
            best_x = x;
        }
        iterations = step;

        const int n = static_cast<int>(trace.size());
        if (n >= kConvergenceWindow) {
            double lo = trace[n - kConvergenceWindow].total, hi = lo;
            for (int i = n - kConvergenceWindow; i < n; ++i) {
                lo = std::min(lo, trace[i].total);
                hi = std::max(hi, trace[i].total);
            }
            if (hi - lo < config.convergence_eps) break;
        }
    }

    x = best_x;
    trace.push_back(best);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// fit_pair

inline FitResult fit_pair(const FitInit& init, const Keypoints2D& kps_a, const Keypoints2D& kps_b,
                          const Camera& camera, const ContactMap& c, const SoftWeights& w,
                          const LossWeights& weights, const OptimConfig& config,
                          const BodyModelAsset& model, const GmmPrior* gmm = nullptr) {
    config.validate();
    weights.validate();
    validate_params(init.a);
    validate_params(init.b);

    const auto& theta_init_a = init.a.theta;
    const auto& theta_init_b = init.b.theta;

    auto eval_value = [&](int stage, const PairParamVector& x) {
        const auto [pa, pb] = unpack_pair(x, init.a.sigma, init.b.sigma);
        return total_loss_terms(stage, BodyParamsT<double>::lift(pa), BodyParamsT<double>::lift(pb),
                                kps_a, kps_b, camera, weights, c, w, theta_init_a, theta_init_b,
                                gmm, model);
    };
    auto eval_grad = [&](int stage, const PairParamVector& x) {
        const auto [la, lb] = lift_pair(x, init.a.sigma, init.b.sigma);
        return total_loss_terms(stage, la, lb, kps_a, kps_b, camera, weights, c, w, theta_init_a,
                                theta_init_b, gmm, model);
    };
    FitResult result;
    result.init = init;

    PairParamVector x = pack_pair(init.a, init.b);
    auto run = [&](int stage, int steps, std::vector<LossTerms<double>>& trace, int& iters) {
        detail::run_adam_stage(
            stage, steps, config, detail::stage_mask(stage, config.optimize_phi_stage1),
            [&](const PairParamVector& xx) { return eval_value(stage, xx); },
            [&](const PairParamVector& xx) { return eval_grad(stage, xx); },
            [](int, const PairParamVector&) {}, x, trace, iters);
    };
    run(1, config.stage1_steps, result.trace_stage1, result.iterations_stage1);
    run(2, config.stage2_steps, result.trace_stage2, result.iterations_stage2);

    std::tie(result.final_a, result.final_b) = unpack_pair(x, init.a.sigma, init.b.sigma);
    result.config_swapped = result.trace_stage2.back().config_swapped;
    std::tie(result.reproj_error_a, result.reproj_error_b) =
        reprojection_error(result.final_a, result.final_b, kps_a, kps_b, camera, model);
    return result;
}

// ---------------------------------------------------------------------------
// Filtering

constexpr double kFilterThresholdPx = 20.0;

struct FilterOutcome {
    std::vector<int> kept, rejected;  // indices into the input list
};

// A pair survives only when both people reproject below the threshold.
inline FilterOutcome filter_pairs(const std::vector<FitResult>& results,
                                  double threshold = kFilterThresholdPx) {
    if (threshold <= 0.0) throw ValidationError("filter threshold must be positive");
    FilterOutcome out;
    for (int i = 0; i < static_cast<int>(results.size()); ++i) {
        if (results[i].reproj_error_a < threshold && results[i].reproj_error_b < threshold)
            out.kept.push_back(i);
        else
            out.rejected.push_back(i);
    }
    return out;
}

}  // namespace apu
