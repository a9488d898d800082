// Gaussian-mixture pose prior over flattened joint rotations (63 dims),
// fit by expectation-maximization with diagonal covariances.

#pragma once

#include "apu/body.hpp"
#include "apu/dual.hpp"
#include "apu/error.hpp"

#include <array>
#include <cmath>
#include <random>
#include <vector>

namespace apu {

constexpr int kPoseDims = kArticulatedJoints * 3;  // 63

using PoseVec = std::array<double, kPoseDims>;

inline PoseVec flatten_pose(const std::array<Vec3d, kArticulatedJoints>& theta) {
    PoseVec out;
    for (int j = 0; j < kArticulatedJoints; ++j) {
        out[3 * j + 0] = theta[j].x;
        out[3 * j + 1] = theta[j].y;
        out[3 * j + 2] = theta[j].z;
    }
    return out;
}

struct GmmPrior {
    int components = 0;
    std::vector<double> weights;            // M, sum 1
    std::vector<PoseVec> means;             // M x 63
    std::vector<PoseVec> variances;         // M x 63, diagonal covariances
    int floor_hits = 0;                     // variance entries clamped during fitting

    void validate() const {
        if (components <= 0 || static_cast<int>(weights.size()) != components ||
            static_cast<int>(means.size()) != components ||
            static_cast<int>(variances.size()) != components)
            throw ValidationError("mixture arrays disagree with component count");
        double sum = 0.0;
        for (double w : weights) {
            if (w <= 0.0 || w > 1.0) throw ValidationError("mixture weights must lie in (0, 1]");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ValidationError("mixture weights must sum to 1");
        for (const auto& var : variances)
            for (double v : var)
                if (v <= 0.0) throw ValidationError("mixture variances must be positive");
    }
};

constexpr double kGmmVarianceFloor = 1e-6;

// EM fit. Deterministic for a fixed seed: means start at distinct library
// poses, variances at the per-dimension library variance.
inline GmmPrior fit_gmm(const std::vector<PoseVec>& library, int components,
                        unsigned seed = 0) {
    const int n = static_cast<int>(library.size());
    if (n < 10 * components)
        throw ValidationError("pose library too small: need at least " +
                              std::to_string(10 * components) + " poses, got " +
                              std::to_string(n));

    GmmPrior prior;
    prior.components = components;
    prior.weights.assign(components, 1.0 / components);

    PoseVec mean_all{}, var_all{};
    for (const auto& p : library)
        for (int d = 0; d < kPoseDims; ++d) mean_all[d] += p[d] / n;
    for (const auto& p : library)
        for (int d = 0; d < kPoseDims; ++d) {
            const double c = p[d] - mean_all[d];
            var_all[d] += c * c / n;
        }
    for (int d = 0; d < kPoseDims; ++d) var_all[d] = std::max(var_all[d], kGmmVarianceFloor);

    std::mt19937 rng(seed);
    std::uniform_int_distribution<int> pick(0, n - 1);
    for (int m = 0; m < components; ++m) {
        prior.means.push_back(library[pick(rng)]);
        prior.variances.push_back(var_all);
    }

    std::vector<std::vector<double>> resp(n, std::vector<double>(components));
    double prev_ll = -1e300;
    for (int iter = 0; iter < 200; ++iter) {
        // E step in log space.
        double ll = 0.0;
        for (int i = 0; i < n; ++i) {
            std::vector<double> logp(components);
            double mx = -1e300;
            for (int m = 0; m < components; ++m) {
                double lp = std::log(prior.weights[m]);
                for (int d = 0; d < kPoseDims; ++d) {
                    const double c = library[i][d] - prior.means[m][d];
                    lp += -0.5 * (std::log(2.0 * M_PI * prior.variances[m][d]) +
                                  c * c / prior.variances[m][d]);
                }
                logp[m] = lp;
                mx = std::max(mx, lp);
            }
            double denom = 0.0;
            for (int m = 0; m < components; ++m) denom += std::exp(logp[m] - mx);
            for (int m = 0; m < components; ++m) resp[i][m] = std::exp(logp[m] - mx) / denom;
            ll += mx + std::log(denom);
        }

        // M step.
        for (int m = 0; m < components; ++m) {
            double nk = 0.0;
            for (int i = 0; i < n; ++i) nk += resp[i][m];
            nk = std::max(nk, 1e-12);
            prior.weights[m] = nk / n;
            PoseVec mu{};
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < kPoseDims; ++d) mu[d] += resp[i][m] * library[i][d] / nk;
            PoseVec var{};
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < kPoseDims; ++d) {
                    const double c = library[i][d] - mu[d];
                    var[d] += resp[i][m] * c * c / nk;
                }
            for (int d = 0; d < kPoseDims; ++d)
                if (var[d] < kGmmVarianceFloor) {
                    var[d] = kGmmVarianceFloor;
                    ++prior.floor_hits;
                }
            prior.means[m] = mu;
            prior.variances[m] = var;
        }

        if (std::abs(ll - prev_ll) < 1e-6) break;
        prev_ll = ll;
    }

    // Normalize tiny numeric drift so validate() holds exactly.
    double wsum = 0.0;
    for (double w : prior.weights) wsum += w;
    for (double& w : prior.weights) w /= wsum;
    prior.validate();
    return prior;
}

// Negative log-likelihood -log sum_m w_m N(theta; mu_m, Sigma_m), computed
// with a stable log-sum-exp. Generic over the scalar so gradients flow.
template <typename T>
T gmm_loss(const GmmPrior& prior, const std::array<T, kPoseDims>& theta) {
    std::vector<T> logp;
    logp.reserve(prior.components);
    double mx = -1e300;
    for (int m = 0; m < prior.components; ++m) {
        T lp(std::log(prior.weights[m]));
        for (int d = 0; d < kPoseDims; ++d) {
            const T c = theta[d] - prior.means[m][d];
            lp += T(-0.5 * std::log(2.0 * M_PI * prior.variances[m][d])) -
                  c * c * (0.5 / prior.variances[m][d]);
        }
        logp.push_back(lp);
        mx = std::max(mx, value_of(lp));
    }
    T sum(0.0);
    for (const auto& lp : logp) sum += exp(lp - mx);
    return -(T(mx) + log(sum));
}

template <typename T>
std::array<T, kPoseDims> flatten_pose_t(const std::array<Vec3<T>, kArticulatedJoints>& theta) {
    std::array<T, kPoseDims> out;
    for (int j = 0; j < kArticulatedJoints; ++j) {
        out[3 * j + 0] = theta[j].x;
        out[3 * j + 1] = theta[j].y;
        out[3 * j + 2] = theta[j].z;
    }
    return out;
}

}  // namespace apu
