// Synthetic scene generation and evaluation: two-person ground-truth scenes
// posed from interaction templates, observation corruption (keypoint noise,
// annotation side flips / drops / hallucinations, perturbed initializations),
// and a Procrustes-aligned joint error computed over both people jointly.
//
// Scenes are closed geometrically: person b slides along the line between the
// designated contact-part centroids until the designated parts touch, the
// pair is re-centered at a fixed camera depth, and the ground-truth contact
// map is re-derived from the final surface distances.

#pragma once

#include "apu/ask.hpp"
#include "apu/body.hpp"
#include "apu/error.hpp"
#include "apu/gmm.hpp"
#include "apu/optimize.hpp"
#include "apu/rng.hpp"
#include "apu/taxonomy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace apu {

// ---------------------------------------------------------------------------
// Ground-truth scenes

constexpr double kPi = 3.141592653589793238462643383279;

constexpr double kContactTau = 0.02;  // region pairs closer than this touch (m)
constexpr double kSceneDepth = 3.2;   // pair center depth in the camera frame (m)
constexpr int kSceneAttempts = 20;    // pose resamples before generation gives up

struct GtScene {
    BodyParams truth_a, truth_b;
    Camera camera;
    ContactMap contacts;      // geometric, at the tau used during generation
    std::string interaction;  // template name
    unsigned seed = 0;
};

inline const std::vector<std::string>& template_names() {
    static const std::vector<std::string> names = {"handshake", "hug", "high-five",
                                                   "pat-on-back", "random-contact"};
    return names;
}

// Contact map derived purely from geometry: cell (i, j) is set when the
// closest sample pair between region i of a and region j of b is within tau.
inline ContactMap derive_contacts(const PosedBody& posed_a, const PosedBody& posed_b,
                                  const BodyModelAsset& model, double tau) {
    ContactMap c(model.region_count);
    const double tau_sq = tau * tau;
    for (int i = 1; i <= model.region_count; ++i) {
        for (int j = 1; j <= model.region_count; ++j) {
            bool hit = false;
            for (int ia : model.region_sample_index[i]) {
                for (int ib : model.region_sample_index[j]) {
                    const Vec3d d = posed_a.surface[ia].position - posed_b.surface[ib].position;
                    if (d.squared_norm() <= tau_sq) {
                        hit = true;
                        break;
                    }
                }
                if (hit) break;
            }
            if (hit) c.set(i, j, 1);
        }
    }
    return c;
}

namespace detail {

struct InteractionTemplate {
    std::string name;
    BodyParams base_a, base_b;
    BodyPart part_a, part_b;     // designated contact parts, on a and on b
    double theta_jitter = 0.06;  // radians, uniform per pose axis
};

inline BodyParams facing_body(double x, double yaw) {
    BodyParams p;
    p.gamma = {x, 0.0, 0.0};
    p.phi = {0.0, yaw, 0.0};
    return p;
}

// Hand-posed bases. Bodies start in a T pose facing +z; yaw +pi/2 turns a
// body to face +x. Joint j articulates through theta[j - 1].
inline const std::vector<InteractionTemplate>& structured_templates() {
    static const std::vector<InteractionTemplate> templates = [] {
        constexpr double kHalfPi = 1.5707963267948966;
        std::vector<InteractionTemplate> out;
        {
            InteractionTemplate t;
            t.name = "handshake";
            t.base_a = facing_body(-0.8, kHalfPi);
            t.base_b = facing_body(0.8, -kHalfPi);
            for (BodyParams* p : {&t.base_a, &t.base_b}) {
                p->theta[16] = {0.0, 1.45, 0.0};  // right shoulder: arm forward
                p->theta[18] = {0.0, 0.0, -0.3};  // right elbow: slight lift
            }
            t.part_a = {"hand", Side::right};
            t.part_b = {"hand", Side::right};
            out.push_back(t);
        }
        {
            InteractionTemplate t;
            t.name = "hug";
            t.base_a = facing_body(-0.45, kHalfPi);
            t.base_b = facing_body(0.45, -kHalfPi);
            for (BodyParams* p : {&t.base_a, &t.base_b}) {
                p->theta[16] = {0.0, 1.2, -0.25};  // right arm wraps forward
                p->theta[15] = {0.0, -1.2, 0.25};  // left arm wraps forward
            }
            t.part_a = {"chest", Side::none};
            t.part_b = {"chest", Side::none};
            t.theta_jitter = 0.05;
            out.push_back(t);
        }
        {
            InteractionTemplate t;
            t.name = "high-five";
            t.base_a = facing_body(-0.8, kHalfPi);
            t.base_b = facing_body(0.8, -kHalfPi);
            for (BodyParams* p : {&t.base_a, &t.base_b}) {
                p->theta[16] = {0.0, 1.5, 0.0};   // right arm forward
                p->theta[18] = {0.0, 0.0, -1.1};  // elbow swings the palm up
            }
            t.part_a = {"hand", Side::right};
            t.part_b = {"hand", Side::right};
            out.push_back(t);
        }
        {
            InteractionTemplate t;
            t.name = "pat-on-back";
            t.base_a = facing_body(1.1, -kHalfPi);   // a stands behind b
            t.base_b = facing_body(0.35, -kHalfPi);  // both face -x
            t.base_a.theta[16] = {0.0, 1.45, 0.0};
            t.base_a.theta[18] = {0.0, 0.0, -0.3};
            t.part_a = {"hand", Side::right};
            t.part_b = {"back", Side::none};
            t.theta_jitter = 0.05;
            out.push_back(t);
        }
        return out;
    }();
    return templates;
}

struct ClosestPair {
    double distance = std::numeric_limits<double>::infinity();
    Vec3d on_a, on_b;
};

inline std::vector<int> part_sample_indices(const BodyModelAsset& model,
                                            const std::vector<int>& regions) {
    std::vector<int> out;
    for (int r : regions)
        for (int idx : model.region_sample_index[r]) out.push_back(idx);
    return out;
}

inline ClosestPair closest_sample_pair(const PosedBody& posed_a, const PosedBody& posed_b,
                                       const std::vector<int>& samples_a,
                                       const std::vector<int>& samples_b) {
    ClosestPair best;
    double best_sq = std::numeric_limits<double>::infinity();
    for (int ia : samples_a) {
        for (int ib : samples_b) {
            const Vec3d pa = posed_a.surface[ia].position;
            const Vec3d pb = posed_b.surface[ib].position;
            const double d_sq = (pa - pb).squared_norm();
            if (d_sq < best_sq) {
                best_sq = d_sq;
                best = {std::sqrt(d_sq), pa, pb};
            }
        }
    }
    return best;
}

inline Vec3d sample_centroid(const PosedBody& posed, const std::vector<int>& samples) {
    Vec3d sum{};
    for (int idx : samples) sum = sum + posed.surface[idx].position;
    return samples.empty() ? sum : sum * (1.0 / static_cast<double>(samples.size()));
}

inline void jitter_pose(BodyParams& p, double theta_jitter, double yaw_jitter, Rng& rng) {
    for (auto& t : p.theta) {
        t.x += rng.uniform_in(-theta_jitter, theta_jitter);
        t.y += rng.uniform_in(-theta_jitter, theta_jitter);
        t.z += rng.uniform_in(-theta_jitter, theta_jitter);
    }
    p.phi.y += rng.uniform_in(-yaw_jitter, yaw_jitter);
    p.gamma.x += rng.uniform_in(-0.05, 0.05);
    p.gamma.y += rng.uniform_in(-0.02, 0.02);
    p.gamma.z += rng.uniform_in(-0.05, 0.05);
}

}  // namespace detail

// Builds a ground-truth scene from the named template. A jittered pose pair
// is drawn, b is translated along the line between the designated part
// centroids until the parts come within tau / 2, the pair is centered at
// kSceneDepth, and the contact map is derived from the final geometry. Draws
// are rejected when closure fails, a person shows fewer than k_min keypoints,
// or no contact cell survives; after kSceneAttempts rejections this throws.
inline GtScene generate_scene(const std::string& template_name, const BodyModelAsset& model,
                              unsigned seed, double tau = kContactTau, int k_min = 6) {
    const auto& names = template_names();
    if (std::find(names.begin(), names.end(), template_name) == names.end())
        throw ValidationError("unknown scene template '" + template_name + "'");

    Rng rng(seed);
    Camera camera;  // defaults: f 500, center 256, 512 x 512

    for (int attempt = 0; attempt < kSceneAttempts; ++attempt) {
        BodyParams a, b;
        std::vector<int> samples_a, samples_b;
        if (template_name == "random-contact") {
            a = detail::facing_body(-0.7, rng.uniform_in(-kPi, kPi));
            b = detail::facing_body(0.7, rng.uniform_in(-kPi, kPi));
            for (BodyParams* p : {&a, &b})
                for (auto& t : p->theta) {
                    t.x = rng.uniform_in(-0.25, 0.25);
                    t.y = rng.uniform_in(-0.25, 0.25);
                    t.z = rng.uniform_in(-0.25, 0.25);
                }
            samples_a = model.region_sample_index[rng.uniform_int(1, model.region_count)];
            samples_b = model.region_sample_index[rng.uniform_int(1, model.region_count)];
        } else {
            const auto& templates = detail::structured_templates();
            const auto it = std::find_if(templates.begin(), templates.end(),
                                         [&](const auto& t) { return t.name == template_name; });
            a = it->base_a;
            b = it->base_b;
            detail::jitter_pose(a, it->theta_jitter, 0.12, rng);
            detail::jitter_pose(b, it->theta_jitter, 0.12, rng);
            samples_a =
                detail::part_sample_indices(model, regions_of(model.part_regions, it->part_a));
            samples_b =
                detail::part_sample_indices(model, regions_of(model.part_regions, it->part_b));
        }

        PosedBody posed_a = forward_kinematics(model, a);
        PosedBody posed_b = forward_kinematics(model, b);

        // Slide b along the centroid line until the designated parts touch.
        const Vec3d ca = detail::sample_centroid(posed_a, samples_a);
        const Vec3d cb = detail::sample_centroid(posed_b, samples_b);
        Vec3d u = ca - cb;
        const double gap = u.norm();
        if (gap < 1e-9) continue;
        u = u * (1.0 / gap);
        double best_perp = std::numeric_limits<double>::infinity();
        double slide = 0.0;
        for (int ia : samples_a) {
            for (int ib : samples_b) {
                const Vec3d d = posed_a.surface[ia].position - posed_b.surface[ib].position;
                const double along = d.dot(u);
                const double perp_sq = d.squared_norm() - along * along;
                if (perp_sq < best_perp) {
                    best_perp = perp_sq;
                    slide = along;
                }
            }
        }
        b.gamma = b.gamma + u * slide;
        posed_b = forward_kinematics(model, b);

        // The crossing pair rarely lands exactly on the line, so absorb the
        // perpendicular residual with a short move along the closest pair.
        detail::ClosestPair close = detail::closest_sample_pair(posed_a, posed_b, samples_a,
                                                                samples_b);
        if (close.distance > tau / 2.0 && close.distance > 0.0) {
            const Vec3d step = (close.on_a - close.on_b) * (1.0 - (tau / 4.0) / close.distance);
            b.gamma = b.gamma + step;
            posed_b = forward_kinematics(model, b);
            close = detail::closest_sample_pair(posed_a, posed_b, samples_a, samples_b);
        }
        if (!(close.distance <= tau / 2.0)) continue;

        // Center the pair at the scene depth without disturbing the contact.
        Vec3d mean{};
        for (const auto& j : posed_a.joints) mean = mean + j;
        for (const auto& j : posed_b.joints) mean = mean + j;
        mean = mean * (1.0 / static_cast<double>(posed_a.joints.size() + posed_b.joints.size()));
        const Vec3d recenter = Vec3d{0.0, 0.0, kSceneDepth} - mean;
        a.gamma = a.gamma + recenter;
        b.gamma = b.gamma + recenter;
        posed_a = forward_kinematics(model, a);
        posed_b = forward_kinematics(model, b);

        const auto visible = [&](const PosedBody& posed) {
            int count = 0;
            for (const auto& mk : model_keypoints(posed, model)) {
                const auto proj = project(camera, mk.position);
                if (proj.valid && proj.u >= 0.0 && proj.u < camera.width && proj.v >= 0.0 &&
                    proj.v < camera.height)
                    ++count;
            }
            return count;
        };
        if (visible(posed_a) < k_min || visible(posed_b) < k_min) continue;

        ContactMap contacts = derive_contacts(posed_a, posed_b, model, tau);
        if (!contacts.any()) continue;

        GtScene scene;
        scene.truth_a = a;
        scene.truth_b = b;
        scene.camera = camera;
        scene.contacts = std::move(contacts);
        scene.interaction = template_name;
        scene.seed = seed;
        return scene;
    }
    throw Error("scene generation failed: no valid '" + template_name + "' scene in " +
                std::to_string(kSceneAttempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Observation corruption

struct CorruptionConfig {
    double sigma_px = 2.0;   // isotropic keypoint noise
    double p_flip = 0.05;    // per lateral part: side swapped
    double p_drop = 0.1;     // per ground-truth contact entry: omitted
    double p_hall = 0.05;    // per ground-truth contact entry: extra spurious entry
    double conf_lo = 0.6;    // keypoint / contact confidence range
    double conf_hi = 1.0;
    double init_theta_sigma = 0.15;  // radians, Gaussian per pose axis
    double init_gamma_sigma = 0.1;   // meters, Gaussian per translation axis

    void validate() const {
        for (double p : {p_flip, p_drop, p_hall})
            if (p < 0.0 || p > 1.0)
                throw ValidationError("corruption probabilities must lie in [0, 1]");
        if (sigma_px < 0.0) throw ValidationError("sigma_px must be non-negative");
        if (conf_lo < 0.0 || conf_hi > 1.0 || conf_lo > conf_hi)
            throw ValidationError("confidence range must satisfy 0 <= lo <= hi <= 1");
        if (init_theta_sigma < 0.0 || init_gamma_sigma < 0.0)
            throw ValidationError("init perturbation scales must be non-negative");
    }
};

struct Observations {
    Keypoints2D kps_a, kps_b;
    InteractionAnnotation annotation;
    FitInit init;
};

namespace detail {

// Maps each region to the most specific part covering it: fewest regions
// wins, ties break on table order. "hand" beats "arm" for hand regions.
inline std::vector<BodyPart> most_specific_parts(const PartRegionTable& table) {
    std::vector<BodyPart> by_region(static_cast<size_t>(table.region_count) + 1,
                                    BodyPart{"", Side::none});
    std::vector<size_t> best(static_cast<size_t>(table.region_count) + 1,
                             std::numeric_limits<size_t>::max());
    for (const auto& [key, regions] : table.entries) {
        for (int r : regions) {
            if (r < 1 || r > table.region_count) continue;
            if (regions.size() < best[r]) {
                best[r] = regions.size();
                by_region[r] = BodyPart{key.first, key.second};
            }
        }
    }
    return by_region;
}

inline BodyPart flip_side(BodyPart part) {
    if (part.side == Side::left)
        part.side = Side::right;
    else if (part.side == Side::right)
        part.side = Side::left;
    return part;
}

inline Keypoints2D noisy_keypoints(const PosedBody& posed, const BodyModelAsset& model,
                                   const Camera& camera, const CorruptionConfig& config,
                                   Rng& rng) {
    const auto marks = model_keypoints(posed, model);
    int max_id = 0;
    for (const auto& mk : marks) max_id = std::max(max_id, mk.keypoint);
    Keypoints2D kps;
    kps.points.resize(static_cast<size_t>(max_id) + 1);
    for (const auto& mk : marks) {
        // Fixed draw count per keypoint keeps streams aligned across configs.
        const double nx = rng.normal();
        const double ny = rng.normal();
        const double conf = rng.uniform_in(config.conf_lo, config.conf_hi);
        const auto proj = project(camera, mk.position);
        if (!proj.valid) continue;
        kps.points[mk.keypoint] = {proj.u + config.sigma_px * nx, proj.v + config.sigma_px * ny,
                                   conf, mk.side};
    }
    return kps;
}

}  // namespace detail

// Turns a ground-truth scene into the noisy observations a real pipeline
// would see. Contact cells become deduplicated part-level entries; each
// entry's lateral sides may flip, the entry may drop, and each ground-truth
// entry may spawn one hallucinated entry over random vocabulary parts.
inline Observations corrupt(const GtScene& scene, const CorruptionConfig& config, unsigned seed,
                            const BodyModelAsset& model) {
    config.validate();
    Rng rng(seed);

    const PosedBody posed_a = forward_kinematics(model, scene.truth_a);
    const PosedBody posed_b = forward_kinematics(model, scene.truth_b);

    Observations obs;
    obs.kps_a = detail::noisy_keypoints(posed_a, model, scene.camera, config, rng);
    obs.kps_b = detail::noisy_keypoints(posed_b, model, scene.camera, config, rng);

    const auto part_of = detail::most_specific_parts(model.part_regions);
    std::set<std::pair<BodyPart, BodyPart>> gt_entries;
    for (int i = 1; i <= scene.contacts.regions; ++i)
        for (int j = 1; j <= scene.contacts.regions; ++j)
            if (scene.contacts.at(i, j)) gt_entries.insert({part_of[i], part_of[j]});

    obs.annotation.interaction = scene.interaction;
    obs.annotation.person_left = "person_a";
    obs.annotation.person_right = "person_b";
    obs.annotation.orientation = "unknown";
    for (const auto& [pa, pb] : gt_entries) {
        // One fixed block of draws per entry, consumed regardless of outcome.
        const bool flip_a = rng.bernoulli(config.p_flip);
        const bool flip_b = rng.bernoulli(config.p_flip);
        const double conf = rng.uniform_in(config.conf_lo, config.conf_hi);
        const bool drop = rng.bernoulli(config.p_drop);
        if (!drop)
            obs.annotation.contacts.push_back({flip_a ? detail::flip_side(pa) : pa,
                                               flip_b ? detail::flip_side(pb) : pb, conf});
    }
    const auto& vocab = part_vocabulary();
    const auto random_part = [&] {
        const auto& name = vocab[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(vocab.size()) - 1))];
        // Lateral parts need a concrete side to resolve to regions later.
        const Side side = is_midline_part(name) ? Side::none
                          : rng.bernoulli(0.5)  ? Side::left
                                                : Side::right;
        return make_body_part(name, side);
    };
    for (size_t e = 0; e < gt_entries.size(); ++e) {
        if (!rng.bernoulli(config.p_hall)) continue;
        const BodyPart part_a = random_part();
        const BodyPart part_b = random_part();
        const double conf = rng.uniform_in(config.conf_lo, config.conf_hi);
        obs.annotation.contacts.push_back({part_a, part_b, conf});
    }

    obs.init.a = scene.truth_a;
    obs.init.b = scene.truth_b;
    obs.init.source = InitSource::synth_oracle;
    for (BodyParams* p : {&obs.init.a, &obs.init.b}) {
        for (auto& t : p->theta) {
            t.x += config.init_theta_sigma * rng.normal();
            t.y += config.init_theta_sigma * rng.normal();
            t.z += config.init_theta_sigma * rng.normal();
        }
        p->gamma.x += config.init_gamma_sigma * rng.normal();
        p->gamma.y += config.init_gamma_sigma * rng.normal();
        p->gamma.z += config.init_gamma_sigma * rng.normal();
    }
    return obs;
}

// ---------------------------------------------------------------------------
// PA-MPJPE

// Mean joint error in millimeters after one similarity alignment (rotation,
// translation, and scale) of the whole predicted point set onto the ground
// truth. Both people enter one stacked set so cross-person placement counts.
inline double pa_mpjpe(const std::vector<Vec3d>& predicted, const std::vector<Vec3d>& truth) {
    const int n = static_cast<int>(predicted.size());
    if (n == 0 || predicted.size() != truth.size())
        throw ValidationError("pa_mpjpe needs two equally sized non-empty point sets");

    Eigen::Matrix3Xd p(3, n), g(3, n);
    for (int i = 0; i < n; ++i) {
        p.col(i) << predicted[i].x, predicted[i].y, predicted[i].z;
        g.col(i) << truth[i].x, truth[i].y, truth[i].z;
    }
    const Eigen::Vector3d mu_p = p.rowwise().mean();
    const Eigen::Vector3d mu_g = g.rowwise().mean();
    const Eigen::Matrix3Xd pc = p.colwise() - mu_p;
    const Eigen::Matrix3Xd gc = g.colwise() - mu_g;

    const auto collinear = [](const Eigen::Matrix3Xd& m) {
        Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(m);
        const auto& sv = svd.singularValues();
        return sv(1) <= 1e-9 * std::max(sv(0), 1e-12);
    };
    if (n < 3 || collinear(pc) || collinear(gc))
        throw ValidationError("pa_mpjpe needs at least 3 non-collinear points in each set");

    const Eigen::Matrix3d sigma = gc * pc.transpose() / static_cast<double>(n);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d = Eigen::Vector3d::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2) = -1.0;
    const Eigen::Matrix3d rot = svd.matrixU() * d.asDiagonal() * svd.matrixV().transpose();
    const double var_p = pc.squaredNorm() / static_cast<double>(n);
    const double scale = svd.singularValues().dot(d) / var_p;
    const Eigen::Vector3d t = mu_g - scale * rot * mu_p;

    double sum = 0.0;
    for (int i = 0; i < n; ++i)
        sum += ((scale * rot * p.col(i) + t) - g.col(i)).norm();
    return 1000.0 * sum / static_cast<double>(n);
}

inline double pa_mpjpe(const std::vector<Vec3d>& pred_a, const std::vector<Vec3d>& pred_b,
                       const std::vector<Vec3d>& truth_a, const std::vector<Vec3d>& truth_b) {
    std::vector<Vec3d> pred(pred_a);
    pred.insert(pred.end(), pred_b.begin(), pred_b.end());
    std::vector<Vec3d> truth(truth_a);
    truth.insert(truth.end(), truth_b.begin(), truth_b.end());
    return pa_mpjpe(pred, truth);
}

// ---------------------------------------------------------------------------
// Evaluation over fitted scenes

struct SceneResult {
    GtScene scene;
    FitInit init;            // corrupted initialization handed to the fitter
    BodyParams fit_a, fit_b;  // fitted parameters
};

struct EvalRow {
    std::string label;  // template name, or "overall"
    int count = 0;
    double init_pa_mpjpe = 0.0;
    double fit_pa_mpjpe = 0.0;
    double delta = 0.0;  // init - fit; positive means the fit improved
};

struct EvalReport {
    std::vector<EvalRow> per_template;  // sorted by label
    EvalRow overall;
};

inline EvalReport evaluate_fits(const std::vector<SceneResult>& results,
                                const BodyModelAsset& model) {
    if (results.empty()) throw ValidationError("evaluate_fits needs at least one result");
    struct Acc {
        double init_sum = 0.0, fit_sum = 0.0;
        int count = 0;
    };
    std::map<std::string, Acc> by_template;
    Acc overall;
    for (const auto& r : results) {
        const auto joints = [&](const BodyParams& p) { return forward_kinematics(model, p).joints; };
        const auto gt_a = joints(r.scene.truth_a);
        const auto gt_b = joints(r.scene.truth_b);
        const double init_err = pa_mpjpe(joints(r.init.a), joints(r.init.b), gt_a, gt_b);
        const double fit_err = pa_mpjpe(joints(r.fit_a), joints(r.fit_b), gt_a, gt_b);
        for (Acc* acc : {&by_template[r.scene.interaction], &overall}) {
            acc->init_sum += init_err;
            acc->fit_sum += fit_err;
            ++acc->count;
        }
    }
    const auto to_row = [](const std::string& label, const Acc& acc) {
        EvalRow row;
        row.label = label;
        row.count = acc.count;
        row.init_pa_mpjpe = acc.init_sum / acc.count;
        row.fit_pa_mpjpe = acc.fit_sum / acc.count;
        row.delta = row.init_pa_mpjpe - row.fit_pa_mpjpe;
        return row;
    };
    EvalReport report;
    for (const auto& [label, acc] : by_template) report.per_template.push_back(to_row(label, acc));
    report.overall = to_row("overall", overall);
    return report;
}

inline std::string eval_report_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "template,n,init_pa_mpjpe,fit_pa_mpjpe,delta\n";
    out << std::fixed << std::setprecision(6);
    const auto row = [&](const EvalRow& r) {
        out << r.label << ',' << r.count << ',' << r.init_pa_mpjpe << ',' << r.fit_pa_mpjpe << ','
            << r.delta << '\n';
    };
    for (const auto& r : report.per_template) row(r);
    row(report.overall);
    return out.str();
}

// ---------------------------------------------------------------------------
// Pose libraries for the mixture prior

// Draws poses around the structured template poses (plus rest) so a mixture
// fitted on the library covers the interaction repertoire.
inline std::vector<PoseVec> make_pose_library(int count, unsigned seed) {
    if (count <= 0) throw ValidationError("pose library size must be positive");
    std::vector<std::array<Vec3d, kArticulatedJoints>> bases;
    bases.push_back({});  // rest pose
    for (const auto& t : detail::structured_templates()) {
        bases.push_back(t.base_a.theta);
        bases.push_back(t.base_b.theta);
    }
    Rng rng(seed);
    std::vector<PoseVec> library;
    library.reserve(count);
    for (int i = 0; i < count; ++i) {
        auto theta = bases[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(bases.size()) - 1))];
        for (auto& t : theta) {
            t.x += 0.08 * rng.normal();
            t.y += 0.08 * rng.normal();
            t.z += 0.08 * rng.normal();
        }
        library.push_back(flatten_pose(theta));
    }
    return library;
}

}  // namespace apu
