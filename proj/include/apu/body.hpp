// Asset-driven parametric articulated body: a kinematic tree with
// shape-scaled bones, capsule surfaces sampled into labeled regions, age
// interpolation between an adult and an infant template, and a pinhole
// camera. Forward kinematics is templated on the scalar type so the same
// code produces values (double) or values + gradients (Dual<N>).

#pragma once

#include "apu/error.hpp"
#include "apu/rotation.hpp"
#include "apu/taxonomy.hpp"
#include "apu/vec3.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace apu {

constexpr int kArticulatedJoints = 21;  // excludes the pelvis root
constexpr int kShapeDims = 10;
constexpr double kMinBoneScale = 0.1;  // bones never shrink below 10% rest length

enum class Laterality { left, right, center };

inline const char* to_string(Laterality l) {
    switch (l) {
        case Laterality::left: return "left";
        case Laterality::right: return "right";
        default: return "center";
    }
}

inline Laterality laterality_from_string(const std::string& s) {
    if (s == "left") return Laterality::left;
    if (s == "right") return Laterality::right;
    if (s == "center") return Laterality::center;
    throw ParseError("unknown laterality '" + s + "'");
}

struct Keypoint2D {
    double x = 0.0;
    double y = 0.0;
    double confidence = 0.0;
    Laterality side = Laterality::center;
};

struct Keypoints2D {
    std::vector<Keypoint2D> points;

    size_t size() const { return points.size(); }
    int valid_count(double conf_min) const {
        int n = 0;
        for (const auto& p : points)
            if (p.confidence >= conf_min) ++n;
        return n;
    }
};

struct Camera {
    double fx = 500.0, fy = 500.0;
    double cx = 256.0, cy = 256.0;
    int width = 512, height = 512;
};

inline void validate_camera(const Camera& c) {
    if (c.fx <= 0.0 || c.fy <= 0.0) throw ValidationError("camera focal lengths must be positive");
    if (c.cx < 0.0 || c.cx >= c.width || c.cy < 0.0 || c.cy >= c.height)
        throw ValidationError("camera principal point outside image");
}

template <typename T>
struct Projected {
    T u{}, v{};
    bool valid = false;
};

constexpr double kMinDepth = 1e-6;

template <typename T>
Projected<T> project(const Camera& cam, const Vec3<T>& p) {
    Projected<T> out;
    if (value_of(p.z) <= kMinDepth) return out;  // at or behind camera
    out.u = p.x * cam.fx / p.z + cam.cx;
    out.v = p.y * cam.fy / p.z + cam.cy;
    out.valid = true;
    return out;
}

// ---------------------------------------------------------------------------
// Body model asset

struct BodyModelAsset {
    int schema_version = 1;
    int joint_count = 0;   // J, root included
    int region_count = 0;  // R

    std::vector<std::string> joint_names;
    std::vector<int> parent_index;               // parent_index[0] == -1
    std::vector<Vec3d> rest_offsets_adult;       // parent-relative, meters
    std::vector<Vec3d> rest_offsets_infant;
    std::vector<std::array<double, kShapeDims>> shape_basis;  // bone-length sensitivity rows

    struct Capsule {
        int joint = 0;  // bone identified by its child joint
        double radius = 0.05;
        double radius_shape_sensitivity = 0.0;  // pairs with beta[0]
    };
    std::vector<Capsule> capsules;

    struct SurfaceSample {
        int bone = 0;       // child joint of the carrying bone
        double axial = 0.0; // fraction along the bone (may exceed 1 for cap extensions)
        double angle = 0.0; // radians around the bone axis
        int region = 0;     // 1..R
    };
    std::vector<SurfaceSample> surface_samples;

    struct KeypointDef {
        int keypoint = 0;
        std::string name;
        int joint = 0;
        Laterality side = Laterality::center;
    };
    std::vector<KeypointDef> keypoint_map;

    std::map<std::string, std::vector<int>> kp_part_map;  // part name -> keypoint ids
    PartRegionTable part_regions;

    // Derived at load time.
    std::vector<double> radius_by_joint;     // indexed by child joint
    std::vector<double> radius_sens_by_joint;
    std::vector<std::vector<int>> region_sample_index;  // region id -> sample indices

    const KeypointDef& keypoint(int id) const {
        for (const auto& k : keypoint_map)
            if (k.keypoint == id) return k;
        throw ValidationError("keypoint id " + std::to_string(id) + " not in keypoint_map");
    }
};

struct BodyParams {
    std::array<Vec3d, kArticulatedJoints> theta{};  // axis-angle per articulated joint
    std::array<double, kShapeDims> beta{};
    double sigma = 0.0;  // 0 adult .. 1 infant
    Vec3d gamma{};       // root translation
    Vec3d phi{};         // global rotation, axis-angle
};

inline void canonicalize(BodyParams& p) {
    for (auto& t : p.theta) t = canonicalize_axis_angle(t);
    p.phi = canonicalize_axis_angle(p.phi);
}

inline void validate_params(const BodyParams& p) {
    if (p.sigma < 0.0 || p.sigma > 1.0)
        throw ValidationError("sigma must lie in [0, 1], got " + std::to_string(p.sigma));
}

// Scalar-generic mirror of BodyParams used on autodiff paths. sigma stays a
// plain double: it is never optimized.
template <typename T>
struct BodyParamsT {
    std::array<Vec3<T>, kArticulatedJoints> theta{};
    std::array<T, kShapeDims> beta{};
    double sigma = 0.0;
    Vec3<T> gamma{};
    Vec3<T> phi{};

    static BodyParamsT lift(const BodyParams& p) {
        BodyParamsT out;
        for (int j = 0; j < kArticulatedJoints; ++j) out.theta[j] = Vec3<T>::from(p.theta[j]);
        for (int i = 0; i < kShapeDims; ++i) out.beta[i] = T(p.beta[i]);
        out.sigma = p.sigma;
        out.gamma = Vec3<T>::from(p.gamma);
        out.phi = Vec3<T>::from(p.phi);
        return out;
    }
};

template <typename T>
struct PosedBodyT {
    struct Sample {
        int region = 0;
        Vec3<T> position;
    };
    struct CapsuleSeg {
        Vec3<T> a, b;
        T radius{};
    };
    std::vector<Vec3<T>> joints;
    std::vector<Sample> surface;
    std::vector<CapsuleSeg> capsules;  // one per non-root joint, ordered by child joint
};

using PosedBody = PosedBodyT<double>;

namespace detail {

// Stable orthonormal frame around a bone direction, from rest geometry.
inline void bone_frame(const Vec3d& dir, Vec3d& n1, Vec3d& n2) {
    const Vec3d ref = std::abs(dir.x) < 0.9 ? Vec3d{1, 0, 0} : Vec3d{0, 0, 1};
    n1 = dir.cross(ref);
    const double n = std::sqrt(n1.squared_norm());
    n1 = n1 * (1.0 / n);
    n2 = dir.cross(n1);
}

}  // namespace detail

// Poses the body: age-interpolated rest offsets, shape-scaled bone lengths
// (clamped at kMinBoneScale), rotations composed root to leaf, surface
// samples carried rigidly on their bones.
template <typename T>
PosedBodyT<T> forward_kinematics(const BodyModelAsset& model, const BodyParamsT<T>& params) {
    const int joints = model.joint_count;
    const double sigma = params.sigma;

    std::vector<Vec3d> rest_dir(joints);
    std::vector<double> rest_len(joints, 0.0);
    std::vector<T> bone_len(joints, T(0.0));
    for (int j = 1; j < joints; ++j) {
        const Vec3d rest = model.rest_offsets_adult[j] * (1.0 - sigma) +
                           model.rest_offsets_infant[j] * sigma;
        rest_len[j] = std::sqrt(rest.squared_norm());
        rest_dir[j] = rest * (1.0 / rest_len[j]);
        T scale(1.0);
        for (int i = 0; i < kShapeDims; ++i) scale += params.beta[i] * model.shape_basis[j][i];
        if (value_of(scale) < kMinBoneScale) scale = T(kMinBoneScale);
        bone_len[j] = scale * rest_len[j];
    }

    std::vector<Vec3<T>> pos(joints);
    std::vector<Mat3<T>> rot(joints);
    pos[0] = params.gamma;
    rot[0] = rodrigues(params.phi);
    for (int j = 1; j < joints; ++j) {
        const int par = model.parent_index[j];
        pos[j] = pos[par] + rot[par] * (Vec3<T>::from(rest_dir[j]) * bone_len[j]);
        rot[j] = rot[par] * rodrigues(params.theta[j - 1]);
    }

    PosedBodyT<T> out;
    out.joints = pos;

    out.capsules.reserve(joints - 1);
    for (int j = 1; j < joints; ++j) {
        T r = T(model.radius_by_joint[j]);
        if (model.radius_sens_by_joint[j] != 0.0) {
            T s = T(1.0) + params.beta[0] * model.radius_sens_by_joint[j];
            if (value_of(s) < kMinBoneScale) s = T(kMinBoneScale);
            r = r * s;
        }
        out.capsules.push_back({pos[model.parent_index[j]], pos[j], r});
    }

    out.surface.reserve(model.surface_samples.size());
    for (const auto& s : model.surface_samples) {
        const int j = s.bone;
        const int par = model.parent_index[j];
        Vec3d n1, n2;
        detail::bone_frame(rest_dir[j], n1, n2);
        const Vec3d radial = n1 * std::cos(s.angle) + n2 * std::sin(s.angle);
        const T r = out.capsules[j - 1].radius;
        const Vec3<T> local = Vec3<T>::from(rest_dir[j]) * (bone_len[j] * s.axial) +
                              Vec3<T>::from(radial) * r;
        out.surface.push_back({s.region, pos[par] + rot[par] * local});
    }
    return out;
}

inline PosedBody forward_kinematics(const BodyModelAsset& model, const BodyParams& params) {
    return forward_kinematics<double>(model, BodyParamsT<double>::lift(params));
}

// ---------------------------------------------------------------------------
// Model keypoints (bridge to the 2D estimator convention)

template <typename T>
struct ModelKeypointT {
    int keypoint = 0;
    Vec3<T> position;
    Laterality side = Laterality::center;
};

using ModelKeypoint = ModelKeypointT<double>;

template <typename T>
std::vector<ModelKeypointT<T>> model_keypoints(const PosedBodyT<T>& posed,
                                               const BodyModelAsset& model) {
    std::vector<ModelKeypointT<T>> out;
    out.reserve(model.keypoint_map.size());
    for (const auto& k : model.keypoint_map)
        out.push_back({k.keypoint, posed.joints[k.joint], k.side});
    return out;
}

// ---------------------------------------------------------------------------
// Asset JSON I/O and validation

namespace detail {

inline Vec3d vec3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void validate_asset(const BodyModelAsset& a) {
    const int joints = a.joint_count;
    if (joints < 2) throw ValidationError("asset needs at least a root and one bone");
    if (static_cast<int>(a.parent_index.size()) != joints ||
        static_cast<int>(a.rest_offsets_adult.size()) != joints ||
        static_cast<int>(a.rest_offsets_infant.size()) != joints ||
        static_cast<int>(a.shape_basis.size()) != joints)
        throw ValidationError("per-joint arrays disagree with joint_count");
    if (joints != kArticulatedJoints + 1)
        throw ValidationError("asset must define " + std::to_string(kArticulatedJoints + 1) +
                              " joints to match the 21x3 pose parameterization");

    if (a.parent_index[0] != -1) throw ValidationError("skeleton not a tree: joint 0 must be the root");
    for (int j = 1; j < joints; ++j) {
        const int p = a.parent_index[j];
        if (p < 0 || p >= j) throw ValidationError("skeleton not a tree");
        if (a.rest_offsets_adult[j].squared_norm() < 1e-12 ||
            a.rest_offsets_infant[j].squared_norm() < 1e-12)
            throw ValidationError("joint " + std::to_string(j) + " has a zero-length rest offset");
    }

    std::vector<char> has_capsule(joints, 0);
    for (const auto& c : a.capsules) {
        if (c.joint < 1 || c.joint >= joints)
            throw ValidationError("capsule references joint " + std::to_string(c.joint));
        if (c.radius <= 0.0) throw ValidationError("capsule radius must be positive");
        has_capsule[c.joint] = 1;
    }
    for (int j = 1; j < joints; ++j)
        if (!has_capsule[j]) throw ValidationError("bone " + std::to_string(j) + " has no capsule");

    std::vector<char> region_seen(a.region_count + 1, 0);
    for (const auto& s : a.surface_samples) {
        if (s.bone < 1 || s.bone >= joints)
            throw ValidationError("surface sample references bone " + std::to_string(s.bone));
        if (s.region < 1 || s.region > a.region_count)
            throw ValidationError("surface sample region " + std::to_string(s.region) +
                                  " out of range");
        region_seen[s.region] = 1;
    }
    for (int r = 1; r <= a.region_count; ++r)
        if (!region_seen[r]) throw ValidationError("region " + std::to_string(r) + " unassigned");

    for (const auto& k : a.keypoint_map)
        if (k.joint < 0 || k.joint >= joints)
            throw ValidationError("keypoint '" + k.name + "' maps to invalid joint");
    for (const auto& [part, ids] : a.kp_part_map) {
        if (!is_vocabulary_part(part))
            throw ValidationError("kp_part_map part '" + part + "' not in vocabulary");
        for (int id : ids) a.keypoint(id);  // throws if unknown
    }

    validate_part_region_table(a.part_regions);
    if (a.part_regions.region_count != a.region_count)
        throw ValidationError("part_regions region count disagrees with asset");
}

// Rest-pose mirror symmetry about the sagittal (x = 0) plane, for both
// keypoints and lateral part regions.
inline void validate_symmetry(const BodyModelAsset& a) {
    const PosedBody rest = forward_kinematics(a, BodyParams{});
    constexpr double tol = 1e-6;

    auto mirrored = [](Vec3d p) { p.x = -p.x; return p; };

    for (const auto& k : a.keypoint_map) {
        if (k.side != Laterality::left) continue;
        if (k.name.rfind("left_", 0) != 0) continue;
        const std::string twin = "right_" + k.name.substr(5);
        for (const auto& k2 : a.keypoint_map) {
            if (k2.name != twin) continue;
            const Vec3d d = mirrored(rest.joints[k.joint]) - rest.joints[k2.joint];
            if (d.squared_norm() > tol * tol)
                throw ValidationError("keypoints '" + k.name + "'/'" + twin +
                                      "' are not mirror-symmetric in the rest pose");
        }
    }

    auto region_points = [&](const std::vector<int>& regions) {
        std::vector<Vec3d> pts;
        for (int r : regions)
            for (int idx : a.region_sample_index[r]) pts.push_back(rest.surface[idx].position);
        return pts;
    };
    for (const auto& [key, regions] : a.part_regions.entries) {
        if (key.second != Side::left) continue;
        const auto* right = a.part_regions.find(key.first, Side::right);
        if (!right) continue;
        const auto lp = region_points(regions);
        const auto rp = region_points(*right);
        for (const auto& p : lp) {
            double best = 1e30;
            const Vec3d q = mirrored(p);
            for (const auto& r : rp) best = std::min(best, (q - r).squared_norm());
            if (best > tol * tol)
                throw ValidationError("part '" + key.first +
                                      "' surface regions are not mirror-symmetric");
        }
    }
}

}  // namespace detail

inline PartRegionTable part_region_table_from_json(const nlohmann::json& j, int region_count) {
    PartRegionTable table;
    table.region_count = region_count;
    for (const auto& e : j) {
        const std::string part = e.at("part").get<std::string>();
        const Side side = side_from_string(e.value("side", "none"));
        std::vector<int> regions = e.at("regions").get<std::vector<int>>();
        table.entries[{part, side}] = std::move(regions);
    }
    return table;
}

inline BodyModelAsset body_asset_from_json(const nlohmann::json& j) {
    BodyModelAsset a;
    try {
        a.schema_version = j.at("schema_version").get<int>();
        if (a.schema_version != 1)
            throw ValidationError("unsupported body asset schema_version " +
                                  std::to_string(a.schema_version));
        a.joint_count = j.at("joint_count").get<int>();
        a.region_count = j.at("region_count").get<int>();
        a.joint_names = j.value("joint_names", std::vector<std::string>{});
        a.parent_index = j.at("parent_index").get<std::vector<int>>();
        for (const auto& v : j.at("rest_offsets_adult"))
            a.rest_offsets_adult.push_back(detail::vec3_from_json(v));
        for (const auto& v : j.at("rest_offsets_infant"))
            a.rest_offsets_infant.push_back(detail::vec3_from_json(v));
        for (const auto& row : j.at("shape_basis")) {
            std::array<double, kShapeDims> r{};
            if (row.size() != kShapeDims) throw ParseError("shape_basis rows must have 10 entries");
            for (int i = 0; i < kShapeDims; ++i) r[i] = row[i].get<double>();
            a.shape_basis.push_back(r);
        }
        for (const auto& c : j.at("capsules"))
            a.capsules.push_back({c.at("joint").get<int>(), c.at("radius").get<double>(),
                                  c.value("radius_shape_sensitivity", 0.0)});
        for (const auto& s : j.at("surface_samples"))
            a.surface_samples.push_back({s.at("bone").get<int>(), s.at("axial").get<double>(),
                                         s.at("angle").get<double>(), s.at("region").get<int>()});
        for (const auto& k : j.at("keypoint_map"))
            a.keypoint_map.push_back({k.at("keypoint").get<int>(),
                                      k.value("name", std::string{}), k.at("joint").get<int>(),
                                      laterality_from_string(k.at("side").get<std::string>())});
        if (j.contains("kp_part_map"))
            for (const auto& [part, ids] : j.at("kp_part_map").items())
                a.kp_part_map[part] = ids.get<std::vector<int>>();
        a.part_regions = part_region_table_from_json(j.at("part_regions"), a.region_count);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("body asset parse error: ") + e.what());
    }

    a.radius_by_joint.assign(a.joint_count, 0.05);
    a.radius_sens_by_joint.assign(a.joint_count, 0.0);
    for (const auto& c : a.capsules) {
        if (c.joint >= 0 && c.joint < a.joint_count) {
            a.radius_by_joint[c.joint] = c.radius;
            a.radius_sens_by_joint[c.joint] = c.radius_shape_sensitivity;
        }
    }
    a.region_sample_index.assign(a.region_count + 1, {});
    for (size_t i = 0; i < a.surface_samples.size(); ++i) {
        const int r = a.surface_samples[i].region;
        if (r >= 1 && r <= a.region_count) a.region_sample_index[r].push_back(static_cast<int>(i));
    }

    detail::validate_asset(a);
    detail::validate_symmetry(a);
    return a;
}

inline BodyModelAsset load_body_asset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open body asset '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("body asset '" + path + "': " + e.what());
    }
    return body_asset_from_json(j);
}

}  // namespace apu
