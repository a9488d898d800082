#include <apu/body.hpp>
#include <apu/dual.hpp>
#include <apu/gmm.hpp>
#include <apu/losses.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <random>

using namespace apu;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

const BodyModelAsset& asset() {
    static BodyModelAsset a = load_body_asset(std::string(APU_ASSET_DIR) + "/default_body.json");
    return a;
}

BodyParams random_params(unsigned seed, double theta_scale = 0.3) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    BodyParams p;
    for (auto& t : p.theta) t = {theta_scale * g(rng), theta_scale * g(rng), theta_scale * g(rng)};
    for (auto& b : p.beta) b = 0.3 * g(rng);
    p.sigma = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    p.gamma = {0.5 * g(rng), 0.5 * g(rng), 3.0 + 0.3 * g(rng)};
    p.phi = {0.4 * g(rng), 0.4 * g(rng), 0.4 * g(rng)};
    return p;
}

// Keypoints placed exactly at the model's projections, confidence 1.
Keypoints2D exact_keypoints(const BodyParams& p, const Camera& cam) {
    const auto posed = forward_kinematics(asset(), p);
    int max_id = 0;
    for (const auto& k : asset().keypoint_map) max_id = std::max(max_id, k.keypoint);
    Keypoints2D kps;
    kps.points.assign(max_id + 1, {});
    for (const auto& mk : model_keypoints(posed, asset())) {
        const auto proj = project(cam, mk.position);
        REQUIRE(proj.valid);
        kps.points[mk.keypoint] = {proj.u, proj.v, 1.0, mk.side};
    }
    return kps;
}

// Independent path to the reprojection sum: Eigen transform-chain forward
// kinematics, manual pinhole projection, manual robustifier.
double reprojection_oracle(const BodyParams& p, const Keypoints2D& kps, const Camera& cam) {
    auto ev = [](const Vec3d& v) { return Eigen::Vector3d{v.x, v.y, v.z}; };
    auto rot = [&](const Vec3d& w) {
        const double angle = std::sqrt(w.squared_norm());
        Eigen::Isometry3d out = Eigen::Isometry3d::Identity();
        if (angle > 0.0)
            out.linear() = Eigen::AngleAxisd(angle, ev(w).normalized()).toRotationMatrix();
        return out;
    };
    const auto& a = asset();
    std::vector<Eigen::Isometry3d> X(a.joint_count);
    X[0] = Eigen::Translation3d(ev(p.gamma)) * rot(p.phi);
    for (int j = 1; j < a.joint_count; ++j) {
        const Eigen::Vector3d rest = (1.0 - p.sigma) * ev(a.rest_offsets_adult[j]) +
                                     p.sigma * ev(a.rest_offsets_infant[j]);
        double scale = 1.0;
        for (int i = 0; i < kShapeDims; ++i) scale += a.shape_basis[j][i] * p.beta[i];
        scale = std::max(scale, kMinBoneScale);
        X[j] = X[a.parent_index[j]] * Eigen::Translation3d(rest * scale) * rot(p.theta[j - 1]);
    }
    double sum = 0.0;
    for (const auto& k : a.keypoint_map) {
        if (k.keypoint >= static_cast<int>(kps.points.size())) continue;
        const auto& det = kps.points[k.keypoint];
        if (det.confidence <= 0.0) continue;
        const Eigen::Vector3d pos = X[k.joint].translation();
        if (pos.z() <= kMinDepth) continue;
        const double du = pos.x() * cam.fx / pos.z() + cam.cx - det.x;
        const double dv = pos.y() * cam.fy / pos.z() + cam.cy - det.y;
        const double sq = du * du + dv * dv;
        sum += det.confidence * sq / (sq + kReprojKernelPx * kReprojKernelPx);
    }
    return sum;
}

double brute_min_sq(const PosedBody& pa, const PosedBody& pb, int region_a, int region_b) {
    double best = std::numeric_limits<double>::infinity();
    for (int sa : asset().region_sample_index[region_a])
        for (int sb : asset().region_sample_index[region_b])
            best = std::min(best, (pa.surface[sa].position - pb.surface[sb].position).squared_norm());
    return best;
}

// A small hand-specified mixture for closed-form and gradient tests.
GmmPrior toy_gmm(unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    GmmPrior prior;
    prior.components = 2;
    prior.weights = {0.4, 0.6};
    for (int m = 0; m < 2; ++m) {
        PoseVec mu{}, var{};
        for (int d = 0; d < kPoseDims; ++d) {
            mu[d] = 0.3 * g(rng);
            var[d] = 0.5 + 0.4 * std::abs(g(rng));
        }
        prior.means.push_back(mu);
        prior.variances.push_back(var);
    }
    prior.validate();
    return prior;
}

// Packed parameter layout used for finite differencing: per person
// [phi(3), theta(63), beta(10), gamma(3)], person a then person b.
constexpr int kPerPerson = 79;
constexpr int kPairDims = 2 * kPerPerson;

std::array<double, kPerPerson> pack(const BodyParams& p) {
    std::array<double, kPerPerson> v{};
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
    return v;
}

BodyParams unpack(const std::array<double, kPerPerson>& v, double sigma) {
    BodyParams p;
    p.phi = {v[0], v[1], v[2]};
    for (int j = 0; j < kArticulatedJoints; ++j)
        p.theta[j] = {v[3 + 3 * j + 0], v[3 + 3 * j + 1], v[3 + 3 * j + 2]};
    for (int i = 0; i < kShapeDims; ++i) p.beta[i] = v[66 + i];
    p.gamma = {v[76], v[77], v[78]};
    p.sigma = sigma;
    return p;
}

BodyParamsT<Dual<kPairDims>> lift_seeded(const BodyParams& p, int base) {
    auto out = BodyParamsT<Dual<kPairDims>>::lift(p);
    out.phi.x.d[base + 0] = 1.0;
    out.phi.y.d[base + 1] = 1.0;
    out.phi.z.d[base + 2] = 1.0;
    for (int j = 0; j < kArticulatedJoints; ++j) {
        out.theta[j].x.d[base + 3 + 3 * j + 0] = 1.0;
        out.theta[j].y.d[base + 3 + 3 * j + 1] = 1.0;
        out.theta[j].z.d[base + 3 + 3 * j + 2] = 1.0;
    }
    for (int i = 0; i < kShapeDims; ++i) out.beta[i].d[base + 66 + i] = 1.0;
    out.gamma.x.d[base + 76] = 1.0;
    out.gamma.y.d[base + 77] = 1.0;
    out.gamma.z.d[base + 78] = 1.0;
    return out;
}

struct FitScene {
    BodyParams pa, pb;
    Keypoints2D kps_a, kps_b;
    Camera camera;
    ContactMap c;
    SoftWeights w;
    std::array<Vec3d, kArticulatedJoints> init_a{}, init_b{};
};

FitScene random_scene(unsigned seed, int active_cells = 3) {
    std::mt19937 rng(seed);
    FitScene s;
    s.pa = random_params(seed * 7 + 1);
    s.pb = random_params(seed * 7 + 2);
    s.pb.gamma.x += 1.2;  // keep the pair side by side, both in front of the camera
    s.kps_a = exact_keypoints(random_params(seed * 7 + 3), s.camera);
    s.kps_b = exact_keypoints(random_params(seed * 7 + 4), s.camera);
    std::uniform_real_distribution<double> conf(0.2, 1.0);
    for (auto& kp : s.kps_a.points) kp.confidence = conf(rng);
    for (auto& kp : s.kps_b.points) kp.confidence = conf(rng);
    s.c = ContactMap(asset().region_count);
    s.w = SoftWeights(asset().region_count);
    std::uniform_int_distribution<int> region(1, asset().region_count);
    for (int k = 0; k < active_cells; ++k) {
        const int i = region(rng), j = region(rng);
        s.c.set(i, j, 1);
        s.w.set(i, j, conf(rng));
    }
    s.init_a = random_params(seed * 7 + 5).theta;
    s.init_b = random_params(seed * 7 + 6).theta;
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Reprojection

TEST_CASE("loss weight defaults are pinned and validated") {
    const LossWeights w;
    CHECK(w.lambda_c == 1.0);
    CHECK(w.lambda_j == 0.02);
    CHECK(w.lambda_gmm == 0.01);
    CHECK(w.lambda_beta == 0.01);
    CHECK(w.lambda_theta_bar == 0.1);
    CHECK(w.lambda_p == 1.0);
    CHECK_NOTHROW(w.validate());
    LossWeights bad;
    bad.lambda_p = -0.1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("exact reprojection gives zero loss") {
    const Camera cam;
    const BodyParams pa = random_params(11), pb = random_params(12);
    const auto posed_a = forward_kinematics(asset(), pa);
    const auto posed_b = forward_kinematics(asset(), pb);
    const double loss = reprojection_loss(posed_a, posed_b, exact_keypoints(pa, cam),
                                          exact_keypoints(pb, cam), cam, asset());
    CHECK(loss == Approx(0.0).margin(1e-18));
}

TEST_CASE("a single 50 px residual at the kernel scale scores one half") {
    const Camera cam;
    const BodyParams pa = random_params(21), pb = random_params(22);
    Keypoints2D kps_a = exact_keypoints(pa, cam);
    Keypoints2D kps_b = exact_keypoints(pb, cam);
    // Person a: one keypoint offset by exactly 50 px (3-4-5 triangle), rest ignored.
    for (auto& kp : kps_a.points) kp.confidence = 0.0;
    kps_a.points[0].confidence = 1.0;
    kps_a.points[0].x += 30.0;
    kps_a.points[0].y += 40.0;
    // Person b: one exact keypoint, contributing zero.
    for (auto& kp : kps_b.points) kp.confidence = 0.0;
    kps_b.points[0].confidence = 1.0;

    const auto posed_a = forward_kinematics(asset(), pa);
    const auto posed_b = forward_kinematics(asset(), pb);
    const double loss = reprojection_loss(posed_a, posed_b, kps_a, kps_b, cam, asset());
    CHECK(loss == Approx(0.5).margin(1e-12));

    SECTION("confidence scales the contribution linearly") {
        kps_a.points[0].confidence = 0.25;
        CHECK(reprojection_loss(posed_a, posed_b, kps_a, kps_b, cam, asset()) ==
              Approx(0.125).margin(1e-12));
    }
}

TEST_CASE("a person with no valid keypoints is unconstrained") {
    const Camera cam;
    const BodyParams pa = random_params(31), pb = random_params(32);
    Keypoints2D kps_a = exact_keypoints(pa, cam);
    Keypoints2D kps_b = exact_keypoints(pb, cam);
    const auto posed_a = forward_kinematics(asset(), pa);
    const auto posed_b = forward_kinematics(asset(), pb);

    SECTION("all confidences zero") {
        for (auto& kp : kps_b.points) kp.confidence = 0.0;
        CHECK_THROWS_WITH(reprojection_loss(posed_a, posed_b, kps_a, kps_b, cam, asset()),
                          ContainsSubstring("unconstrained person"));
    }
    SECTION("all model keypoints behind the camera") {
        BodyParams behind = pa;
        behind.gamma = {0.0, 0.0, -3.0};
        const auto posed_behind = forward_kinematics(asset(), behind);
        CHECK_THROWS_WITH(reprojection_loss(posed_behind, posed_b, kps_a, kps_b, cam, asset()),
                          ContainsSubstring("unconstrained person"));
    }
}

TEST_CASE("reprojection loss matches the Eigen oracle on random configurations") {
    const Camera cam;
    for (unsigned seed : {41u, 42u, 43u, 44u, 45u}) {
        const BodyParams pa = random_params(seed), pb = random_params(seed + 100);
        Keypoints2D kps_a = exact_keypoints(random_params(seed + 200), cam);
        Keypoints2D kps_b = exact_keypoints(random_params(seed + 300), cam);
        std::mt19937 rng(seed);
        std::uniform_real_distribution<double> conf(0.0, 1.0);
        for (auto& kp : kps_a.points) kp.confidence = conf(rng);
        for (auto& kp : kps_b.points) kp.confidence = conf(rng);

        const auto posed_a = forward_kinematics(asset(), pa);
        const auto posed_b = forward_kinematics(asset(), pb);
        const double loss = reprojection_loss(posed_a, posed_b, kps_a, kps_b, cam, asset());
        const double expected =
            reprojection_oracle(pa, kps_a, cam) + reprojection_oracle(pb, kps_b, cam);
        CHECK(loss == Approx(expected).margin(1e-10));
    }
}

// ---------------------------------------------------------------------------
// Contact

TEST_CASE("empty contact map costs nothing") {
    const auto posed_a = forward_kinematics(asset(), random_params(51));
    const auto posed_b = forward_kinematics(asset(), random_params(52));
    const ContactMap c(asset().region_count);
    const SoftWeights w(asset().region_count);
    CHECK(contact_loss(posed_a, posed_b, c, w, asset()) == 0.0);
}

TEST_CASE("coincident regions in contact cost nothing") {
    const BodyParams p = random_params(53);
    const auto posed = forward_kinematics(asset(), p);
    ContactMap c(asset().region_count);
    SoftWeights w(asset().region_count);
    c.set(5, 5, 1);
    w.set(5, 5, 1.0);
    CHECK(contact_loss(posed, posed, c, w, asset()) == 0.0);
}

TEST_CASE("an active cell at one meter with weight 0.8 costs 0.8") {
    // Hand-built geometry: two regions of three samples each, with the
    // closest cross-body pair exactly one meter apart.
    BodyModelAsset tiny;
    tiny.region_count = 2;
    tiny.region_sample_index = {{}, {0, 1, 2}, {3, 4, 5}};

    PosedBody a;
    a.surface = {{1, {0.0, 0.0, 0.0}}, {1, {0.3, 0.0, 0.0}}, {1, {0.0, 0.3, 0.0}},
                 {2, {9.0, 9.0, 9.0}}, {2, {9.0, 9.0, 8.0}}, {2, {8.0, 9.0, 9.0}}};
    PosedBody b;
    b.surface = {{1, {0.0, 0.0, 1.0}}, {1, {5.0, 5.0, 5.0}}, {1, {6.0, 6.0, 6.0}},
                 {2, {-9.0, -9.0, -9.0}}, {2, {-9.0, -9.0, -8.0}}, {2, {-8.0, -9.0, -9.0}}};

    ContactMap c(2);
    SoftWeights w(2);
    c.set(1, 1, 1);
    w.set(1, 1, 0.8);
    CHECK(contact_loss(a, b, c, w, tiny) == Approx(0.8).margin(1e-15));

    SECTION("the weight scales the squared distance linearly") {
        w.set(1, 1, 0.35);
        CHECK(contact_loss(a, b, c, w, tiny) == Approx(0.35).margin(1e-15));
    }
}

TEST_CASE("contact loss matches the brute-force sample-pair oracle") {
    for (unsigned seed : {61u, 62u, 63u}) {
        std::mt19937 rng(seed);
        const auto posed_a = forward_kinematics(asset(), random_params(seed));
        const auto posed_b = forward_kinematics(asset(), random_params(seed + 7));
        ContactMap c(asset().region_count);
        SoftWeights w(asset().region_count);
        std::uniform_int_distribution<int> region(1, asset().region_count);
        std::uniform_real_distribution<double> weight(0.1, 1.0);
        double expected = 0.0;
        for (int k = 0; k < 10; ++k) {
            const int i = region(rng), j = region(rng);
            if (c.at(i, j)) continue;
            const double wij = weight(rng);
            c.set(i, j, 1);
            w.set(i, j, wij);
            expected += wij * brute_min_sq(posed_a, posed_b, i, j);
        }
        CHECK(contact_loss(posed_a, posed_b, c, w, asset()) == Approx(expected).margin(1e-12));
    }
}

TEST_CASE("contact loss is transpose symmetric") {
    const auto posed_a = forward_kinematics(asset(), random_params(71));
    const auto posed_b = forward_kinematics(asset(), random_params(72));
    std::mt19937 rng(73);
    ContactMap c(asset().region_count);
    SoftWeights w(asset().region_count);
    std::uniform_int_distribution<int> region(1, asset().region_count);
    std::uniform_real_distribution<double> weight(0.1, 1.0);
    for (int k = 0; k < 8; ++k) {
        const int i = region(rng), j = region(rng);
        c.set(i, j, 1);
        w.set(i, j, weight(rng));
    }
    const auto [ct, wt] = swap_persons(c, w);
    CHECK(contact_loss(posed_a, posed_b, c, w, asset()) ==
          Approx(contact_loss(posed_b, posed_a, ct, wt, asset())).margin(1e-15));
}

TEST_CASE("contact map dimension mismatch is rejected") {
    const auto posed = forward_kinematics(asset(), BodyParams{});
    const ContactMap c(asset().region_count + 1);
    const SoftWeights w(asset().region_count + 1);
    CHECK_THROWS_AS(contact_loss(posed, posed, c, w, asset()), ValidationError);
}

// ---------------------------------------------------------------------------
// Pose prior (GMM)

TEST_CASE("standard normal mixture at the origin gives the closed-form NLL") {
    GmmPrior prior;
    prior.components = 1;
    prior.weights = {1.0};
    prior.means.push_back(PoseVec{});
    PoseVec ones;
    ones.fill(1.0);
    prior.variances.push_back(ones);
    prior.validate();

    std::array<double, kPoseDims> theta{};
    CHECK(gmm_loss(prior, theta) == Approx(0.5 * kPoseDims * std::log(2.0 * M_PI)).margin(1e-10));

    SECTION("the mean is the minimizer") {
        const double at_mean = gmm_loss(prior, theta);
        std::mt19937 rng(81);
        std::normal_distribution<double> g(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            auto perturbed = theta;
            for (auto& t : perturbed) t += 0.3 * g(rng);
            CHECK(gmm_loss(prior, perturbed) > at_mean);
        }
    }
}

TEST_CASE("gmm loss matches a direct density evaluation") {
    const GmmPrior prior = toy_gmm(91);
    std::mt19937 rng(92);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        std::array<double, kPoseDims> theta;
        for (auto& t : theta) t = 0.5 * g(rng);
        long double density = 0.0;
        for (int m = 0; m < prior.components; ++m) {
            long double logp = std::log((long double)prior.weights[m]);
            for (int d = 0; d < kPoseDims; ++d) {
                const long double c = theta[d] - prior.means[m][d];
                logp += -0.5L * (std::log(2.0L * M_PI * prior.variances[m][d]) +
                                 c * c / prior.variances[m][d]);
            }
            density += std::exp(logp);
        }
        const double expected = static_cast<double>(-std::log(density));
        CHECK(gmm_loss(prior, theta) == Approx(expected).margin(1e-9));
    }
}

TEST_CASE("em fitting recovers a well-separated two-component mixture") {
    std::mt19937 rng(101);
    std::normal_distribution<double> g(0.0, 1.0);
    PoseVec mu1{}, mu2{};
    for (int d = 0; d < 6; ++d) {
        mu1[d] = 0.8;
        mu2[d] = -0.8;
    }
    std::vector<PoseVec> library;
    for (int i = 0; i < 600; ++i) {
        const PoseVec& mu = (i % 2 == 0) ? mu1 : mu2;
        PoseVec p;
        for (int d = 0; d < kPoseDims; ++d) p[d] = mu[d] + 0.05 * g(rng);
        library.push_back(p);
    }
    const GmmPrior prior = fit_gmm(library, 2, 0);

    auto dist_to = [](const PoseVec& a, const PoseVec& b) {
        double s = 0.0;
        for (int d = 0; d < kPoseDims; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
        return std::sqrt(s);
    };
    const double d00 = dist_to(prior.means[0], mu1), d01 = dist_to(prior.means[0], mu2);
    const PoseVec& match0 = d00 < d01 ? mu1 : mu2;
    const PoseVec& match1 = d00 < d01 ? mu2 : mu1;
    CHECK(dist_to(prior.means[0], match0) < 0.1);
    CHECK(dist_to(prior.means[1], match1) < 0.1);
    CHECK(prior.weights[0] == Approx(0.5).margin(0.1));

    SECTION("the fitted prior scores library poses far better than distant ones") {
        std::array<double, kPoseDims> near{}, far{};
        for (int d = 0; d < kPoseDims; ++d) {
            near[d] = mu1[d];
            far[d] = 3.0;
        }
        CHECK(gmm_loss(prior, near) < gmm_loss(prior, far));
    }
}

TEST_CASE("a degenerate dimension floors the variance instead of failing") {
    std::mt19937 rng(111);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<PoseVec> library;
    for (int i = 0; i < 80; ++i) {
        PoseVec p;
        for (int d = 0; d < kPoseDims; ++d) p[d] = 0.4 * g(rng);
        p[5] = 0.123;  // constant dimension: zero sample variance
        library.push_back(p);
    }
    GmmPrior prior;
    REQUIRE_NOTHROW(prior = fit_gmm(library, 2, 3));
    CHECK(prior.floor_hits > 0);
    for (const auto& var : prior.variances) CHECK(var[5] == kGmmVarianceFloor);
}

TEST_CASE("an undersized pose library is rejected") {
    const std::vector<PoseVec> library(19, PoseVec{});
    CHECK_THROWS_WITH(fit_gmm(library, 2, 0), ContainsSubstring("pose library too small"));
}

// ---------------------------------------------------------------------------
// Shape prior and pose deviation

TEST_CASE("shape prior is the squared norm of beta") {
    std::array<double, kShapeDims> beta{};
    CHECK(shape_prior(beta) == 0.0);
    beta[3] = 2.0;
    CHECK(shape_prior(beta) == 4.0);
    beta[7] = -1.5;
    CHECK(shape_prior(beta) == Approx(4.0 + 2.25));
}

TEST_CASE("pose deviation is the squared distance to the initial pose") {
    const BodyParams p = random_params(121);
    auto theta = BodyParamsT<double>::lift(p).theta;
    CHECK(pose_deviation(theta, p.theta) == 0.0);

    const auto init = random_params(122).theta;
    double expected = 0.0;
    for (int j = 0; j < kArticulatedJoints; ++j) expected += (p.theta[j] - init[j]).squared_norm();
    CHECK(pose_deviation(theta, init) == Approx(expected).margin(1e-14));
}

// ---------------------------------------------------------------------------
// Segment distance and penetration

TEST_CASE("segment distance reproduces known geometric cases") {
    const double tol = 1e-9;
    // Parallel, offset in z.
    CHECK(segment_distance<double>({0, 0, 0}, {1, 0, 0}, {0, 0, 0.06}, {1, 0, 0.06}) ==
          Approx(0.06).margin(tol));
    // Perpendicular crossing, offset in z.
    CHECK(segment_distance<double>({-1, 0, 0}, {1, 0, 0}, {0, -1, 0.5}, {0, 1, 0.5}) ==
          Approx(0.5).margin(tol));
    // Disjoint along a line: endpoint-to-endpoint.
    CHECK(segment_distance<double>({0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 1, 0}) ==
          Approx(1.0).margin(tol));
    // Degenerate: point vs point.
    CHECK(segment_distance<double>({0, 0, 0}, {0, 0, 0}, {3, 4, 0}, {3, 4, 0}) ==
          Approx(5.0).margin(tol));
    // Degenerate: point vs segment interior, both argument orders.
    CHECK(segment_distance<double>({0, 0.5, 0}, {0, 0.5, 0}, {-1, 0, 0}, {1, 0, 0}) ==
          Approx(0.5).margin(tol));
    CHECK(segment_distance<double>({-1, 0, 0}, {1, 0, 0}, {0, 0.5, 0}, {0, 0.5, 0}) ==
          Approx(0.5).margin(tol));
    // Shared endpoint.
    CHECK(segment_distance<double>({0, 0, 0}, {1, 0, 0}, {1, 0, 0}, {1, 1, 0}) ==
          Approx(0.0).margin(tol));
}

TEST_CASE("segment distance lower-bounds a dense parameter sweep") {
    std::mt19937 rng(131);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const int n = 1000;
    for (int trial = 0; trial < 6; ++trial) {
        const Vec3d p1{u(rng), u(rng), u(rng)}, q1{u(rng), u(rng), u(rng)};
        const Vec3d p2{u(rng), u(rng), u(rng)}, q2{u(rng), u(rng), u(rng)};
        const double dist = segment_distance<double>(p1, q1, p2, q2);
        double brute = std::numeric_limits<double>::infinity();
        for (int i = 0; i <= n; ++i) {
            const Vec3d a = p1 + (q1 - p1) * (static_cast<double>(i) / n);
            for (int j = 0; j <= n; ++j) {
                const Vec3d b = p2 + (q2 - p2) * (static_cast<double>(j) / n);
                brute = std::min(brute, std::sqrt((a - b).squared_norm()));
            }
        }
        CHECK(dist <= brute + 1e-9);
        CHECK(brute - dist < 5e-3);
    }
}

namespace {

PosedBody one_capsule(const Vec3d& a, const Vec3d& b, double radius) {
    PosedBody body;
    body.capsules.push_back({a, b, radius});
    return body;
}

}  // namespace

TEST_CASE("penetration loss on hand-built capsules") {
    SECTION("capsules a meter apart do not penetrate") {
        const auto a = one_capsule({0, 0, 0}, {1, 0, 0}, 0.05);
        const auto b = one_capsule({0, 0, 1.1}, {1, 0, 1.1}, 0.05);
        CHECK(penetration_loss(a, b) == 0.0);
    }
    SECTION("parallel capsules radii 0.05 with axes 0.06 apart overlap by 0.04") {
        const auto a = one_capsule({0, 0, 0}, {1, 0, 0}, 0.05);
        const auto b = one_capsule({0, 0, 0.06}, {1, 0, 0.06}, 0.05);
        CHECK(penetration_loss(a, b) == Approx(0.0016).margin(1e-12));
    }
    SECTION("coincident capsules overlap by the radius sum") {
        const auto a = one_capsule({0, 0, 0}, {1, 0, 0}, 0.05);
        const auto b = one_capsule({0, 0, 0}, {1, 0, 0}, 0.07);
        CHECK(penetration_loss(a, b) == Approx(0.12 * 0.12).margin(1e-9));
    }
    SECTION("multiple pairs accumulate") {
        PosedBody a;
        a.capsules.push_back({{0, 0, 0}, {1, 0, 0}, 0.05});
        a.capsules.push_back({{0, 1, 0}, {1, 1, 0}, 0.04});
        PosedBody b;
        b.capsules.push_back({{0, 0, 0.06}, {1, 0, 0.06}, 0.05});  // meets a[0]: (0.10-0.06)^2
        b.capsules.push_back({{0, 1, 0.05}, {1, 1, 0.05}, 0.04});  // meets a[1]: (0.08-0.05)^2
        CHECK(penetration_loss(a, b) == Approx(0.0016 + 0.0009).margin(1e-12));
    }
}

TEST_CASE("penetration loss on full bodies") {
    BodyParams pa;
    pa.gamma = {-1.3, 0.0, 3.0};
    BodyParams pb;
    pb.gamma = {1.3, 0.0, 3.0};
    const auto far_a = forward_kinematics(asset(), pa);
    const auto far_b = forward_kinematics(asset(), pb);
    CHECK(penetration_loss(far_a, far_b) == 0.0);

    pb.gamma = pa.gamma;  // coincident bodies penetrate everywhere
    const auto near_b = forward_kinematics(asset(), pb);
    CHECK(penetration_loss(far_a, near_b) > 0.0);
}

// ---------------------------------------------------------------------------
// Total loss

TEST_CASE("total loss equals the hand-summed weighted components") {
    const FitScene s = random_scene(141);
    const GmmPrior gmm = toy_gmm(142);
    LossWeights lw;
    lw.lambda_j = 0.05;
    lw.lambda_gmm = 0.02;
    lw.lambda_beta = 0.03;
    lw.lambda_theta_bar = 0.2;
    lw.lambda_c = 0.7;
    lw.lambda_p = 1.3;

    const auto terms = total_loss_terms(2, BodyParamsT<double>::lift(s.pa),
                                        BodyParamsT<double>::lift(s.pb), s.kps_a, s.kps_b,
                                        s.camera, lw, s.c, s.w, s.init_a, s.init_b, &gmm, asset());

    const auto posed_a = forward_kinematics(asset(), s.pa);
    const auto posed_b = forward_kinematics(asset(), s.pb);
    CHECK(terms.j ==
          Approx(reprojection_loss(posed_a, posed_b, s.kps_a, s.kps_b, s.camera, asset()))
              .margin(1e-12));
    CHECK(terms.gmm == Approx(gmm_loss(gmm, flatten_pose(s.pa.theta)) +
                              gmm_loss(gmm, flatten_pose(s.pb.theta)))
                           .margin(1e-12));
    CHECK(terms.beta == Approx(shape_prior(s.pa.beta) + shape_prior(s.pb.beta)).margin(1e-14));
    const auto ta = BodyParamsT<double>::lift(s.pa).theta;
    const auto tb = BodyParamsT<double>::lift(s.pb).theta;
    CHECK(terms.theta_bar ==
          Approx(pose_deviation(ta, s.init_a) + pose_deviation(tb, s.init_b)).margin(1e-12));
    const auto [ct, wt] = swap_persons(s.c, s.w);
    CHECK(terms.c == Approx(std::min(contact_loss(posed_a, posed_b, s.c, s.w, asset()),
                                     contact_loss(posed_a, posed_b, ct, wt, asset())))
                         .margin(1e-12));
    CHECK(terms.p == Approx(penetration_loss(posed_a, posed_b)).margin(1e-12));

    const double expected = lw.lambda_j * terms.j + lw.lambda_gmm * terms.gmm +
                            lw.lambda_beta * terms.beta + lw.lambda_theta_bar * terms.theta_bar +
                            lw.lambda_c * terms.c + lw.lambda_p * terms.p;
    CHECK(terms.total == Approx(expected).margin(1e-12));
}

TEST_CASE("all-zero weights give zero total loss") {
    const FitScene s = random_scene(151);
    LossWeights lw;
    lw.lambda_j = lw.lambda_gmm = lw.lambda_beta = lw.lambda_theta_bar = lw.lambda_c = lw.lambda_p =
        0.0;
    const double total =
        total_loss(1, BodyParamsT<double>::lift(s.pa), BodyParamsT<double>::lift(s.pb), s.kps_a,
                   s.kps_b, s.camera, lw, s.c, s.w, s.init_a, s.init_b, nullptr, asset());
    CHECK(total == 0.0);
}

TEST_CASE("stage one ignores interpenetration") {
    FitScene s = random_scene(161);
    s.pb = s.pa;  // coincident: maximal interpenetration
    LossWeights heavy;
    heavy.lambda_p = 1000.0;
    const auto params_a = BodyParamsT<double>::lift(s.pa);
    const auto params_b = BodyParamsT<double>::lift(s.pb);

    const auto stage1 = total_loss_terms(1, params_a, params_b, s.kps_a, s.kps_b, s.camera, heavy,
                                         s.c, s.w, s.init_a, s.init_b, nullptr, asset());
    CHECK(stage1.p == 0.0);
    // lambda_p does not reach the stage-1 total at all.
    const double with_default =
        total_loss(1, params_a, params_b, s.kps_a, s.kps_b, s.camera, LossWeights{}, s.c, s.w,
                   s.init_a, s.init_b, nullptr, asset());
    CHECK(stage1.total == Approx(with_default).margin(1e-12));

    const auto stage2 = total_loss_terms(2, params_a, params_b, s.kps_a, s.kps_b, s.camera, heavy,
                                         s.c, s.w, s.init_a, s.init_b, nullptr, asset());
    CHECK(stage2.p > 0.0);
    CHECK(stage2.total > stage1.total);
}

TEST_CASE("an invalid stage is rejected") {
    const FitScene s = random_scene(171);
    CHECK_THROWS_AS(total_loss(3, BodyParamsT<double>::lift(s.pa), BodyParamsT<double>::lift(s.pb),
                               s.kps_a, s.kps_b, s.camera, LossWeights{}, s.c, s.w, s.init_a,
                               s.init_b, nullptr, asset()),
                    ValidationError);
}

TEST_CASE("total loss is invariant to the person order of the observations") {
    for (unsigned seed : {181u, 182u, 183u}) {
        const FitScene s = random_scene(seed, 5);
        const GmmPrior gmm = toy_gmm(seed + 1000);
        const auto posed_a = forward_kinematics(asset(), s.pa);
        const auto posed_b = forward_kinematics(asset(), s.pb);
        const auto [ct, wt] = swap_persons(s.c, s.w);
        const double lc_direct = contact_loss(posed_a, posed_b, s.c, s.w, asset());
        const double lc_swapped = contact_loss(posed_a, posed_b, ct, wt, asset());

        for (int stage : {1, 2}) {
            const auto direct = total_loss_terms(
                stage, BodyParamsT<double>::lift(s.pa), BodyParamsT<double>::lift(s.pb), s.kps_a,
                s.kps_b, s.camera, LossWeights{}, s.c, s.w, s.init_a, s.init_b, &gmm, asset());
            const auto swapped = total_loss_terms(
                stage, BodyParamsT<double>::lift(s.pb), BodyParamsT<double>::lift(s.pa), s.kps_b,
                s.kps_a, s.camera, LossWeights{}, s.c, s.w, s.init_b, s.init_a, &gmm, asset());
            CHECK(direct.total == Approx(swapped.total).margin(1e-12));
            CHECK(direct.c == Approx(swapped.c).margin(1e-13));
            if (std::abs(lc_direct - lc_swapped) > 1e-9)
                CHECK(direct.config_swapped != swapped.config_swapped);
        }
    }
}

TEST_CASE("non-finite parameters surface the failing term by name") {
    const FitScene s = random_scene(191);
    auto params_a = BodyParamsT<double>::lift(s.pa);
    params_a.theta[0].x = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH(total_loss(1, params_a, BodyParamsT<double>::lift(s.pb), s.kps_a, s.kps_b,
                                 s.camera, LossWeights{}, s.c, s.w, s.init_a, s.init_b, nullptr,
                                 asset()),
                      ContainsSubstring("non-finite"));
}

// ---------------------------------------------------------------------------
// Gradients

TEST_CASE("loss gradients match central finite differences on random configurations") {
    using D = Dual<kPairDims>;
    const double step = 1e-5;
    const double tol = 1e-4;

    for (unsigned seed = 1; seed <= 20; ++seed) {
        const int stage = (seed % 2 == 0) ? 2 : 1;
        const FitScene s = random_scene(seed * 13);
        const GmmPrior gmm = toy_gmm(seed * 13 + 5);

        const auto lifted_a = lift_seeded(s.pa, 0);
        const auto lifted_b = lift_seeded(s.pb, kPerPerson);
        const auto ad = total_loss_terms(stage, lifted_a, lifted_b, s.kps_a, s.kps_b, s.camera,
                                         LossWeights{}, s.c, s.w, s.init_a, s.init_b, &gmm,
                                         asset());

        auto eval = [&](const std::array<double, kPairDims>& packed) {
            std::array<double, kPerPerson> va{}, vb{};
            std::copy(packed.begin(), packed.begin() + kPerPerson, va.begin());
            std::copy(packed.begin() + kPerPerson, packed.end(), vb.begin());
            return total_loss_terms(
                stage, BodyParamsT<double>::lift(unpack(va, s.pa.sigma)),
                BodyParamsT<double>::lift(unpack(vb, s.pb.sigma)), s.kps_a, s.kps_b, s.camera,
                LossWeights{}, s.c, s.w, s.init_a, s.init_b, &gmm, asset());
        };

        std::array<double, kPairDims> packed{};
        const auto va = pack(s.pa), vb = pack(s.pb);
        std::copy(va.begin(), va.end(), packed.begin());
        std::copy(vb.begin(), vb.end(), packed.begin() + kPerPerson);

        Eigen::Matrix<double, kPairDims, 7> fd = Eigen::Matrix<double, kPairDims, 7>::Zero();
        for (int k = 0; k < kPairDims; ++k) {
            auto hi = packed, lo = packed;
            hi[k] += step;
            lo[k] -= step;
            const auto th = eval(hi), tl = eval(lo);
            fd(k, 0) = (th.j - tl.j) / (2 * step);
            fd(k, 1) = (th.gmm - tl.gmm) / (2 * step);
            fd(k, 2) = (th.beta - tl.beta) / (2 * step);
            fd(k, 3) = (th.theta_bar - tl.theta_bar) / (2 * step);
            fd(k, 4) = (th.c - tl.c) / (2 * step);
            fd(k, 5) = (th.p - tl.p) / (2 * step);
            fd(k, 6) = (th.total - tl.total) / (2 * step);
        }

        auto check_term = [&](const D& term, int col, const char* name) {
            const double err = (fd.col(col) - term.d).norm() / std::max(1.0, term.d.norm());
            INFO("seed " << seed << " stage " << stage << " term " << name << " err " << err);
            CHECK(err <= tol);
        };
        check_term(ad.j, 0, "L_J");
        check_term(ad.gmm, 1, "L_GMM");
        check_term(ad.beta, 2, "L_beta");
        check_term(ad.theta_bar, 3, "L_theta_bar");
        check_term(ad.c, 4, "L_C");
        if (stage == 2) check_term(ad.p, 5, "L_P");
        check_term(ad.total, 6, "total");
    }
}
