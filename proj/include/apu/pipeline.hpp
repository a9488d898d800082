// Dataset records, pipeline configuration, and stage orchestration.
//
// PairRecord is the JSONL unit of the dataset: one interacting pair with its
// keypoints, annotation, denoised contacts, fitted parameters, and
// provenance. run_stage applies one pipeline stage (ask, denoise, fit,
// filter) to a batch with a bounded worker pool; per-record failures
// annotate the record instead of aborting, and per-record seeds derive from
// record identity so results do not depend on batch order.

#pragma once

#include "apu/ask.hpp"
#include "apu/body.hpp"
#include "apu/denoise.hpp"
#include "apu/error.hpp"
#include "apu/gmm.hpp"
#include "apu/optimize.hpp"
#include "apu/prior.hpp"
#include "apu/provider.hpp"
#include "apu/synth.hpp"
#include "apu/taxonomy.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

namespace apu {

// ---------------------------------------------------------------------------
// Stages and records

constexpr int kRecordSchemaVersion = 1;

enum class Stage { proposed, asked, denoised, fitted, filtered };

inline const char* to_string(Stage s) {
    switch (s) {
        case Stage::proposed: return "proposed";
        case Stage::asked: return "asked";
        case Stage::denoised: return "denoised";
        case Stage::fitted: return "fitted";
        default: return "filtered";
    }
}

inline Stage stage_from_string(const std::string& s) {
    for (Stage st : {Stage::proposed, Stage::asked, Stage::denoised, Stage::fitted,
                     Stage::filtered})
        if (s == to_string(st)) return st;
    throw ParseError("unknown stage '" + s + "'");
}

inline bool stage_at_least(Stage s, Stage floor) {
    return static_cast<int>(s) >= static_cast<int>(floor);
}

struct Provenance {
    std::string source;       // where the pair came from, e.g. "synth:hug:17"
    std::uint64_t seed = 0;   // per-record seed of the last applied stage
    std::string config_digest;
};

struct PairRecord {
    std::string image_name;
    int person_a = 0;
    int person_b = 1;
    BBox bbox;
    std::string interaction;
    Keypoints2D kps_a, kps_b;
    std::optional<BodyParams> params_a, params_b;
    std::optional<InteractionAnnotation> lvlm_output;
    std::vector<DenoisedContact> denoised_contacts;
    std::optional<double> filter_error_a, filter_error_b;
    Stage stage = Stage::proposed;
    Provenance provenance;
    std::optional<std::string> error;  // last per-record stage failure
};

inline void validate_record(const PairRecord& rec) {
    if (rec.image_name.empty()) throw ValidationError("record needs an image name");
    if (rec.person_a == rec.person_b)
        throw ValidationError("record needs two distinct person ids");
    if (rec.params_a.has_value() != rec.params_b.has_value())
        throw ValidationError("record must carry parameters for both people or neither");
    if (rec.filter_error_a.has_value() != rec.filter_error_b.has_value())
        throw ValidationError("record must carry filter errors for both people or neither");
    const bool fitted = stage_at_least(rec.stage, Stage::fitted);
    if (fitted && !rec.params_a)
        throw ValidationError(std::string("record at stage '") + to_string(rec.stage) +
                              "' must carry fitted parameters");
    if (!fitted && rec.params_a)
        throw ValidationError(std::string("record at stage '") + to_string(rec.stage) +
                              "' may not carry fitted parameters");
    if (fitted && !rec.filter_error_a)
        throw ValidationError(std::string("record at stage '") + to_string(rec.stage) +
                              "' must carry filter errors");
    if (!fitted && rec.filter_error_a)
        throw ValidationError(std::string("record at stage '") + to_string(rec.stage) +
                              "' may not carry filter errors");
    if (rec.params_a) {
        validate_params(*rec.params_a);
        validate_params(*rec.params_b);
    }
}

// ---------------------------------------------------------------------------
// Record serialization

namespace detail {

inline nlohmann::json keypoints_to_json(const Keypoints2D& kps) {
    auto arr = nlohmann::json::array();
    for (const auto& p : kps.points)
        arr.push_back({p.x, p.y, p.confidence, to_string(p.side)});
    return arr;
}

inline Keypoints2D keypoints_from_json(const nlohmann::json& j) {
    Keypoints2D out;
    for (const auto& e : j) {
        if (!e.is_array() || e.size() != 4)
            throw ParseError("keypoint entries must be [x, y, confidence, side]");
        out.points.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>(),
                              laterality_from_string(e[3].get<std::string>())});
    }
    return out;
}

inline nlohmann::json params_to_json(const BodyParams& p) {
    nlohmann::json j;
    j["phi"] = {p.phi.x, p.phi.y, p.phi.z};
    auto theta = nlohmann::json::array();
    for (const auto& t : p.theta) {
        theta.push_back(t.x);
        theta.push_back(t.y);
        theta.push_back(t.z);
    }
    j["theta"] = std::move(theta);
    j["beta"] = p.beta;
    j["gamma"] = {p.gamma.x, p.gamma.y, p.gamma.z};
    j["sigma"] = p.sigma;
    return j;
}

inline BodyParams params_from_json(const nlohmann::json& j) {
    BodyParams p;
    const auto vec3 = [](const nlohmann::json& a, const char* what) {
        if (!a.is_array() || a.size() != 3)
            throw ParseError(std::string(what) + " must be a 3-vector");
        return Vec3d{a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    };
    p.phi = vec3(j.at("phi"), "phi");
    p.gamma = vec3(j.at("gamma"), "gamma");
    const auto& theta = j.at("theta");
    if (!theta.is_array() || theta.size() != 3 * kArticulatedJoints)
        throw ParseError("theta must hold " + std::to_string(3 * kArticulatedJoints) +
                         " values");
    for (int i = 0; i < kArticulatedJoints; ++i)
        p.theta[i] = {theta[3 * i].get<double>(), theta[3 * i + 1].get<double>(),
                      theta[3 * i + 2].get<double>()};
    const auto& beta = j.at("beta");
    if (!beta.is_array() || beta.size() != kShapeDims)
        throw ParseError("beta must hold " + std::to_string(kShapeDims) + " values");
    for (int i = 0; i < kShapeDims; ++i) p.beta[i] = beta[i].get<double>();
    p.sigma = j.at("sigma").get<double>();
    return p;
}

inline nlohmann::json body_part_to_json(const BodyPart& p) {
    return {{"name", p.name}, {"side", to_string(p.side)}};
}

inline BodyPart body_part_from_json(const nlohmann::json& j) {
    return make_body_part(j.at("name").get<std::string>(),
                          side_from_string(j.at("side").get<std::string>()));
}

inline nlohmann::json denoised_to_json(const DenoisedContact& c) {
    return {{"part_left", body_part_to_json(c.part_left)},
            {"part_right", body_part_to_json(c.part_right)},
            {"confidence", c.confidence},
            {"proximity_weight", c.proximity_weight},
            {"swapped", c.swapped}};
}

inline DenoisedContact denoised_from_json(const nlohmann::json& j) {
    DenoisedContact c;
    c.part_left = body_part_from_json(j.at("part_left"));
    c.part_right = body_part_from_json(j.at("part_right"));
    c.confidence = j.at("confidence").get<double>();
    c.proximity_weight = j.at("proximity_weight").get<double>();
    c.swapped = j.at("swapped").get<bool>();
    return c;
}

}  // namespace detail

inline nlohmann::json record_to_json(const PairRecord& rec) {
    nlohmann::json j;
    j["schema_version"] = kRecordSchemaVersion;
    j["image_name"] = rec.image_name;
    j["person_a"] = rec.person_a;
    j["person_b"] = rec.person_b;
    j["bbox"] = {rec.bbox.x, rec.bbox.y, rec.bbox.w, rec.bbox.h};
    j["interaction"] = rec.interaction;
    j["keypoints"] = {{"a", detail::keypoints_to_json(rec.kps_a)},
                      {"b", detail::keypoints_to_json(rec.kps_b)}};
    if (rec.params_a)
        j["params"] = {{"a", detail::params_to_json(*rec.params_a)},
                       {"b", detail::params_to_json(*rec.params_b)}};
    if (rec.lvlm_output) j["lvlm_output"] = annotation_to_json(*rec.lvlm_output);
    auto contacts = nlohmann::json::array();
    for (const auto& c : rec.denoised_contacts) contacts.push_back(detail::denoised_to_json(c));
    j["denoised_contacts"] = std::move(contacts);
    if (rec.filter_error_a)
        j["filter_error"] = {{"a", *rec.filter_error_a}, {"b", *rec.filter_error_b}};
    j["stage"] = to_string(rec.stage);
    j["provenance"] = {{"source", rec.provenance.source},
                       {"seed", rec.provenance.seed},
                       {"config_digest", rec.provenance.config_digest}};
    if (rec.error) j["error"] = *rec.error;
    return j;
}

inline PairRecord record_from_json(const nlohmann::json& j) {
    const int version = j.at("schema_version").get<int>();
    if (version != kRecordSchemaVersion)
        throw SchemaError("record schema version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kRecordSchemaVersion) +
                          ")");
    PairRecord rec;
    rec.image_name = j.at("image_name").get<std::string>();
    rec.person_a = j.at("person_a").get<int>();
    rec.person_b = j.at("person_b").get<int>();
    const auto& bbox = j.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) throw ParseError("bbox must be [x, y, w, h]");
    rec.bbox = {bbox[0].get<double>(), bbox[1].get<double>(), bbox[2].get<double>(),
                bbox[3].get<double>()};
    rec.interaction = j.value("interaction", std::string());
    const auto& kps = j.at("keypoints");
    rec.kps_a = detail::keypoints_from_json(kps.at("a"));
    rec.kps_b = detail::keypoints_from_json(kps.at("b"));
    if (j.contains("params")) {
        rec.params_a = detail::params_from_json(j["params"].at("a"));
        rec.params_b = detail::params_from_json(j["params"].at("b"));
    }
    if (j.contains("lvlm_output")) rec.lvlm_output = parse_annotation(j["lvlm_output"].dump());
    for (const auto& c : j.value("denoised_contacts", nlohmann::json::array()))
        rec.denoised_contacts.push_back(detail::denoised_from_json(c));
    if (j.contains("filter_error")) {
        rec.filter_error_a = j["filter_error"].at("a").get<double>();
        rec.filter_error_b = j["filter_error"].at("b").get<double>();
    }
    rec.stage = stage_from_string(j.at("stage").get<std::string>());
    const auto& prov = j.at("provenance");
    rec.provenance.source = prov.at("source").get<std::string>();
    rec.provenance.seed = prov.at("seed").get<std::uint64_t>();
    rec.provenance.config_digest = prov.at("config_digest").get<std::string>();
    if (j.contains("error")) rec.error = j["error"].get<std::string>();
    validate_record(rec);
    return rec;
}

inline bool operator==(const PairRecord& a, const PairRecord& b) {
    return record_to_json(a) == record_to_json(b);
}

inline std::vector<PairRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open record file " + path.string());
    std::vector<PairRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = path.string() + " line " + std::to_string(line_no) + ": ";
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const SchemaError& e) {
            throw SchemaError(where + e.what());
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        } catch (const std::exception& e) {
            throw ParseError(where + e.what());
        }
    }
    return out;
}

inline void write_records(const std::vector<PairRecord>& records,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open record file " + path.string() + " for writing");
    for (const auto& rec : records) {
        validate_record(rec);
        out << record_to_json(rec).dump() << '\n';
    }
    if (!out) throw Error("failed writing record file " + path.string());
}

// ---------------------------------------------------------------------------
// Pipeline configuration

constexpr int kConfigSchemaVersion = 1;

struct AskStageConfig {
    std::string provider = "mock";  // "mock" or "http"
    std::string endpoint;           // http provider URL
    std::string mock_dir;           // mock provider response directory
    std::string cache_dir = "lvlm_cache";
    int max_attempts = 5;
    int backoff_base_ms = 1000;
    int max_in_flight = 4;
    int min_interval_ms = 0;

    void validate() const {
        if (provider != "mock" && provider != "http")
            throw ValidationError("ask provider must be 'mock' or 'http'");
        if (max_attempts < 1) throw ValidationError("ask max_attempts must be positive");
        if (max_in_flight < 1) throw ValidationError("ask max_in_flight must be positive");
        if (backoff_base_ms < 0 || min_interval_ms < 0)
            throw ValidationError("ask delays must be nonnegative");
    }
};

struct DenoiseStageConfig {
    double kp_conf_min = 0.3;        // keypoint evidence floor
    double confidence_floor = 0.3;   // contact entries below this are ignored

    void validate() const {
        if (kp_conf_min < 0.0 || kp_conf_min > 1.0 || confidence_floor < 0.0 ||
            confidence_floor > 1.0)
            throw ValidationError("denoise floors must lie in [0, 1]");
    }
};

struct ScheduleConfig {
    int steps = 100;
    double sigma_first = 1e-4;
    double sigma_last = 0.02;

    DiffusionSchedule build() const { return make_schedule(steps, sigma_first, sigma_last); }
};

struct SynthStageConfig {
    CorruptionConfig corruption;
    double tau = kContactTau;

    void validate() const {
        corruption.validate();
        if (tau < 0.0) throw ValidationError("synth contact threshold must be nonnegative");
    }
};

struct PosePriorConfig {
    bool enabled = false;
    int components = 4;
    int library_size = 200;

    void validate() const {
        if (components < 1) throw ValidationError("pose prior needs at least one component");
        if (library_size < 10 * components)
            throw ValidationError("pose prior library must hold at least 10 poses per component");
    }
};

struct PipelineConfig {
    int schema_version = kConfigSchemaVersion;
    std::uint64_t seed = 0;
    int workers = 1;
    Camera camera;
    ProposeConfig propose;
    AskStageConfig ask;
    DenoiseStageConfig denoise;
    LossWeights weights;
    OptimConfig optimizer;
    double filter_threshold = 20.0;
    ScheduleConfig schedule;
    PriorTrainConfig prior_train;
    GuidanceWeights guidance;
    SynthStageConfig synth;
    PosePriorConfig pose_prior;

    void validate() const {
        if (workers < 1) throw ValidationError("worker count must be positive");
        validate_camera(camera);
        if (propose.k_min < 1) throw ValidationError("propose k_min must be positive");
        if (propose.d_max <= 0.0) throw ValidationError("propose d_max must be positive");
        if (propose.kp_conf_min < 0.0 || propose.kp_conf_min > 1.0)
            throw ValidationError("propose kp_conf_min must lie in [0, 1]");
        if (propose.align_max <= 0.0) throw ValidationError("propose align_max must be positive");
        ask.validate();
        denoise.validate();
        weights.validate();
        optimizer.validate();
        if (filter_threshold <= 0.0) throw ValidationError("filter threshold must be positive");
        const DiffusionSchedule sched = schedule.build();  // validates its own ranges
        prior_train.validate();
        guidance.validate(sched);
        synth.validate();
        pose_prior.validate();
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    if (!j.is_object()) throw SchemaError("config section '" + where + "' must be an object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) known = true;
        if (!known)
            throw SchemaError("unknown config key '" + where + item.key() + "'");
    }
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["schema_version"] = c.schema_version;
    j["seed"] = c.seed;
    j["workers"] = c.workers;
    j["camera"] = {{"fx", c.camera.fx},         {"fy", c.camera.fy},
                   {"cx", c.camera.cx},         {"cy", c.camera.cy},
                   {"width", c.camera.width},   {"height", c.camera.height}};
    j["propose"] = {{"k_min", c.propose.k_min},
                    {"d_max", c.propose.d_max},
                    {"kp_conf_min", c.propose.kp_conf_min},
                    {"align_max", c.propose.align_max}};
    j["ask"] = {{"provider", c.ask.provider},
                {"endpoint", c.ask.endpoint},
                {"mock_dir", c.ask.mock_dir},
                {"cache_dir", c.ask.cache_dir},
                {"max_attempts", c.ask.max_attempts},
                {"backoff_base_ms", c.ask.backoff_base_ms},
                {"max_in_flight", c.ask.max_in_flight},
                {"min_interval_ms", c.ask.min_interval_ms}};
    j["denoise"] = {{"kp_conf_min", c.denoise.kp_conf_min},
                    {"confidence_floor", c.denoise.confidence_floor}};
    j["weights"] = {{"lambda_c", c.weights.lambda_c},
                    {"lambda_j", c.weights.lambda_j},
                    {"lambda_gmm", c.weights.lambda_gmm},
                    {"lambda_beta", c.weights.lambda_beta},
                    {"lambda_theta_bar", c.weights.lambda_theta_bar},
                    {"lambda_p", c.weights.lambda_p}};
    j["optimizer"] = {{"stage1_steps", c.optimizer.stage1_steps},
                      {"stage2_steps", c.optimizer.stage2_steps},
                      {"step_size", c.optimizer.step_size},
                      {"convergence_eps", c.optimizer.convergence_eps},
                      {"seed", c.optimizer.seed},
                      {"optimize_phi_stage1", c.optimizer.optimize_phi_stage1}};
    j["filter_threshold"] = c.filter_threshold;
    j["schedule"] = {{"steps", c.schedule.steps},
                     {"sigma_first", c.schedule.sigma_first},
                     {"sigma_last", c.schedule.sigma_last}};
    j["prior_train"] = {{"steps", c.prior_train.steps},
                        {"batch_size", c.prior_train.batch_size},
                        {"learning_rate", c.prior_train.learning_rate},
                        {"lambda_phi", c.prior_train.lambda_phi},
                        {"lambda_theta", c.prior_train.lambda_theta},
                        {"lambda_beta", c.prior_train.lambda_beta},
                        {"lambda_gamma", c.prior_train.lambda_gamma},
                        {"lambda_v2v", c.prior_train.lambda_v2v},
                        {"hidden_layers", c.prior_train.hidden_layers},
                        {"hidden_dims", c.prior_train.hidden_dims},
                        {"seed", c.prior_train.seed},
                        {"source_fractions", c.prior_train.source_fractions}};
    j["guidance"] = {{"lambda_phi_hat", c.guidance.lambda_phi_hat},
                     {"lambda_theta_hat", c.guidance.lambda_theta_hat},
                     {"lambda_beta_hat", c.guidance.lambda_beta_hat},
                     {"lambda_gamma_hat", c.guidance.lambda_gamma_hat},
                     {"t_guid", c.guidance.t_guid}};
    j["synth"] = {{"sigma_px", c.synth.corruption.sigma_px},
                  {"p_flip", c.synth.corruption.p_flip},
                  {"p_drop", c.synth.corruption.p_drop},
                  {"p_hall", c.synth.corruption.p_hall},
                  {"conf_lo", c.synth.corruption.conf_lo},
                  {"conf_hi", c.synth.corruption.conf_hi},
                  {"init_theta_sigma", c.synth.corruption.init_theta_sigma},
                  {"init_gamma_sigma", c.synth.corruption.init_gamma_sigma},
                  {"tau", c.synth.tau}};
    j["pose_prior"] = {{"enabled", c.pose_prior.enabled},
                       {"components", c.pose_prior.components},
                       {"library_size", c.pose_prior.library_size}};
    return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    using detail::check_keys;
    using detail::read_into;
    check_keys(j,
               {"schema_version", "seed", "workers", "camera", "propose", "ask", "denoise",
                "weights", "optimizer", "filter_threshold", "schedule", "prior_train",
                "guidance", "synth", "pose_prior"},
               "");
    PipelineConfig c;
    read_into(j, "schema_version", c.schema_version);
    if (c.schema_version != kConfigSchemaVersion)
        throw SchemaError("config schema version " + std::to_string(c.schema_version) +
                          " unsupported (expected " + std::to_string(kConfigSchemaVersion) +
                          ")");
    read_into(j, "seed", c.seed);
    read_into(j, "workers", c.workers);
    if (j.contains("camera")) {
        const auto& s = j["camera"];
        check_keys(s, {"fx", "fy", "cx", "cy", "width", "height"}, "camera.");
        read_into(s, "fx", c.camera.fx);
        read_into(s, "fy", c.camera.fy);
        read_into(s, "cx", c.camera.cx);
        read_into(s, "cy", c.camera.cy);
        read_into(s, "width", c.camera.width);
        read_into(s, "height", c.camera.height);
    }
    if (j.contains("propose")) {
        const auto& s = j["propose"];
        check_keys(s, {"k_min", "d_max", "kp_conf_min", "align_max"}, "propose.");
        read_into(s, "k_min", c.propose.k_min);
        read_into(s, "d_max", c.propose.d_max);
        read_into(s, "kp_conf_min", c.propose.kp_conf_min);
        read_into(s, "align_max", c.propose.align_max);
    }
    if (j.contains("ask")) {
        const auto& s = j["ask"];
        check_keys(s,
                   {"provider", "endpoint", "mock_dir", "cache_dir", "max_attempts",
                    "backoff_base_ms", "max_in_flight", "min_interval_ms"},
                   "ask.");
        read_into(s, "provider", c.ask.provider);
        read_into(s, "endpoint", c.ask.endpoint);
        read_into(s, "mock_dir", c.ask.mock_dir);
        read_into(s, "cache_dir", c.ask.cache_dir);
        read_into(s, "max_attempts", c.ask.max_attempts);
        read_into(s, "backoff_base_ms", c.ask.backoff_base_ms);
        read_into(s, "max_in_flight", c.ask.max_in_flight);
        read_into(s, "min_interval_ms", c.ask.min_interval_ms);
    }
    if (j.contains("denoise")) {
        const auto& s = j["denoise"];
        check_keys(s, {"kp_conf_min", "confidence_floor"}, "denoise.");
        read_into(s, "kp_conf_min", c.denoise.kp_conf_min);
        read_into(s, "confidence_floor", c.denoise.confidence_floor);
    }
    if (j.contains("weights")) {
        const auto& s = j["weights"];
        check_keys(s,
                   {"lambda_c", "lambda_j", "lambda_gmm", "lambda_beta", "lambda_theta_bar",
                    "lambda_p"},
                   "weights.");
        read_into(s, "lambda_c", c.weights.lambda_c);
        read_into(s, "lambda_j", c.weights.lambda_j);
        read_into(s, "lambda_gmm", c.weights.lambda_gmm);
        read_into(s, "lambda_beta", c.weights.lambda_beta);
        read_into(s, "lambda_theta_bar", c.weights.lambda_theta_bar);
        read_into(s, "lambda_p", c.weights.lambda_p);
    }
    if (j.contains("optimizer")) {
        const auto& s = j["optimizer"];
        check_keys(s,
                   {"stage1_steps", "stage2_steps", "step_size", "convergence_eps", "seed",
                    "optimize_phi_stage1"},
                   "optimizer.");
        read_into(s, "stage1_steps", c.optimizer.stage1_steps);
        read_into(s, "stage2_steps", c.optimizer.stage2_steps);
        read_into(s, "step_size", c.optimizer.step_size);
        read_into(s, "convergence_eps", c.optimizer.convergence_eps);
        read_into(s, "seed", c.optimizer.seed);
        read_into(s, "optimize_phi_stage1", c.optimizer.optimize_phi_stage1);
    }
    read_into(j, "filter_threshold", c.filter_threshold);
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        check_keys(s, {"steps", "sigma_first", "sigma_last"}, "schedule.");
        read_into(s, "steps", c.schedule.steps);
        read_into(s, "sigma_first", c.schedule.sigma_first);
        read_into(s, "sigma_last", c.schedule.sigma_last);
    }
    if (j.contains("prior_train")) {
        const auto& s = j["prior_train"];
        check_keys(s,
                   {"steps", "batch_size", "learning_rate", "lambda_phi", "lambda_theta",
                    "lambda_beta", "lambda_gamma", "lambda_v2v", "hidden_layers", "hidden_dims",
                    "seed", "source_fractions"},
                   "prior_train.");
        read_into(s, "steps", c.prior_train.steps);
        read_into(s, "batch_size", c.prior_train.batch_size);
        read_into(s, "learning_rate", c.prior_train.learning_rate);
        read_into(s, "lambda_phi", c.prior_train.lambda_phi);
        read_into(s, "lambda_theta", c.prior_train.lambda_theta);
        read_into(s, "lambda_beta", c.prior_train.lambda_beta);
        read_into(s, "lambda_gamma", c.prior_train.lambda_gamma);
        read_into(s, "lambda_v2v", c.prior_train.lambda_v2v);
        read_into(s, "hidden_layers", c.prior_train.hidden_layers);
        read_into(s, "hidden_dims", c.prior_train.hidden_dims);
        read_into(s, "seed", c.prior_train.seed);
        read_into(s, "source_fractions", c.prior_train.source_fractions);
    }
    if (j.contains("guidance")) {
        const auto& s = j["guidance"];
        check_keys(s,
                   {"lambda_phi_hat", "lambda_theta_hat", "lambda_beta_hat", "lambda_gamma_hat",
                    "t_guid"},
                   "guidance.");
        read_into(s, "lambda_phi_hat", c.guidance.lambda_phi_hat);
        read_into(s, "lambda_theta_hat", c.guidance.lambda_theta_hat);
        read_into(s, "lambda_beta_hat", c.guidance.lambda_beta_hat);
        read_into(s, "lambda_gamma_hat", c.guidance.lambda_gamma_hat);
        read_into(s, "t_guid", c.guidance.t_guid);
    }
    if (j.contains("synth")) {
        const auto& s = j["synth"];
        check_keys(s,
                   {"sigma_px", "p_flip", "p_drop", "p_hall", "conf_lo", "conf_hi",
                    "init_theta_sigma", "init_gamma_sigma", "tau"},
                   "synth.");
        read_into(s, "sigma_px", c.synth.corruption.sigma_px);
        read_into(s, "p_flip", c.synth.corruption.p_flip);
        read_into(s, "p_drop", c.synth.corruption.p_drop);
        read_into(s, "p_hall", c.synth.corruption.p_hall);
        read_into(s, "conf_lo", c.synth.corruption.conf_lo);
        read_into(s, "conf_hi", c.synth.corruption.conf_hi);
        read_into(s, "init_theta_sigma", c.synth.corruption.init_theta_sigma);
        read_into(s, "init_gamma_sigma", c.synth.corruption.init_gamma_sigma);
        read_into(s, "tau", c.synth.tau);
    }
    if (j.contains("pose_prior")) {
        const auto& s = j["pose_prior"];
        check_keys(s, {"enabled", "components", "library_size"}, "pose_prior.");
        read_into(s, "enabled", c.pose_prior.enabled);
        read_into(s, "components", c.pose_prior.components);
        read_into(s, "library_size", c.pose_prior.library_size);
    }
    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config file " + path.string() + ": " + e.what());
    }
    return pipeline_config_from_json(j);
}

// Digest over the canonical serialized configuration: stable across runs,
// different iff any value differs.
inline std::string pipeline_config_digest(const PipelineConfig& c) {
    return sha256_hex(pipeline_config_to_json(c).dump()).substr(0, 16);
}

// ---------------------------------------------------------------------------
// Per-record seeds

// FNV-1a over the global seed and the record identity. Identical records get
// identical seeds in any batch order or partitioning.
inline std::uint64_t record_seed(std::uint64_t global_seed, const std::string& image_name,
                                 int person_a, int person_b) {
    std::uint64_t h = 1469598103934665603ull;
    const auto mix = [&h](const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < len; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    mix(&global_seed, sizeof global_seed);
    mix(image_name.data(), image_name.size());
    const std::int32_t ids[2] = {person_a, person_b};
    mix(ids, sizeof ids);
    return h;
}

// ---------------------------------------------------------------------------
// Synthetic record plumbing

constexpr std::uint64_t kSynthObservationSeedOffset = 1000003;

inline std::string synth_source_tag(const std::string& template_name, unsigned seed) {
    return "synth:" + template_name + ":" + std::to_string(seed);
}

inline std::optional<std::pair<std::string, unsigned>> parse_synth_source(
    const std::string& source) {
    if (source.rfind("synth:", 0) != 0) return std::nullopt;
    const auto last = source.rfind(':');
    if (last == 5) return std::nullopt;
    const std::string name = source.substr(6, last - 6);
    try {
        return std::pair{name, static_cast<unsigned>(std::stoul(source.substr(last + 1)))};
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

// Packages corrupted observations of a ground-truth scene as an asked-stage
// record. The scene is not stored: it is recomputed from the source tag when
// the fit stage needs the oracle initialization or eval needs the truth.
inline PairRecord make_synth_record(const GtScene& scene, const Observations& obs) {
    PairRecord rec;
    rec.image_name = "synth-" + scene.interaction + "-" + std::to_string(scene.seed) + ".png";
    rec.person_a = 0;
    rec.person_b = 1;
    rec.interaction = scene.interaction;
    rec.kps_a = obs.kps_a;
    rec.kps_b = obs.kps_b;
    const auto box_a = keypoint_bbox(rec.kps_a, 0.0);
    const auto box_b = keypoint_bbox(rec.kps_b, 0.0);
    if (box_a && box_b) rec.bbox = box_a->union_with(*box_b);
    rec.lvlm_output = obs.annotation;
    rec.stage = Stage::asked;
    rec.provenance.source = synth_source_tag(scene.interaction, scene.seed);
    return rec;
}

// Recomputes the ground-truth scene and corrupted observations behind a
// synthetic record. Returns nothing for records from other sources.
inline std::optional<std::pair<GtScene, Observations>> reconstruct_synth_scene(
    const PairRecord& rec, const PipelineConfig& config, const BodyModelAsset& model) {
    const auto tag = parse_synth_source(rec.provenance.source);
    if (!tag) return std::nullopt;
    GtScene scene = generate_scene(tag->first, model, tag->second, config.synth.tau,
                                   config.propose.k_min);
    Observations obs = corrupt(scene, config.synth.corruption,
                               tag->second + kSynthObservationSeedOffset, model);
    return std::pair{std::move(scene), std::move(obs)};
}

// ---------------------------------------------------------------------------
// Stage orchestration

struct StageSummary {
    int processed = 0;  // records the stage transformed without error
    int failed = 0;     // records annotated with an error
    int filtered = 0;   // records dropped by the filter stage
};

struct StageOutcome {
    std::vector<PairRecord> records;
    StageSummary summary;
};

struct StageContext {
    const BodyModelAsset* model = nullptr;     // denoise and both fit stages
    CachingClient* client = nullptr;           // ask
    std::string image_dir;                     // ask: image bytes live here
    const GmmPrior* gmm = nullptr;             // optional fit pose prior
    const DenoiserBase* denoiser = nullptr;    // fit-with-prior
    std::string trace_dir;                     // when set, fit stages dump loss traces
};

namespace detail {

struct StageSpec {
    Stage input;
    Stage output;
};

inline StageSpec stage_spec(const std::string& name) {
    if (name == "ask") return {Stage::proposed, Stage::asked};
    if (name == "denoise") return {Stage::asked, Stage::denoised};
    if (name == "fit" || name == "fit-with-prior") return {Stage::denoised, Stage::fitted};
    if (name == "filter") return {Stage::fitted, Stage::filtered};
    throw ValidationError("unknown stage '" + name +
                          "' (expected ask, denoise, fit, fit-with-prior or filter)");
}

inline Bytes read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image file " + path.string());
    Bytes data((std::istreambuf_iterator<char>(in)), {});
    return data;
}

template <typename F>
void parallel_for(int n, int workers, F&& fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

inline void apply_ask(PairRecord& rec, const StageContext& ctx) {
    const Bytes image =
        read_file_bytes(std::filesystem::path(ctx.image_dir) / rec.image_name);
    const std::optional<std::string> action =
        rec.interaction.empty() ? std::nullopt : std::optional<std::string>(rec.interaction);
    const std::string response = ctx.client->query(image, build_prompt(action));
    InteractionAnnotation ann = parse_annotation(response);
    if (!ann.interaction.empty()) rec.interaction = ann.interaction;
    rec.lvlm_output = std::move(ann);
}

inline void apply_denoise(PairRecord& rec, const PipelineConfig& config,
                          const BodyModelAsset& model) {
    if (!rec.lvlm_output) throw ValidationError("asked record lacks an annotation");
    rec.denoised_contacts = denoise_annotation(*rec.lvlm_output, rec.kps_a, rec.kps_b,
                                               model.kp_part_map, config.denoise.kp_conf_min);
}

// Keypoint-centroid placement at a fixed depth: a deterministic initializer
// for records with no better source.
inline Vec3d centroid_init_gamma(const Keypoints2D& kps, const Camera& camera) {
    double su = 0.0, sv = 0.0;
    int n = 0;
    for (const auto& p : kps.points) {
        if (p.confidence <= 0.0) continue;
        su += p.x;
        sv += p.y;
        ++n;
    }
    constexpr double kInitDepth = 3.0;
    if (n == 0) return {0.0, 0.0, kInitDepth};
    return {(su / n - camera.cx) / camera.fx * kInitDepth,
            (sv / n - camera.cy) / camera.fy * kInitDepth, kInitDepth};
}

inline FitInit fit_initialization(const PairRecord& rec, const PipelineConfig& config,
                                  const BodyModelAsset& model) {
    if (const auto synth = reconstruct_synth_scene(rec, config, model))
        return synth->second.init;  // oracle initialization, already perturbed
    FitInit init;
    init.source = InitSource::zero_init;
    init.a.gamma = centroid_init_gamma(rec.kps_a, config.camera);
    init.b.gamma = centroid_init_gamma(rec.kps_b, config.camera);
    return init;
}

// Long-format loss history: one (step, term, value) row per recorded term,
// steps numbered continuously across both optimization stages.
inline void write_loss_trace(const PairRecord& rec, const FitResult& result,
                             const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::string name = rec.image_name + "-" + std::to_string(rec.person_a) + "-" +
                       std::to_string(rec.person_b) + ".csv";
    std::replace(name.begin(), name.end(), '/', '_');
    std::ofstream out(dir / name);
    if (!out) throw Error("cannot open trace file " + (dir / name).string());
    out << "step,term,value\n";
    int step = 0;
    for (const auto* trace : {&result.trace_stage1, &result.trace_stage2}) {
        for (const auto& t : *trace) {
            const std::pair<const char*, double> terms[] = {
                {"reprojection", t.j},     {"contact", t.c},
                {"pose_mixture", t.gmm},   {"shape_prior", t.beta},
                {"pose_deviation", t.theta_bar}, {"penetration", t.p},
                {"guidance", t.diffusion}, {"total", t.total}};
            for (const auto& [term, value] : terms)
                out << step << ',' << term << ',' << value << '\n';
            ++step;
        }
    }
    if (!out) throw Error("failed writing trace file " + (dir / name).string());
}

inline void store_fit(PairRecord& rec, const FitResult& result, const StageContext& ctx) {
    rec.params_a = result.final_a;
    rec.params_b = result.final_b;
    rec.filter_error_a = result.reproj_error_a;
    rec.filter_error_b = result.reproj_error_b;
    if (!ctx.trace_dir.empty()) write_loss_trace(rec, result, ctx.trace_dir);
}

inline void apply_fit(PairRecord& rec, const PipelineConfig& config, const StageContext& ctx) {
    const BodyModelAsset& model = *ctx.model;
    const FitInit init = fit_initialization(rec, config, model);
    const auto [c, w] = build_contact_map(rec.denoised_contacts, model.part_regions,
                                          config.denoise.confidence_floor);
    store_fit(rec,
              fit_pair(init, rec.kps_a, rec.kps_b, config.camera, c, w, config.weights,
                       config.optimizer, model, ctx.gmm),
              ctx);
}

inline void apply_fit_with_prior(PairRecord& rec, const PipelineConfig& config,
                                 const StageContext& ctx) {
    const BodyModelAsset& model = *ctx.model;
    const FitInit init = fit_initialization(rec, config, model);
    store_fit(rec,
              fit_with_prior(init, rec.kps_a, rec.kps_b, config.camera, *ctx.denoiser,
                             config.schedule.build(), config.weights, config.guidance,
                             config.optimizer, model),
              ctx);
}

inline bool apply_filter(const PairRecord& rec, const PipelineConfig& config) {
    if (!rec.filter_error_a || !rec.filter_error_b)
        throw ValidationError("fitted record lacks filter errors");
    return *rec.filter_error_a < config.filter_threshold &&
           *rec.filter_error_b < config.filter_threshold;
}

}  // namespace detail

inline void canonical_sort(std::vector<PairRecord>& records) {
    std::sort(records.begin(), records.end(), [](const PairRecord& l, const PairRecord& r) {
        const auto lk = std::tie(l.image_name, l.person_a, l.person_b);
        const auto rk = std::tie(r.image_name, r.person_a, r.person_b);
        if (lk != rk) return lk < rk;
        return record_to_json(l).dump() < record_to_json(r).dump();
    });
}

// Applies one stage to a batch. Records already at or past the stage's
// output state pass through untouched, so re-running a stage is a no-op.
// Per-record failures (including records not yet at the stage's input state)
// annotate the record and count as failed; only configuration, asset, or
// context problems throw.
inline StageOutcome run_stage(const std::string& stage_name, std::vector<PairRecord> records,
                              const PipelineConfig& config, const StageContext& context) {
    const detail::StageSpec spec = detail::stage_spec(stage_name);
    config.validate();
    if ((stage_name == "denoise" || stage_name == "fit" || stage_name == "fit-with-prior") &&
        !context.model)
        throw ValidationError("stage '" + stage_name + "' needs a body model asset");
    if (stage_name == "ask" && !context.client)
        throw ValidationError("stage 'ask' needs an annotation client");
    if (stage_name == "fit-with-prior" && !context.denoiser)
        throw ValidationError("stage 'fit-with-prior' needs a trained prior");

    const std::string digest = pipeline_config_digest(config);
    std::atomic<int> processed{0}, failed{0};
    std::vector<char> drop(records.size(), 0);

    detail::parallel_for(static_cast<int>(records.size()), config.workers, [&](int idx) {
        PairRecord& rec = records[idx];
        if (stage_at_least(rec.stage, spec.output)) return;  // already done: no-op
        try {
            if (rec.stage != spec.input)
                throw ValidationError(std::string("record at stage '") + to_string(rec.stage) +
                                      "' is not ready for stage '" + stage_name + "'");
            if (stage_name == "ask")
                detail::apply_ask(rec, context);
            else if (stage_name == "denoise")
                detail::apply_denoise(rec, config, *context.model);
            else if (stage_name == "fit")
                detail::apply_fit(rec, config, context);
            else if (stage_name == "fit-with-prior")
                detail::apply_fit_with_prior(rec, config, context);
            else if (!detail::apply_filter(rec, config))
                drop[idx] = 1;
            rec.stage = spec.output;
            rec.provenance.seed =
                record_seed(config.seed, rec.image_name, rec.person_a, rec.person_b);
            rec.provenance.config_digest = digest;
            rec.error.reset();
            processed.fetch_add(1, std::memory_order_relaxed);
        } catch (const std::exception& e) {
            rec.error = e.what();
            failed.fetch_add(1, std::memory_order_relaxed);
        }
    });

    StageOutcome out;
    out.summary.processed = processed.load();
    out.summary.failed = failed.load();
    out.records.reserve(records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        if (drop[i]) {
            ++out.summary.filtered;
            continue;
        }
        out.records.push_back(std::move(records[i]));
    }
    canonical_sort(out.records);
    return out;
}

// ---------------------------------------------------------------------------
// Proposal plumbing

// Builds proposed-stage records from detector output.
inline std::vector<PairRecord> records_from_candidates(
    const std::vector<CandidatePair>& pairs, const std::vector<PersonDetection>& people,
    const std::string& source) {
    const auto person = [&](int id) -> const PersonDetection& {
        for (const auto& p : people)
            if (p.id == id) return p;
        throw ValidationError("candidate pair references unknown person id " +
                              std::to_string(id));
    };
    std::vector<PairRecord> out;
    out.reserve(pairs.size());
    for (const auto& pair : pairs) {
        PairRecord rec;
        rec.image_name = pair.image;
        rec.person_a = pair.person_a;
        rec.person_b = pair.person_b;
        rec.bbox = pair.pair_bbox;
        rec.interaction = pair.action.value_or("");
        rec.kps_a = person(pair.person_a).keypoints;
        rec.kps_b = person(pair.person_b).keypoints;
        rec.stage = Stage::proposed;
        rec.provenance.source = source;
        out.push_back(std::move(rec));
    }
    canonical_sort(out);
    return out;
}

// Parses one image's detections: {"image": name, "people": [{"id",
// "keypoints", "initial_params"?}]}.
inline std::pair<std::string, std::vector<PersonDetection>> detections_from_json(
    const nlohmann::json& j) {
    const std::string image = j.at("image").get<std::string>();
    std::vector<PersonDetection> people;
    for (const auto& p : j.at("people")) {
        PersonDetection det;
        det.id = p.at("id").get<int>();
        det.keypoints = detail::keypoints_from_json(p.at("keypoints"));
        if (const auto box = keypoint_bbox(det.keypoints, 0.0)) det.bbox = *box;
        if (p.contains("initial_params"))
            det.initial_params = detail::params_from_json(p["initial_params"]);
        people.push_back(std::move(det));
    }
    return {image, std::move(people)};
}

}  // namespace apu
