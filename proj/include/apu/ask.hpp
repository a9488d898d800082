// Candidate-pair proposal from 2D keypoints, annotator prompt construction,
// and tolerant parsing of annotator responses into InteractionAnnotation.

#pragma once

#include "apu/body.hpp"
#include "apu/error.hpp"
#include "apu/taxonomy.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <regex>
#include <string>
#include <vector>

namespace apu {

struct BBox {
    double x = 0.0, y = 0.0, w = 0.0, h = 0.0;

    double diagonal() const { return std::sqrt(w * w + h * h); }
    BBox union_with(const BBox& o) const {
        const double x0 = std::min(x, o.x), y0 = std::min(y, o.y);
        const double x1 = std::max(x + w, o.x + o.w), y1 = std::max(y + h, o.y + o.h);
        return {x0, y0, x1 - x0, y1 - y0};
    }
};

// Axis-aligned box around the valid keypoints; nullopt when fewer than two
// are valid.
inline std::optional<BBox> keypoint_bbox(const Keypoints2D& kps, double conf_min) {
    double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
    int n = 0;
    for (const auto& p : kps.points) {
        if (p.confidence < conf_min) continue;
        x0 = std::min(x0, p.x);
        y0 = std::min(y0, p.y);
        x1 = std::max(x1, p.x);
        y1 = std::max(y1, p.y);
        ++n;
    }
    if (n < 2) return std::nullopt;
    return BBox{x0, y0, x1 - x0, y1 - y0};
}

struct PersonDetection {
    int id = 0;
    Keypoints2D keypoints;
    BBox bbox;
    std::optional<BodyParams> initial_params;
};

struct CandidatePair {
    int person_a = 0;
    int person_b = 0;
    std::string image;
    BBox pair_bbox;
    std::optional<std::string> action;
};

struct InteractionAnnotation {
    struct Contact {
        BodyPart part_left;   // on person a
        BodyPart part_right;  // on person b
        double confidence = 1.0;

        bool operator==(const Contact&) const = default;
    };

    std::string interaction;
    std::string person_left;
    std::string person_right;
    std::string orientation;
    std::vector<Contact> contacts;
    int warnings = 0;  // entries dropped or fields defaulted during parsing

    bool operator==(const InteractionAnnotation& o) const {
        return interaction == o.interaction && person_left == o.person_left &&
               person_right == o.person_right && orientation == o.orientation &&
               contacts == o.contacts;
    }
};

// ---------------------------------------------------------------------------
// Candidate proposal

struct ProposeConfig {
    int k_min = 6;            // valid keypoints required per person
    double d_max = 0.35;      // max normalized min keypoint distance
    double kp_conf_min = 0.3; // keypoint validity floor
    double align_max = 50.0;  // px; initial-params agreement gate

    // Needed only for the initial-params alignment check.
    const BodyModelAsset* asset = nullptr;
    const Camera* camera = nullptr;
};

namespace detail {

// Mean pixel distance between detected keypoints and the reprojection of
// the person's initial parameter estimate.
inline std::optional<double> alignment_error(const PersonDetection& person,
                                             const BodyModelAsset& asset, const Camera& camera,
                                             double conf_min) {
    const auto posed = forward_kinematics(asset, *person.initial_params);
    const auto model = model_keypoints(posed, asset);
    double sum = 0.0;
    int n = 0;
    for (const auto& mk : model) {
        if (mk.keypoint >= static_cast<int>(person.keypoints.points.size())) continue;
        const auto& det = person.keypoints.points[mk.keypoint];
        if (det.confidence < conf_min) continue;
        const auto proj = project(camera, mk.position);
        if (!proj.valid) continue;
        sum += std::hypot(proj.u - det.x, proj.v - det.y);
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

}  // namespace detail

// Proposes every unordered pair whose members each have >= k_min valid
// keypoints and whose closest valid keypoints lie within d_max, normalized
// by the mean bbox diagonal. Person a is the one whose bbox center is
// further left (ties by id).
inline std::vector<CandidatePair> propose_candidates(const std::vector<PersonDetection>& people,
                                                     const ProposeConfig& cfg,
                                                     const std::string& image = {},
                                                     const std::optional<std::string>& action = {}) {
    std::vector<const PersonDetection*> eligible;
    for (const auto& p : people)
        if (p.keypoints.valid_count(cfg.kp_conf_min) >= cfg.k_min) eligible.push_back(&p);

    std::vector<CandidatePair> out;
    for (size_t i = 0; i < eligible.size(); ++i) {
        for (size_t j = i + 1; j < eligible.size(); ++j) {
            const auto& a = *eligible[i];
            const auto& b = *eligible[j];
            const double scale = 0.5 * (a.bbox.diagonal() + b.bbox.diagonal());
            if (scale <= 0.0) continue;

            double best = 1e30;
            for (const auto& pa : a.keypoints.points) {
                if (pa.confidence < cfg.kp_conf_min) continue;
                for (const auto& pb : b.keypoints.points) {
                    if (pb.confidence < cfg.kp_conf_min) continue;
                    best = std::min(best, std::hypot(pa.x - pb.x, pa.y - pb.y));
                }
            }
            if (best / scale > cfg.d_max) continue;

            if (cfg.asset && cfg.camera) {
                bool misaligned = false;
                for (const auto* person : {&a, &b}) {
                    if (!person->initial_params) continue;
                    const auto err = detail::alignment_error(*person, *cfg.asset, *cfg.camera,
                                                             cfg.kp_conf_min);
                    if (err && *err > cfg.align_max) misaligned = true;
                }
                if (misaligned) continue;
            }

            const PersonDetection* first = &a;
            const PersonDetection* second = &b;
            const double ca = a.bbox.x + 0.5 * a.bbox.w;
            const double cb = b.bbox.x + 0.5 * b.bbox.w;
            if (cb < ca || (cb == ca && b.id < a.id)) std::swap(first, second);
            out.push_back({first->id, second->id, image, first->bbox.union_with(second->bbox),
                           action});
        }
    }
    std::sort(out.begin(), out.end(), [](const CandidatePair& l, const CandidatePair& r) {
        return l.person_a != r.person_a ? l.person_a < r.person_a : l.person_b < r.person_b;
    });
    return out;
}

inline std::vector<CandidatePair> propose_candidates(const std::vector<PersonDetection>& people,
                                                     int k_min, double d_max) {
    ProposeConfig cfg;
    cfg.k_min = k_min;
    cfg.d_max = d_max;
    return propose_candidates(people, cfg);
}

// ---------------------------------------------------------------------------
// Prompt construction

namespace detail {

inline const char* prompt_prefix() {
    return R"__(Overview:
- You are participating in an image annotation project.
Your task is to annotate images where two people are interacting,
specifically identifying where their bodies touch.
Example:
- The first image is an example.
{"interaction": "hugging",
 "people": {"person_left": "woman wearing red hugging a child",
            "person_right": "child in a plaid shirt hugging a woman"},
 "orientation": "front to front",
 "contacts": [
    {"body_part_person_left":
        {"part_name: "upper arm", "body_side": "right"},
    "body_part_person_right":
        {"part_name: "forearm", "body_side": "left"},
    "confidence": 0.8},
    {"body_part_person_left":
        {"part_name: "hand", "body_side": "left"},
    "body_part_person_right":
        {"part_name: "back", "body_side": "right"},
    "confidence": 0.7}]
}
)__";
}

inline const char* prompt_instructions_plain() {
    return R"__(Instructions:
1. Examine the second image carefully.
)__";
}

inline const char* prompt_instructions_action() {
    return R"__(Instructions:
1. Examine the second image of two people performing the action {action}
carefully.
)__";
}

inline const char* prompt_instructions_rest() {
    return R"__(2. Annotate each point where body parts from the two individuals
make contact.
3. For each annotation, clearly specify:
    - Indicate which person (e.g., person on the left, person on the
    right) the body part belongs to.
    - The body part involved for each person and body side (either right
    or left or both)
    - The confidence level of that the contact is happening (0.0 - 1.0)

)__";
}

inline const char* prompt_suffix() {
    return R"__(Output Requirements:
- Provide annotations in the following format:
{"interaction": "type of interaction",
 "people": {"person_left": "description of the person on the left",
           "person_right": "description of the person on the right"},
 "orientation": "orientation of the people (e.g., front to front,
 back to front, back to back, side to side)",
 "contacts": [
    {"body_part_person_left":
            {"part_name: "...", "body_side": "..."},
        "body_part_person_right":
            {"part_name: "...", "body_side": "..."},
        "confidence": 0.0 - 1.0},
    // More annotations here ]
}
- Use only this list of body part name: {body_parts}
Note:
- Aim for comprehensive coverage of all contact points, even those that
might appear minimal.
)__";
}

inline std::string replace_all(std::string text, const std::string& needle,
                               const std::string& value) {
    size_t pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        text.replace(pos, needle.size(), value);
        pos += value.size();
    }
    return text;
}

}  // namespace detail

// Assembles the annotator prompt. {body_parts} is substituted with the
// comma-joined vocabulary; when an action label is given, instruction 1
// names it.
inline std::string build_prompt(const std::vector<std::string>& vocabulary,
                                const std::optional<std::string>& action = {}) {
    std::string parts;
    for (const auto& p : vocabulary) parts += (parts.empty() ? "" : ", ") + p;

    std::string prompt = detail::prompt_prefix();
    if (action) {
        prompt += detail::replace_all(detail::prompt_instructions_action(), "{action}", *action);
    } else {
        prompt += detail::prompt_instructions_plain();
    }
    prompt += detail::prompt_instructions_rest();
    prompt += detail::replace_all(detail::prompt_suffix(), "{body_parts}", parts);
    return prompt;
}

inline std::string build_prompt(const std::optional<std::string>& action = {}) {
    return build_prompt(part_vocabulary(), action);
}

// ---------------------------------------------------------------------------
// Response parsing

namespace detail {

// Repairs the characteristic malformed key pattern `"name: "value"` (the
// key's closing quote folded into the colon) into `"name": "value"`.
inline std::string repair_key_quotes(const std::string& text) {
    static const std::regex broken(R"__("([A-Za-z_][A-Za-z0-9_]*): ")__");
    return std::regex_replace(text, broken, "\"$1\": \"");
}

// Removes //-to-end-of-line comments outside string literals.
inline std::string strip_line_comments(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool in_string = false;
    for (size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            out += c;
            if (c == '\\' && i + 1 < text.size()) {
                out += text[++i];
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out += c;
        } else if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
            while (i < text.size() && text[i] != '\n') ++i;
            if (i < text.size()) out += '\n';
        } else {
            out += c;
        }
    }
    return out;
}

// First balanced {...} object, tracking strings and escapes.
inline std::optional<std::string> extract_object(const std::string& text) {
    const size_t start = text.find('{');
    if (start == std::string::npos) return std::nullopt;
    int depth = 0;
    bool in_string = false;
    for (size_t i = start; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{') ++depth;
        else if (c == '}' && --depth == 0) return text.substr(start, i - start + 1);
    }
    return std::nullopt;
}

inline std::optional<BodyPart> parse_contact_part(const nlohmann::json& j, int& warnings) {
    if (!j.is_object() || !j.contains("part_name")) {
        ++warnings;
        return std::nullopt;
    }
    Side side = Side::none;
    if (j.contains("body_side") && j["body_side"].is_string()) {
        try {
            side = side_from_string(j["body_side"].get<std::string>());
        } catch (const ParseError&) {
            ++warnings;  // unrecognized side; fall back to none
        }
    }
    const std::string raw = j["part_name"].is_string() ? j["part_name"].get<std::string>() : "";
    try {
        return make_body_part(raw, side);
    } catch (const ValidationError&) {
        ++warnings;  // out-of-vocabulary part: drop the entry
        return std::nullopt;
    }
}

}  // namespace detail

// Parses annotator output: extracts the first JSON object (code fences and
// prose around it are ignored), repairs the known key-quote defect, strips
// // comments, and validates the contact schema. Out-of-vocabulary parts
// drop their entry and bump `warnings`.
inline InteractionAnnotation parse_annotation(const std::string& raw) {
    const std::string repaired = detail::strip_line_comments(detail::repair_key_quotes(raw));
    const auto object = detail::extract_object(repaired);
    if (!object) throw ParseError("no JSON object found in annotator response");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(*object);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("annotator response is not valid JSON: ") + e.what());
    }

    if (!j.contains("contacts") || !j["contacts"].is_array())
        throw SchemaError("annotator response lacks a \"contacts\" array");

    InteractionAnnotation ann;
    if (j.contains("interaction") && j["interaction"].is_string())
        ann.interaction = j["interaction"].get<std::string>();
    if (j.contains("people") && j["people"].is_object()) {
        const auto& people = j["people"];
        if (people.contains("person_left") && people["person_left"].is_string())
            ann.person_left = people["person_left"].get<std::string>();
        if (people.contains("person_right") && people["person_right"].is_string())
            ann.person_right = people["person_right"].get<std::string>();
    }
    if (j.contains("orientation") && j["orientation"].is_string())
        ann.orientation = j["orientation"].get<std::string>();

    for (const auto& c : j["contacts"]) {
        if (!c.is_object() || !c.contains("body_part_person_left") ||
            !c.contains("body_part_person_right")) {
            ++ann.warnings;
            continue;
        }
        const auto left = detail::parse_contact_part(c["body_part_person_left"], ann.warnings);
        const auto right = detail::parse_contact_part(c["body_part_person_right"], ann.warnings);
        if (!left || !right) continue;
        double conf = 1.0;  // missing confidence treated as certain
        if (c.contains("confidence") && c["confidence"].is_number())
            conf = std::clamp(c["confidence"].get<double>(), 0.0, 1.0);
        ann.contacts.push_back({*left, *right, conf});
    }
    return ann;
}

// Clean serialization; parse_annotation(annotation_to_json(a).dump()) == a.
inline nlohmann::json annotation_to_json(const InteractionAnnotation& ann) {
    nlohmann::json j;
    j["interaction"] = ann.interaction;
    j["people"] = {{"person_left", ann.person_left}, {"person_right", ann.person_right}};
    j["orientation"] = ann.orientation;
    j["contacts"] = nlohmann::json::array();
    for (const auto& c : ann.contacts) {
        j["contacts"].push_back(
            {{"body_part_person_left",
              {{"part_name", c.part_left.name}, {"body_side", to_string(c.part_left.side)}}},
             {"body_part_person_right",
              {{"part_name", c.part_right.name}, {"body_side", to_string(c.part_right.side)}}},
             {"confidence", c.confidence}});
    }
    return j;
}

}  // namespace apu
