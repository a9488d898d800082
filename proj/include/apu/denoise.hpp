// Chirality correction: annotators confuse left and right; 2D keypoint
// geometry decides which side assignment is most plausible, preserving the
// same-side/opposite-side pattern of each entry.

#pragma once

#include "apu/ask.hpp"
#include "apu/body.hpp"
#include "apu/taxonomy.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <vector>

namespace apu {

using KpPartMap = std::map<std::string, std::vector<int>>;

namespace detail {

inline bool kp_matches_side(Laterality tag, Side side) {
    switch (side) {
        case Side::left: return tag == Laterality::left || tag == Laterality::center;
        case Side::right: return tag == Laterality::right || tag == Laterality::center;
        default: return true;
    }
}

inline std::vector<const Keypoint2D*> part_keypoints(const Keypoints2D& kps, const BodyPart& part,
                                                     const KpPartMap& kp_part_map,
                                                     double conf_min) {
    std::vector<const Keypoint2D*> out;
    const auto it = kp_part_map.find(part.name);
    if (it == kp_part_map.end()) return out;
    for (int id : it->second) {
        if (id < 0 || id >= static_cast<int>(kps.points.size())) continue;
        const auto& p = kps.points[id];
        if (p.confidence < conf_min) continue;
        if (!kp_matches_side(p.side, part.side)) continue;
        out.push_back(&p);
    }
    return out;
}

}  // namespace detail

// Minimum pixel distance between the valid keypoints evidencing part_a on
// person a and part_b on person b, normalized by the mean keypoint-bbox
// diagonal. nullopt ("unknown") when either part has no valid evidence.
inline std::optional<double> part_keypoint_distance(const Keypoints2D& kps_a,
                                                    const Keypoints2D& kps_b,
                                                    const BodyPart& part_a, const BodyPart& part_b,
                                                    const KpPartMap& kp_part_map,
                                                    double conf_min = 0.3) {
    const auto ka = detail::part_keypoints(kps_a, part_a, kp_part_map, conf_min);
    const auto kb = detail::part_keypoints(kps_b, part_b, kp_part_map, conf_min);
    if (ka.empty() || kb.empty()) return std::nullopt;

    const auto box_a = keypoint_bbox(kps_a, conf_min);
    const auto box_b = keypoint_bbox(kps_b, conf_min);
    if (!box_a || !box_b) return std::nullopt;
    const double scale = 0.5 * (box_a->diagonal() + box_b->diagonal());
    if (scale <= 0.0) return std::nullopt;

    double best = 1e30;
    for (const auto* pa : ka)
        for (const auto* pb : kb)
            best = std::min(best, std::hypot(pa->x - pb->x, pa->y - pb->y));
    return best / scale;
}

// Corrects one contact's sides. Candidate combinations preserve the
// entry's same/opposite-side pattern: definite lateral sides flip together;
// midline and side=both parts are fixed. Missing keypoint evidence
// ("unknown") never causes a swap.
inline DenoisedContact denoise_chirality(const InteractionAnnotation::Contact& entry,
                                         const Keypoints2D& kps_a, const Keypoints2D& kps_b,
                                         const KpPartMap& kp_part_map, double conf_min = 0.3) {
    auto definite = [](const BodyPart& p) {
        return p.side == Side::left || p.side == Side::right;
    };
    auto flipped = [](BodyPart p) {
        p.side = p.side == Side::left ? Side::right : Side::left;
        return p;
    };

    const std::pair<BodyPart, BodyPart> original{entry.part_left, entry.part_right};
    std::vector<std::pair<BodyPart, BodyPart>> candidates{original};
    if (definite(entry.part_left) && definite(entry.part_right)) {
        candidates.push_back({flipped(entry.part_left), flipped(entry.part_right)});
    } else if (definite(entry.part_left)) {
        candidates.push_back({flipped(entry.part_left), entry.part_right});
    } else if (definite(entry.part_right)) {
        candidates.push_back({entry.part_left, flipped(entry.part_right)});
    }

    DenoisedContact out;
    out.part_left = entry.part_left;
    out.part_right = entry.part_right;
    out.confidence = entry.confidence;
    out.swapped = false;

    auto distance = [&](const std::pair<BodyPart, BodyPart>& c) {
        return part_keypoint_distance(kps_a, kps_b, c.first, c.second, kp_part_map, conf_min);
    };

    const auto d_orig = distance(original);
    if (!d_orig) {
        out.proximity_weight = 1.0;  // no evidence: keep the prediction, neutral weight
        return out;
    }

    auto best = original;
    double best_d = *d_orig;
    bool comparable = true;
    for (size_t i = 1; i < candidates.size(); ++i) {
        const auto d = distance(candidates[i]);
        if (!d) {
            comparable = false;  // cannot evaluate the alternative: do not swap
            break;
        }
        if (*d < best_d) {
            best = candidates[i];
            best_d = *d;
        }
    }
    if (!comparable) {
        out.proximity_weight = std::exp(-*d_orig);
        return out;
    }

    out.part_left = best.first;
    out.part_right = best.second;
    out.swapped = !(best == original);
    out.proximity_weight = std::exp(-best_d);
    return out;
}

// Entry-wise correction preserving order, then deduplication of entries
// identical after correction (the survivor keeps the highest confidence).
inline std::vector<DenoisedContact> denoise_annotation(const InteractionAnnotation& ann,
                                                       const Keypoints2D& kps_a,
                                                       const Keypoints2D& kps_b,
                                                       const KpPartMap& kp_part_map,
                                                       double conf_min = 0.3) {
    std::vector<DenoisedContact> out;
    for (const auto& entry : ann.contacts) {
        const auto corrected = denoise_chirality(entry, kps_a, kps_b, kp_part_map, conf_min);
        bool merged = false;
        for (auto& existing : out) {
            if (existing.part_left == corrected.part_left &&
                existing.part_right == corrected.part_right) {
                if (corrected.confidence > existing.confidence) {
                    existing.confidence = corrected.confidence;
                    existing.proximity_weight = corrected.proximity_weight;
                    existing.swapped = corrected.swapped;
                }
                merged = true;
                break;
            }
        }
        if (!merged) out.push_back(corrected);
    }
    return out;
}

}  // namespace apu
