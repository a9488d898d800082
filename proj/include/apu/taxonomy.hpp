// Body-part vocabulary, part -> surface-region lookup, and the two-person
// contact map with its soft weights.
//
// Region ids are 1-based (1..R) everywhere; matrices translate internally.

#pragma once

#include "apu/error.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace apu {

enum class Side { left, right, both, none };

inline const char* to_string(Side s) {
    switch (s) {
        case Side::left: return "left";
        case Side::right: return "right";
        case Side::both: return "both";
        default: return "none";
    }
}

inline Side side_from_string(const std::string& s) {
    if (s == "left") return Side::left;
    if (s == "right") return Side::right;
    if (s == "both") return Side::both;
    if (s == "none" || s.empty()) return Side::none;
    throw ParseError("unknown body side '" + s + "' (expected left, right, both or none)");
}

// The 17-part vocabulary used when querying the annotator.
inline const std::vector<std::string>& part_vocabulary() {
    static const std::vector<std::string> parts = {
        "hand", "arm", "leg", "thigh", "chest", "stomach", "back", "neck", "face",
        "head", "foot", "shoulder", "elbow", "knee", "forearm", "upper arm", "waist"};
    return parts;
}

inline bool is_midline_part(const std::string& name) {
    static const std::set<std::string> midline = {"chest", "stomach", "back", "neck",
                                                  "face", "head", "waist"};
    return midline.count(name) > 0;
}

inline bool is_vocabulary_part(const std::string& name) {
    const auto& v = part_vocabulary();
    return std::find(v.begin(), v.end(), name) != v.end();
}

inline std::string canonical_part_name(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    const auto first = name.find_first_not_of(" \t");
    const auto last = name.find_last_not_of(" \t");
    if (first == std::string::npos) return "";
    name = name.substr(first, last - first + 1);
    // collapse internal runs of whitespace ("upper  arm" -> "upper arm")
    std::string out;
    bool in_space = false;
    for (char c : name) {
        if (c == ' ' || c == '\t') {
            if (!in_space) out += ' ';
            in_space = true;
        } else {
            out += c;
            in_space = false;
        }
    }
    return out;
}

struct BodyPart {
    std::string name;
    Side side = Side::none;

    bool operator==(const BodyPart&) const = default;
    bool operator<(const BodyPart& o) const {
        return name != o.name ? name < o.name : side < o.side;
    }
};

// Validated constructor: checks vocabulary membership and forces midline
// parts to side = none.
inline BodyPart make_body_part(const std::string& raw_name, Side side) {
    const std::string name = canonical_part_name(raw_name);
    if (!is_vocabulary_part(name)) {
        std::string vocab;
        for (const auto& p : part_vocabulary()) vocab += (vocab.empty() ? "" : ", ") + p;
        throw ValidationError("unknown body part '" + name + "' (vocabulary: " + vocab + ")");
    }
    if (is_midline_part(name)) side = Side::none;
    return BodyPart{name, side};
}

// Map from (part name, side) to the region ids covering it on the body
// surface. Midline parts are stored under Side::none.
struct PartRegionTable {
    std::map<std::pair<std::string, Side>, std::vector<int>> entries;
    int region_count = 0;

    const std::vector<int>* find(const std::string& name, Side side) const {
        auto it = entries.find({name, side});
        return it == entries.end() ? nullptr : &it->second;
    }
};

// Checks the table invariants: full 1..R coverage and disjoint lateral sets.
inline void validate_part_region_table(const PartRegionTable& table) {
    std::vector<char> covered(table.region_count + 1, 0);
    for (const auto& [key, regions] : table.entries) {
        for (int r : regions) {
            if (r < 1 || r > table.region_count)
                throw ValidationError("region id " + std::to_string(r) + " out of range for part '" +
                                      key.first + "'");
            covered[r] = 1;
        }
    }
    for (int r = 1; r <= table.region_count; ++r)
        if (!covered[r]) throw ValidationError("region " + std::to_string(r) + " unassigned");

    for (const auto& [key, regions] : table.entries) {
        if (key.second != Side::left) continue;
        const auto* right = table.find(key.first, Side::right);
        if (!right) throw ValidationError("part '" + key.first + "' has a left entry but no right");
        std::set<int> l(regions.begin(), regions.end());
        for (int r : *right)
            if (l.count(r))
                throw ValidationError("part '" + key.first + "' shares region " + std::to_string(r) +
                                      " between left and right");
    }
}

inline std::vector<int> regions_of(const PartRegionTable& table, const BodyPart& part) {
    make_body_part(part.name, part.side);  // vocabulary check
    if (part.side == Side::both) {
        const auto* l = table.find(part.name, Side::left);
        const auto* r = table.find(part.name, Side::right);
        if (!l || !r)
            throw ValidationError("part '" + part.name + "' has no lateral entries for side=both");
        std::vector<int> out(l->begin(), l->end());
        out.insert(out.end(), r->begin(), r->end());
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }
    const auto* e = table.find(part.name, part.side);
    if (!e)
        throw ValidationError("no region entry for part '" + part.name + "' side " +
                              to_string(part.side));
    return *e;
}

// Binary R x R contact map; rows index regions on person a, columns on b.
struct ContactMap {
    int regions = 0;
    std::vector<uint8_t> cells;  // row-major, (region-1) indexed

    ContactMap() = default;
    explicit ContactMap(int r) : regions(r), cells(static_cast<size_t>(r) * r, 0) {}

    uint8_t at(int region_a, int region_b) const {
        return cells[static_cast<size_t>(region_a - 1) * regions + (region_b - 1)];
    }
    void set(int region_a, int region_b, uint8_t v) {
        cells[static_cast<size_t>(region_a - 1) * regions + (region_b - 1)] = v;
    }
    bool any() const {
        return std::any_of(cells.begin(), cells.end(), [](uint8_t c) { return c != 0; });
    }
    bool operator==(const ContactMap&) const = default;
};

struct SoftWeights {
    int regions = 0;
    std::vector<double> cells;

    SoftWeights() = default;
    explicit SoftWeights(int r) : regions(r), cells(static_cast<size_t>(r) * r, 0.0) {}

    double at(int region_a, int region_b) const {
        return cells[static_cast<size_t>(region_a - 1) * regions + (region_b - 1)];
    }
    void set(int region_a, int region_b, double v) {
        cells[static_cast<size_t>(region_a - 1) * regions + (region_b - 1)] = v;
    }
    bool operator==(const SoftWeights&) const = default;
};

// One annotator contact after chirality correction.
struct DenoisedContact {
    BodyPart part_left;   // on person a
    BodyPart part_right;  // on person b
    double confidence = 1.0;
    double proximity_weight = 1.0;
    bool swapped = false;

    bool operator==(const DenoisedContact&) const = default;
};

// Expands part-level contacts into region cells. W combines
// confidence x proximity per entry, max over contributing entries.
inline std::pair<ContactMap, SoftWeights> build_contact_map(
    const std::vector<DenoisedContact>& contacts, const PartRegionTable& table,
    double confidence_floor = 0.3) {
    ContactMap c(table.region_count);
    SoftWeights w(table.region_count);
    for (const auto& entry : contacts) {
        if (entry.confidence < confidence_floor) continue;
        const double weight = entry.confidence * entry.proximity_weight;
        for (int i : regions_of(table, entry.part_left)) {
            for (int j : regions_of(table, entry.part_right)) {
                c.set(i, j, 1);
                if (weight > w.at(i, j)) w.set(i, j, weight);
            }
        }
    }
    return {std::move(c), std::move(w)};
}

// Transposes both matrices (relabels which person is "a").
inline std::pair<ContactMap, SoftWeights> swap_persons(const ContactMap& c, const SoftWeights& w) {
    ContactMap ct(c.regions);
    SoftWeights wt(w.regions);
    for (int i = 1; i <= c.regions; ++i) {
        for (int j = 1; j <= c.regions; ++j) {
            ct.set(j, i, c.at(i, j));
            wt.set(j, i, w.at(i, j));
        }
    }
    return {std::move(ct), std::move(wt)};
}

}  // namespace apu
