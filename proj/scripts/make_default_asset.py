#!/usr/bin/env python3
"""Generate assets/default_body.json, the default articulated body asset.

The asset defines a 22-joint kinematic tree (root pelvis + 21 articulated
joints), adult and infant rest offsets, a 10-dim bone-length shape basis,
one capsule per bone, ~3 surface samples for each of the 75 contact
regions, the 17-keypoint detector convention, and the part/side -> region
table. Lateral regions are authored for the left side and mirrored
analytically so the rest pose is exactly symmetric about the x = 0 plane.

The script re-checks every invariant the C++ loader enforces (tree shape,
region coverage, mirror symmetry) before writing the file.
"""

import json
import math
import os
import sys

# --------------------------------------------------------------------------
# Small vector helpers (the asset is tiny; no numpy needed).

def v_add(a, b):
    return [a[0] + b[0], a[1] + b[1], a[2] + b[2]]

def v_scale(a, s):
    return [a[0] * s, a[1] * s, a[2] * s]

def v_dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]

def v_cross(a, b):
    return [a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0]]

def v_norm(a):
    return math.sqrt(v_dot(a, a))

def v_unit(a):
    n = v_norm(a)
    return [a[0] / n, a[1] / n, a[2] / n]

def mirror(p):
    return [-p[0], p[1], p[2]]

# --------------------------------------------------------------------------
# Skeleton. Parent-relative adult offsets in meters; rest pose stands on
# y-up with the front of the body facing +z. Arms are in T-pose along x.

JOINTS = [
    # (name, parent, adult offset, infant bone scale)
    ("pelvis",     -1, [0.0,    0.0,    0.0],   1.0),
    ("left_hip",    0, [0.088, -0.088,  0.0],   0.5),
    ("right_hip",   0, [-0.088, -0.088, 0.0],   0.5),
    ("spine1",      0, [0.0,    0.11,   0.01],  0.5),
    ("left_knee",   1, [0.0,   -0.38,   0.003], 0.42),
    ("right_knee",  2, [0.0,   -0.38,   0.003], 0.42),
    ("spine2",      3, [0.0,    0.13,   0.005], 0.5),
    ("left_ankle",  4, [0.0,   -0.40,  -0.003], 0.42),
    ("right_ankle", 5, [0.0,   -0.40,  -0.003], 0.42),
    ("spine3",      6, [0.0,    0.056,  0.002], 0.5),
    ("left_foot",   7, [0.0,   -0.06,   0.12],  0.42),
    ("right_foot",  8, [0.0,   -0.06,   0.12],  0.42),
    ("neck",        9, [0.0,    0.21,  -0.01],  0.5),
    ("left_collar", 9, [0.045,  0.10,  -0.005], 0.5),
    ("right_collar",9, [-0.045, 0.10,  -0.005], 0.5),
    ("head",       12, [0.0,    0.12,   0.01],  0.75),
    ("left_shoulder", 13, [0.095,  0.01, -0.005], 0.5),
    ("right_shoulder",14, [-0.095, 0.01, -0.005], 0.5),
    ("left_elbow",  16, [0.26,   0.0,   0.0],   0.42),
    ("right_elbow", 17, [-0.26,  0.0,   0.0],   0.42),
    ("left_wrist",  18, [0.25,   0.0,   0.0],   0.42),
    ("right_wrist", 19, [-0.25,  0.0,   0.0],   0.42),
]

MIRROR_JOINT = {1: 2, 4: 5, 7: 8, 10: 11, 13: 14, 16: 17, 18: 19, 20: 21}

# One capsule per bone (keyed by child joint): (radius, radius beta0 sens.)
CAPSULES = {
    1: (0.065, 0.15), 2: (0.065, 0.15),
    3: (0.10, 0.3), 6: (0.105, 0.3), 9: (0.10, 0.3), 12: (0.10, 0.3),
    4: (0.07, 0.15), 5: (0.07, 0.15),
    7: (0.05, 0.15), 8: (0.05, 0.15),
    10: (0.035, 0.1), 11: (0.035, 0.1),
    13: (0.05, 0.2), 14: (0.05, 0.2),
    15: (0.045, 0.1),
    16: (0.05, 0.2), 17: (0.05, 0.2),
    18: (0.045, 0.15), 19: (0.045, 0.15),
    20: (0.035, 0.1), 21: (0.035, 0.1),
}

# Bone-length shape basis: 10 directions of anthropometric variation.
def shape_row(j):
    name = JOINTS[j][0]
    row = [0.0] * 10
    if j == 0:
        return row
    row[0] = 0.1  # overall stature
    if name.endswith(("knee", "ankle")):
        row[1] = 0.15
    if name.startswith("spine") or name == "neck":
        row[2] = 0.12
    if name.endswith(("elbow", "wrist")):
        row[3] = 0.15
    if name in ("head",):
        row[4] = 0.1
    if name.endswith(("collar", "shoulder")):
        row[5] = 0.1
    if name.endswith("hip"):
        row[6] = 0.1
    if name.endswith("foot"):
        row[7] = 0.1
    if name.endswith("knee"):
        row[8] = 0.05
    if name.endswith("ankle"):
        row[8] = -0.05
    if name.endswith("elbow"):
        row[9] = 0.05
    if name.endswith("wrist"):
        row[9] = -0.05
    return row

# --------------------------------------------------------------------------
# Bone frames, matching the C++ bone_frame() exactly.

def bone_dir(j):
    return v_unit(JOINTS[j][2])

def bone_frame(d):
    ref = [1.0, 0.0, 0.0] if abs(d[0]) < 0.9 else [0.0, 0.0, 1.0]
    n1 = v_unit(v_cross(d, ref))
    n2 = v_cross(d, n1)
    return n1, n2

def psi_for(bone, world_dir):
    """Angle psi whose radial direction is the projection of world_dir."""
    d = bone_dir(bone)
    n1, n2 = bone_frame(d)
    return math.atan2(v_dot(world_dir, n2), v_dot(world_dir, n1))

def mirror_psi(bone_left, psi):
    """Angle on the mirrored bone whose radial mirrors the left radial."""
    d = bone_dir(bone_left)
    if abs(d[0]) < 0.9:
        return -psi
    return math.pi - psi

FRONT = [0.0, 0.0, 1.0]
BACK = [0.0, 0.0, -1.0]
LEFT_FLANK = [1.0, 0.0, 0.0]
RIGHT_FLANK = [-1.0, 0.0, 0.0]

# --------------------------------------------------------------------------
# Region authoring. Each region carries exactly 3 samples.

regions = []          # region id (1-based) -> list of sample dicts
part_regions = {}     # (part, side) -> [region ids]
samples = []

def new_region(bone, uvs_psis, parts_sides):
    """Register one region with its samples and the parts that own it."""
    rid = len(regions) + 1
    regions.append(rid)
    for u, psi in uvs_psis:
        samples.append({"bone": bone, "axial": round(u, 12),
                        "angle": round(psi, 12), "region": rid})
    for part, side in parts_sides:
        part_regions.setdefault((part, side), []).append(rid)
    return rid

def ring(u0, u1, psi0=0.0):
    """Three samples spread along the segment and around the circumference."""
    us = [u0 + 0.2 * (u1 - u0), u0 + 0.5 * (u1 - u0), u0 + 0.8 * (u1 - u0)]
    psis = [psi0, psi0 + 2.0 * math.pi / 3.0, psi0 + 4.0 * math.pi / 3.0]
    return list(zip(us, psis))

def patch(bone, u0, u1, world_dir, spread=0.5):
    """Three samples on one side of the bone, facing world_dir."""
    psi = psi_for(bone, world_dir)
    us = [u0 + 0.25 * (u1 - u0), u0 + 0.5 * (u1 - u0), u0 + 0.75 * (u1 - u0)]
    return [(us[0], psi - spread), (us[1], psi), (us[2], psi + spread)]

def lateral_regions(bone_left, segs, parts, kind="ring", world_dir=None):
    """Author left-side regions and their exact right-side mirrors.

    segs: list of (u0, u1). parts: part names owning the regions (the side
    is filled in per body side). Returns (left_ids, right_ids).
    """
    bone_right = MIRROR_JOINT[bone_left]
    lids, rids = [], []
    for (u0, u1) in segs:
        if kind == "ring":
            sp = ring(u0, u1)
        else:
            sp = patch(bone_left, u0, u1, world_dir)
        lids.append(new_region(bone_left, sp, [(p, "left") for p in parts]))
        mirrored = [(u, mirror_psi(bone_left, psi)) for (u, psi) in sp]
        rids.append(new_region(bone_right, mirrored, [(p, "right") for p in parts]))
    return lids, rids

def segs(u0, u1, n):
    step = (u1 - u0) / n
    return [(u0 + i * step, u0 + (i + 1) * step) for i in range(n)]

# Arms. The full "arm" part additionally owns every arm-chain region.
lateral_regions(18, segs(0.05, 0.95, 3), ["upper arm", "arm"])   # 6
lateral_regions(20, [(0.0, 0.1)], ["elbow", "arm"])              # 2
lateral_regions(20, segs(0.12, 0.98, 3), ["forearm", "arm"])     # 6
lateral_regions(20, segs(1.05, 1.35, 3), ["hand", "arm"])        # 6 (beyond wrist)
lateral_regions(16, segs(0.1, 0.95, 2), ["shoulder"])            # 4

# Legs.
lateral_regions(1, [(0.5, 1.0)], ["thigh", "leg"])               # 2 (hip crease)
lateral_regions(4, segs(0.02, 0.95, 4), ["thigh", "leg"])        # 8
lateral_regions(7, [(0.0, 0.1)], ["knee", "leg"])                # 2
lateral_regions(7, segs(0.12, 0.98, 4), ["leg"])                 # 8 (shin)
lateral_regions(10, segs(0.05, 0.95, 3), ["foot"])               # 6

def midline_regions(bone, patches, part):
    ids = []
    for (u0, u1, world_dir) in patches:
        ids.append(new_region(bone, patch(bone, u0, u1, world_dir), [(part, "none")]))
    return ids

# Torso front. Chest sits on the upper-torso bone (spine3 -> neck) plus the
# short spine3 band; stomach and waist on the lower spine bones.
midline_regions(12, [(0.05, 0.3, FRONT), (0.3, 0.55, FRONT)], "chest")       # 2
midline_regions(12, [(0.05, 0.55, [0.7, 0.0, 0.7]),
                     (0.05, 0.55, [-0.7, 0.0, 0.7])], "chest")               # 2
midline_regions(9, [(0.1, 0.9, FRONT)], "chest")                             # 1
midline_regions(6, [(0.1, 0.5, FRONT), (0.5, 0.9, FRONT),
                    (0.1, 0.9, [0.8, 0.0, 0.6])], "stomach")                 # 3
midline_regions(3, [(0.1, 0.9, FRONT), (0.1, 0.9, LEFT_FLANK),
                    (0.1, 0.9, RIGHT_FLANK)], "waist")                       # 3

# Back of the torso, shoulder blades down to the lumbar band.
midline_regions(12, [(0.05, 0.3, BACK), (0.3, 0.55, BACK)], "back")          # 2
midline_regions(12, [(0.05, 0.55, [0.6, 0.0, -0.8]),
                     (0.05, 0.55, [-0.6, 0.0, -0.8])], "back")               # 2
midline_regions(9, [(0.1, 0.9, BACK)], "back")                               # 1
midline_regions(6, [(0.1, 0.9, BACK)], "back")                               # 1
midline_regions(3, [(0.1, 0.9, BACK)], "back")                               # 1

# Neck column and skull. The skull is carried by the neck bone with axial
# coordinates beyond the head joint (u > 1).
midline_regions(15, [(0.1, 0.85, FRONT), (0.1, 0.85, BACK)], "neck")         # 2
midline_regions(15, [(1.3, 1.7, FRONT), (1.7, 2.0, FRONT)], "face")          # 2
midline_regions(15, [(1.3, 2.0, BACK)], "head")                              # 1
psi_l, psi_r = psi_for(15, LEFT_FLANK), psi_for(15, RIGHT_FLANK)
new_region(15, [(1.5, psi_l), (1.5, psi_r), (1.8, psi_l)], [("head", "none")])  # temples
new_region(15, ring(2.0, 2.15), [("head", "none")])                          # crown

# "head" also owns the face; "head" right-side coverage comes from the ring
# and flank regions above.
face_ids = part_regions[("face", "none")]
part_regions[("head", "none")] = part_regions[("head", "none")] + face_ids

REGION_COUNT = len(regions)
assert REGION_COUNT == 75, f"expected 75 regions, authored {REGION_COUNT}"

# --------------------------------------------------------------------------
# Keypoints: the standard 17-point detector convention.

KEYPOINTS = [
    (0, "nose", 15, "center"),
    (1, "left_eye", 15, "left"), (2, "right_eye", 15, "right"),
    (3, "left_ear", 15, "left"), (4, "right_ear", 15, "right"),
    (5, "left_shoulder", 16, "left"), (6, "right_shoulder", 17, "right"),
    (7, "left_elbow", 18, "left"), (8, "right_elbow", 19, "right"),
    (9, "left_wrist", 20, "left"), (10, "right_wrist", 21, "right"),
    (11, "left_hip", 1, "left"), (12, "right_hip", 2, "right"),
    (13, "left_knee", 4, "left"), (14, "right_knee", 5, "right"),
    (15, "left_ankle", 7, "left"), (16, "right_ankle", 8, "right"),
]

KP_PART_MAP = {
    "hand": [9, 10], "arm": [7, 8, 9, 10], "forearm": [7, 8, 9, 10],
    "upper arm": [5, 6, 7, 8], "elbow": [7, 8], "shoulder": [5, 6],
    "leg": [13, 14, 15, 16], "thigh": [11, 12, 13, 14], "knee": [13, 14],
    "foot": [15, 16], "chest": [5, 6], "stomach": [11, 12], "waist": [11, 12],
    "back": [5, 6, 11, 12], "neck": [5, 6], "face": [0, 1, 2, 3, 4],
    "head": [0, 1, 2, 3, 4],
}

# --------------------------------------------------------------------------
# Verification: rest-pose FK, coverage, and exact mirror symmetry.

def rest_positions():
    pos = [[0.0, 0.0, 0.0] for _ in JOINTS]
    for j, (_, parent, off, _) in enumerate(JOINTS):
        if parent >= 0:
            pos[j] = v_add(pos[parent], off)
    return pos

def sample_position(pos, s):
    bone = s["bone"]
    parent = JOINTS[bone][1]
    d = bone_dir(bone)
    n1, n2 = bone_frame(d)
    length = v_norm(JOINTS[bone][2])
    r = CAPSULES[bone][0]
    radial = v_add(v_scale(n1, math.cos(s["angle"])), v_scale(n2, math.sin(s["angle"])))
    return v_add(pos[parent], v_add(v_scale(d, s["axial"] * length), v_scale(radial, r)))

def verify():
    pos = rest_positions()

    by_region = {}
    for s in samples:
        by_region.setdefault(s["region"], []).append(sample_position(pos, s))
    for rid in range(1, REGION_COUNT + 1):
        n = len(by_region.get(rid, []))
        assert n == 3, f"region {rid} has {n} samples"

    covered = set()
    for ids in part_regions.values():
        covered.update(ids)
    assert covered == set(range(1, REGION_COUNT + 1)), "part table must cover all regions"
    for (part, side), ids in part_regions.items():
        if side == "left":
            other = set(part_regions.get((part, "right"), []))
            assert not (set(ids) & other), f"left/right overlap for {part}"

    # Mirror symmetry: every left-part sample must have an exact twin.
    for (part, side), ids in part_regions.items():
        if side != "left":
            continue
        rids = part_regions[(part, "right")]
        left_pts = [p for rid in ids for p in by_region[rid]]
        right_pts = [p for rid in rids for p in by_region[rid]]
        for p in left_pts:
            q = mirror(p)
            best = min(v_norm([q[0]-r[0], q[1]-r[1], q[2]-r[2]]) for r in right_pts)
            assert best < 1e-9, f"asymmetry {best:.2e} in part {part}"

    for j, (name, parent, off, _) in enumerate(JOINTS):
        if j == 0:
            continue
        assert 0 <= parent < j, f"parent ordering broken at {name}"
        assert v_norm(off) > 1e-6, f"zero-length bone {name}"
        if j in MIRROR_JOINT:
            tw = MIRROR_JOINT[j]
            d = v_norm([mirror(pos[j])[k] - pos[tw][k] for k in range(3)])
            assert d < 1e-9, f"joint {name} not mirrored"

    for part in KP_PART_MAP:
        sides = [s for (p, s) in part_regions if p == part]
        assert sides, f"kp_part_map part '{part}' missing from region table"

verify()

# --------------------------------------------------------------------------
# Emit.

def infant_offset(j):
    _, _, off, scale = JOINTS[j]
    return [round(c * scale, 6) for c in off]

asset = {
    "schema_version": 1,
    "joint_count": len(JOINTS),
    "region_count": REGION_COUNT,
    "joint_names": [j[0] for j in JOINTS],
    "parent_index": [j[1] for j in JOINTS],
    "rest_offsets_adult": [j[2] for j in JOINTS],
    "rest_offsets_infant": [infant_offset(j) for j in range(len(JOINTS))],
    "shape_basis": [shape_row(j) for j in range(len(JOINTS))],
    "capsules": [{"joint": j, "radius": r, "radius_shape_sensitivity": s}
                 for j, (r, s) in sorted(CAPSULES.items())],
    "surface_samples": samples,
    "keypoint_map": [{"keypoint": k, "name": n, "joint": j, "side": s}
                     for (k, n, j, s) in KEYPOINTS],
    "kp_part_map": KP_PART_MAP,
    "part_regions": [{"part": part, "side": side, "regions": ids}
                     for (part, side), ids in sorted(part_regions.items())],
}

out = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                   "assets", "default_body.json")
os.makedirs(os.path.dirname(out), exist_ok=True)
with open(out, "w") as f:
    json.dump(asset, f, indent=1)
    f.write("\n")

print(f"wrote {out}: {len(JOINTS)} joints, {REGION_COUNT} regions, "
      f"{len(samples)} samples, {len(part_regions)} part entries")
