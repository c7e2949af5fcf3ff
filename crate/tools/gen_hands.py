#!/usr/bin/env python3
"""Regenerates the shipped hand description files under crates/core/assets/hands.

Surface samples and collision spheres are derived from simple link primitives
(boxes and capped cylinders); edit the parameters below and rerun.
"""
import math
import pathlib

OUT = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "assets" / "hands"


def fmt(v):
    return "[" + ", ".join(f"{x:.5f}".rstrip("0").rstrip(".") if abs(x) > 1e-12 else "0.0" for x in v) + "]"


def fix(s):
    # keep TOML floats explicit
    out = []
    for tok in s.strip("[]").split(", "):
        if "." not in tok and "e" not in tok:
            tok = tok + ".0"
        out.append(tok)
    return "[" + ", ".join(out) + "]"


def vec(v):
    return fix(fmt(v))


def box_points(lo, hi, front_step, other_step):
    """Surface samples of an axis-aligned box; denser on the +z face."""
    pts = set()

    def axis_vals(a, b, step):
        n = max(1, int(round((b - a) / step)))
        return [a + (b - a) * i / n for i in range(n + 1)]

    xs_f, ys_f = axis_vals(lo[0], hi[0], front_step), axis_vals(lo[1], hi[1], front_step)
    for x in xs_f:
        for y in ys_f:
            pts.add((round(x, 6), round(y, 6), round(hi[2], 6)))
    xs, ys, zs = (axis_vals(lo[i], hi[i], other_step) for i in range(3))
    for x in xs:
        for y in ys:
            pts.add((round(x, 6), round(y, 6), round(lo[2], 6)))
    for x in xs:
        for z in zs:
            pts.add((round(x, 6), round(lo[1], 6), round(z, 6)))
            pts.add((round(x, 6), round(hi[1], 6), round(z, 6)))
    for y in ys:
        for z in zs:
            pts.add((round(lo[0], 6), round(y, 6), round(z, 6)))
            pts.add((round(hi[0], 6), round(y, 6), round(z, 6)))
    return sorted(pts)


def cylinder_points(axis, length, radius, ring_step, per_ring, tip):
    """Rings around a link's long axis (`axis` is 'x' or 'y' or 'z'), optional rounded tip."""
    pts = []
    n = max(1, int(math.ceil(length / ring_step)))
    for i in range(n + 1):
        s = length * i / n
        for k in range(per_ring):
            a = 2 * math.pi * k / per_ring
            u, v = radius * math.cos(a), radius * math.sin(a)
            pts.append(place(axis, s, u, v))
    if tip:
        for k in range(per_ring // 2):
            a = 2 * math.pi * k / (per_ring // 2)
            r = radius * 0.6
            pts.append(place(axis, length + radius * 0.8, r * math.cos(a), r * math.sin(a)))
        pts.append(place(axis, length + radius, 0.0, 0.0))
    return pts


def place(axis, s, u, v):
    # (along, first perpendicular, second perpendicular); the second
    # perpendicular is always the pad side.
    if axis == "y":
        return (u, s, v)
    if axis == "z":
        return (u, v, s)
    return (s, u, v)


def spheres_along(axis, length, radius, step):
    out = []
    n = max(1, int(math.ceil((length) / step)))
    for i in range(n + 1):
        s = min(length, radius * 0.5 + (length - radius * 0.5) * i / n)
        out.append((place(axis, s, 0.0, 0.0), radius))
    return out


def emit(name, base, approach, rest, ignore, joints, links, oses, header):
    lines = [header.rstrip(), "", f'name = "{name}"', f'base_link = "{base}"', f"approach_axis = {vec(approach)}",
             f"rest_pose = {vec(rest)}"]
    lines.append("collision_ignore = [" + ", ".join(f'["{a}", "{b}"]' for a, b in ignore) + "]")
    lines.append("")
    for j in joints:
        lines += ["[[joints]]", f'name = "{j["name"]}"', f'parent = "{j["parent"]}"', f'child = "{j["child"]}"',
                  f"axis = {vec(j['axis'])}",
                  f"origin = {{ xyz = {vec(j['xyz'])}, rpy = {vec(j.get('rpy', (0, 0, 0)))} }}",
                  f"lower = {j['lower']}", f"upper = {j['upper']}", ""]
    for l in links:
        lines += ["[[links]]", f'name = "{l["name"]}"']
        lines.append("points = [" + ", ".join(vec(p) for p in l["points"]) + "]")
        lines.append("spheres = [" + ", ".join(f"{{ center = {vec(c)}, radius = {r} }}" for c, r in l["spheres"]) + "]")
        lines.append("")
    for o in oses:
        lines += ["[[opposition_spaces]]", f'label = "{o["label"]}"',
                  "joint_mask = [" + ", ".join(str(b) for b in o["mask"]) + "]", "contacts = ["]
        for c in o["contacts"]:
            lines.append(f'  {{ link = "{c[0]}", point = {vec(c[1])}, normal = {vec(c[2])}, side = "{c[3]}" }},')
        lines += ["]", ""]
    return "\n".join(lines)


def toy():
    r = 0.01
    joints, links = [], []
    palm_lo, palm_hi = (-0.02, -0.06, -0.02), (0.02, 0.06, 0.0)
    links.append({"name": "palm", "points": box_points(palm_lo, palm_hi, 0.01, 0.02),
                  "spheres": [((0.0, y, -0.01), 0.012) for y in (-0.05, -0.03, -0.01, 0.01, 0.03, 0.05)]})
    for f, y0, ax in (("a", 0.05, (1, 0, 0)), ("b", -0.05, (-1, 0, 0))):
        joints.append({"name": f"{f}0", "parent": "palm", "child": f"{f}_prox", "axis": ax, "xyz": (0, y0, 0),
                       "lower": -0.6, "upper": 1.4})
        joints.append({"name": f"{f}1", "parent": f"{f}_prox", "child": f"{f}_dist", "axis": ax, "xyz": (0, 0, 0.05),
                       "lower": -0.3, "upper": 1.5})
        links.append({"name": f"{f}_prox", "points": cylinder_points("z", 0.05, r, 0.01, 8, False),
                      "spheres": spheres_along("z", 0.05, r, 0.01)})
        links.append({"name": f"{f}_dist", "points": cylinder_points("z", 0.035, r, 0.01, 8, True),
                      "spheres": spheres_along("z", 0.035, r, 0.01)})
    contacts = []
    for f, sgn, side in (("a", -1, "A"), ("b", 1, "B")):
        for link, zs in ((f"{f}_prox", (0.015, 0.03, 0.045)), (f"{f}_dist", (0.01, 0.02, 0.03))):
            for z in zs:
                contacts.append((link, (0.0, sgn * r, z), (0.0, float(sgn), 0.0), side))
    oses = [{"label": "pinch", "mask": [1, 1, 1, 1], "contacts": contacts}]
    header = """# Two-finger toy gripper with four revolute joints, used for fast tests.
# Palm faces +z; fingers extend along +z and flex toward each other."""
    return emit("toy_gripper", "palm", (0, 0, 1), [-0.3, 0.0, -0.3, 0.0], [], joints, links, oses, header)


def allegro():
    fr = 0.011
    joints, links = [], []
    palm_lo, palm_hi = (-0.05, -0.095, -0.03), (0.05, 0.0, 0.0)
    palm_spheres = [((x, y, -0.015), 0.015) for x in (-0.035, -0.012, 0.012, 0.035) for y in (-0.08, -0.055, -0.03, -0.012)]
    links.append({"name": "palm", "points": box_points(palm_lo, palm_hi, 0.0125, 0.025), "spheres": palm_spheres})
    fingers = (("index", 0.034), ("middle", 0.0), ("ring", -0.034))
    lengths = {"prox": 0.054, "mid": 0.0384, "dist": 0.0267}
    for f, x in fingers:
        joints.append({"name": f"{f}_0", "parent": "palm", "child": f"{f}_base", "axis": (0, 0, 1),
                       "xyz": (x, 0.0, -0.012), "lower": -0.47, "upper": 0.47})
        joints.append({"name": f"{f}_1", "parent": f"{f}_base", "child": f"{f}_prox", "axis": (1, 0, 0),
                       "xyz": (0, 0.016, 0), "lower": -0.196, "upper": 1.61})
        joints.append({"name": f"{f}_2", "parent": f"{f}_prox", "child": f"{f}_mid", "axis": (1, 0, 0),
                       "xyz": (0, lengths["prox"], 0), "lower": -0.174, "upper": 1.709})
        joints.append({"name": f"{f}_3", "parent": f"{f}_mid", "child": f"{f}_dist", "axis": (1, 0, 0),
                       "xyz": (0, lengths["mid"], 0), "lower": -0.227, "upper": 1.618})
        links.append({"name": f"{f}_base", "points": [], "spheres": []})
        for seg in ("prox", "mid", "dist"):
            L = lengths[seg]
            links.append({"name": f"{f}_{seg}", "points": cylinder_points("y", L, fr, 0.01, 8, seg == "dist"),
                          "spheres": spheres_along("y", L + (fr if seg == "dist" else 0.0), fr, 0.012)})
    # thumb: raise (about -y), pronate (about its long axis), two flexion joints
    tr = 0.012
    joints.append({"name": "thumb_0", "parent": "palm", "child": "thumb_base", "axis": (0, -1, 0),
                   "xyz": (0.05, -0.07, -0.012), "lower": 0.0, "upper": 1.6})
    joints.append({"name": "thumb_1", "parent": "thumb_base", "child": "thumb_meta", "axis": (1, 0, 0),
                   "xyz": (0, 0, 0), "lower": -1.6, "upper": 0.3})
    joints.append({"name": "thumb_2", "parent": "thumb_meta", "child": "thumb_prox", "axis": (0, -1, 0),
                   "xyz": (0.02, 0, 0), "lower": -0.2, "upper": 1.6})
    joints.append({"name": "thumb_3", "parent": "thumb_prox", "child": "thumb_dist", "axis": (0, -1, 0),
                   "xyz": (0.05, 0, 0), "lower": -0.2, "upper": 1.7})
    links.append({"name": "thumb_base", "points": [], "spheres": []})
    links.append({"name": "thumb_meta", "points": cylinder_points("x", 0.02, tr, 0.01, 8, False),
                  "spheres": [((0.01, 0, 0), tr)]})
    links.append({"name": "thumb_prox", "points": cylinder_points("x", 0.05, tr, 0.01, 8, False),
                  "spheres": spheres_along("x", 0.05, tr, 0.012)})
    links.append({"name": "thumb_dist", "points": cylinder_points("x", 0.035, tr, 0.01, 8, True),
                  "spheres": spheres_along("x", 0.035 + tr, tr, 0.012)})

    names = [j["name"] for j in joints]

    def mask(*groups):
        return [1 if any(n.startswith(g + "_") for g in groups) else 0 for n in names]

    def pads(f, side):
        out = []
        for seg in ("prox", "mid", "dist"):
            L = lengths[seg]
            for s in (0.35, 0.75):
                out.append((f"{f}_{seg}", (0.0, s * L, fr), (0, 0, 1), side))
        return out

    def lateral(f, sgn, side):
        out = []
        for seg in ("prox", "mid", "dist"):
            L = lengths[seg]
            for s in (0.35, 0.75):
                out.append((f"{f}_{seg}", (sgn * fr, s * L, 0.0), (sgn, 0, 0), side))
        return out

    thumb_pads = [("thumb_prox", (s * 0.05, 0.0, tr), (0, 0, 1), "A") for s in (0.35, 0.75)] + \
                 [("thumb_dist", (s * 0.035, 0.0, tr), (0, 0, 1), "A") for s in (0.3, 0.7, 1.0)]

    def palm_patch(xs, ys):
        return [("palm", (x, y, 0.0), (0, 0, 1), "B") for x in xs for y in ys]

    finger_x = dict(fingers)
    oses = [
        {"label": "middle-ring", "mask": mask("middle", "ring"),
         "contacts": lateral("middle", -1, "A") + lateral("ring", 1, "B")},
        {"label": "index-middle", "mask": mask("index", "middle"),
         "contacts": lateral("index", -1, "A") + lateral("middle", 1, "B")},
        {"label": "thumb-index", "mask": mask("thumb", "index"),
         "contacts": thumb_pads + [(l, p, n, "B") for (l, p, n, _) in pads("index", "B")]},
    ]
    for f in ("ring", "middle", "index"):
        x = finger_x[f]
        xs = [v for v in (x - 0.014, x, x + 0.014) if -0.045 <= v <= 0.045]
        oses.append({"label": f"{f}-palm", "mask": mask(f),
                     "contacts": pads(f, "A") + palm_patch(xs, (-0.015, -0.03, -0.045))})
    oses.append({"label": "thumb-palm", "mask": mask("thumb"),
                 "contacts": thumb_pads + palm_patch((-0.02, 0.0, 0.02), (-0.05, -0.065, -0.08))})
    ignore = [("palm", f"{f}_prox") for f, _ in fingers] + [("palm", "thumb_meta"), ("thumb_base", "thumb_prox")]
    header = """# Sixteen-joint, four-finger reference hand approximating the Allegro Hand.
#
# Joint order: index_0..3, middle_0..3, ring_0..3, thumb_0..3.
# Palm faces +z, fingers extend along +y and flex toward +z.
#
# NOTE: the opposition-space joint masks and contact candidate sets below are
# a reconstruction (one finger's four joints per finger involved), not
# published values. Candidate counts per space are a file parameter."""
    return emit("allegro_like", "palm", (0, 0, 1), [0.0] * 16, ignore, joints, links, oses, header)


if __name__ == "__main__":
    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "toy_gripper.toml").write_text(toy() + "\n")
    (OUT / "allegro_like.toml").write_text(allegro() + "\n")
    print("wrote", OUT)
