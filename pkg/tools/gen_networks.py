"""Regenerate the bundled example networks in src/prtsim/data.

Each network is a loop of siding modules (fork, terminal node, join, with a
short bypass) plus two crossing chords. Main-line gaps are stretched so the
total track length hits the requested figure exactly.
"""

import json
import math
import sys
from pathlib import Path

SIDING_IN = 50.0
SIDING_OUT = 50.0
BYPASS = 60.0
V = 14.0


def build(name, n_stations, capacitor_slots, chord_len, total, capacity, note):
    kinds = ["station"] * n_stations
    for i in sorted(capacitor_slots, reverse=True):
        kinds.insert(i, "capacitor")
    n_mod = len(kinds)
    nodes, segs = [], []
    nid = 0

    def node(kind, angle, r, **kw):
        nonlocal nid
        rec = {"id": nid, "kind": kind, "position": [round(r * math.cos(angle), 1), round(r * math.sin(angle), 1)]}
        rec.update(kw)
        nodes.append(rec)
        nid += 1
        return rec["id"]

    def seg(a, b, length):
        segs.append({"id": len(segs), "from": a, "to": b, "length": length, "max_velocity": V})

    a_split, b_split = 2, n_mod // 2 + 2  # modules after which the chords leave and land
    entries, exits, extras = [], [], {}
    for m, kind in enumerate(kinds):
        ang = 2 * math.pi * m / n_mod
        f = node("fork", ang - 0.05, 600)
        if kind == "station":
            t = node("station", ang, 660, layout="inline", berths=4, entry_buffer=0, exit_buffer=0)
        else:
            t = node("capacitor", ang, 660, parking=capacity)
        j = node("join", ang + 0.05, 600)
        seg(f, t, SIDING_IN)
        seg(t, j, SIDING_OUT)
        seg(f, j, BYPASS)
        entries.append(f)
        exits.append(j)
        if m in (a_split, b_split):
            ang2 = ang + math.pi / n_mod
            extras[m] = (node("fork", ang2 - 0.02, 600), node("join", ang2 + 0.02, 600))

    mains = []
    for m in range(n_mod):
        nxt = entries[(m + 1) % n_mod]
        if m in extras:
            cf, cj = extras[m]
            mains += [(exits[m], cf), (cf, cj), (cj, nxt)]
        else:
            mains.append((exits[m], nxt))
    (fa, ja), (fb, jb) = extras[a_split], extras[b_split]
    seg(fa, jb, chord_len)
    seg(fb, ja, chord_len)
    fixed = sum(s["length"] for s in segs)
    gap = (total - fixed) / len(mains)
    if gap < 50:
        raise SystemExit(f"{name}: main gaps would be {gap:.1f} m")
    lengths = [round(gap, 1)] * len(mains)
    lengths[-1] = round(total - fixed - sum(lengths[:-1]), 1)
    for (a, b), L in zip(mains, lengths):
        seg(a, b, L)
    doc = {"_provenance": note, "name": name, "nodes": nodes, "segments": segs}
    got = sum(s["length"] for s in segs)
    assert abs(got - total) < 1e-6, got
    return doc


def main(out):
    out = Path(out)
    city = build(
        "city", 12, [0, 7], 700.0, 6064.5, 12,
        "Approximate city-like network. Matched: total track length 6064.5 m, 12 in-line stations "
        "with 4 berths each, 2 capacitors. The layout itself is invented.",
    )
    seashore = build(
        "seashore", 10, [0, 6], 400.0, 5584.0, 12,
        "Approximate seashore-like network. Matched: total track length 5584 m, 10 in-line stations "
        "with 4 berths each, 2 capacitors. The layout itself is invented.",
    )
    for doc in (city, seashore):
        (out / f"{doc['name']}.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/prtsim/data")
