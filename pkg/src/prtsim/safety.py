"""Independent runtime checks for the event-driven engine.

The monitor keeps its own copy of every vehicle's kinematics, rebuilt from
the plans the engine reports, and recomputes leaders and stopping points
itself. It never reads engine state.
"""

from __future__ import annotations

from bisect import bisect_left

from .network import Kind, sectorize

TOL = 1e-6


def _phases(p):
    # (duration, start velocity, acceleration) for each constant-acceleration piece
    out = []
    if p.ta > 0:
        out.append((p.ta, p.v0, p.acc))
    if p.tc > 0:
        out.append((p.tc, p.vp, 0.0))
    if p.td > 0:
        out.append((p.td, p.vp, -p.dec))
    return out


def _integrate(p, t):
    x, v = p.x0, p.v0
    tau = t - p.t0
    for dur, v_start, acc in _phases(p):
        if tau <= 0:
            break
        h = min(tau, dur)
        x += v_start * h + 0.5 * acc * h * h
        v = v_start + acc * h
        tau -= h
    return x, max(v, 0.0)


def max_stop_point(p, d):
    """Largest position + v^2/(2d) reached anywhere along a plan."""
    best = p.x0 + p.v0 * p.v0 / (2 * d)
    x = p.x0
    for dur, v_start, acc in _phases(p):
        x += v_start * dur + 0.5 * acc * dur * dur
        v = max(0.0, v_start + acc * dur)
        best = max(best, x + v * v / (2 * d))
    return best


class SafetyMonitor:
    def __init__(self, net, sector_length: float, separation: float, d_leader: float = None):
        self.net = net
        self.sep = separation
        self.d_leader = d_leader
        self.bounds = {sid: sectorize(s, sector_length) for sid, s in net.segments.items()}
        self.state = {}  # vid -> [route, ri, plan or None, x, d]
        self.violations: list[str] = []
        self.checks = 0
        self.enter = {}  # (vid, node) -> (time, approach)
        self.intervals: dict[int, list[tuple[float, float, int, int]]] = {}

    # -- feeds from the engine ---------------------------------------------------

    def launch(self, t, vid, node, route):
        self.state[vid] = [route, 0, None, 0.0, None]
        self.enter[(vid, node)] = (t, -1)

    def plan(self, t, vid, route, ri, p, traits, vcap):
        st = self.state.setdefault(vid, [route, ri, None, p.x0, None])
        st[0], st[1], st[2], st[3], st[4] = route, ri, p, p.x0, traits.d_max
        self.checks += 1
        if max(p.v0, p.vp, p.v1) > vcap * (1 + 1e-9) + TOL:
            self.violations.append(f"t={t:.3f} vehicle {vid} plans {p.vp:.3f} m/s over cap {vcap:.3f}")
        seg = self.net.segments[route[ri]]
        node = seg.target
        if self._is_controlled(node) and ri < len(route) - 1:
            snb = self._stop_boundary(seg)
            if abs(p.x0 - snb) < TOL:
                self.enter[(vid, node)] = (t, seg.id)
        mine = max_stop_point(p, traits.d_max)
        self._check_gap(t, vid, mine, moving=True)

    def hold(self, t, vid, route, ri, x):
        st = self.state.setdefault(vid, [route, ri, None, x, None])
        st[0], st[1], st[2], st[3] = route, ri, None, x
        b = self.bounds[route[ri]]
        i = bisect_left(b, x - TOL)
        if i >= len(b) or abs(b[i] - x) > TOL:
            self.violations.append(f"t={t:.3f} vehicle {vid} stopped off a sector connection at {x:.3f}")
        self._check_gap(t, vid, x, moving=False)

    def cross(self, t, vid, seg_id, x, v):
        st = self.state.get(vid)
        if st is None:
            return
        seg = self.net.segments[seg_id]
        st[2] = None
        st[3] = x
        # the first connection past a node closes that node's occupancy interval
        if abs(x - self.bounds[seg_id][1]) < TOL:
            self._close(t, vid, seg.source)
        if x >= seg.length - TOL and st[1] < len(st[0]) - 1:
            st[1] += 1
            st[3] = 0.0

    def leave(self, t, vid):
        self.state.pop(vid, None)

    # -- derived checks -------------------------------------------------------------

    def _is_controlled(self, node):
        return self.net.nodes[node].kind in (Kind.JOIN, Kind.STATION, Kind.CAPACITOR)

    def _stop_boundary(self, seg):
        b = self.bounds[seg.id]
        target = seg.length - self.sep
        best = b[0]
        for x in b:
            if x <= target + TOL:
                best = x
        return best

    def _close(self, t, vid, node):
        rec = self.enter.pop((vid, node), None)
        if rec is None:
            return
        t0, approach = rec
        self.intervals.setdefault(node, []).append((t0, t, approach, vid))

    def _position(self, st, t):
        p = st[2]
        if p is None:
            return st[3], 0.0
        return _integrate(p, t)

    def _leader(self, vid, t):
        route, ri = self.state[vid][0], self.state[vid][1]
        x_me = self._position(self.state[vid], t)[0]
        index = {}
        off = {}
        acc = -x_me
        for k in range(ri, len(route)):
            index[route[k]] = k
            off[route[k]] = acc
            acc += self.net.segments[route[k]].length
        best = None
        for u, st in self.state.items():
            if u == vid:
                continue
            useg = st[0][st[1]]
            if useg not in index:
                continue
            x_u, v_u = self._position(st, t)
            rel = off[useg] + x_u
            if index[useg] == ri and rel <= TOL:
                continue
            if best is None or rel < best[0]:
                best = (rel, u, v_u, st[4])
        return best, x_me

    def _check_gap(self, t, vid, my_stop_abs, moving):
        found, x_me = self._leader(vid, t)
        if found is None:
            return
        rel, u, v_u, d_u = found
        d_u = self.d_leader or d_u or 2.0
        leader_stop = rel + v_u * v_u / (2 * d_u)
        mine = my_stop_abs - x_me
        if mine > leader_stop - self.sep + TOL:
            kind = "plan" if moving else "standstill"
            self.violations.append(
                f"t={t:.3f} vehicle {vid} {kind} stop {mine:.3f} m ahead, leader {u} worst stop {leader_stop:.3f} m"
            )

    def join_violations(self) -> list[str]:
        out = []
        for node, ivs in self.intervals.items():
            ivs = sorted(ivs)
            for i, (a0, a1, ap, va) in enumerate(ivs):
                for b0, b1, bp, vb in ivs[i + 1:]:
                    if b0 >= a1 - TOL:
                        break
                    if ap != bp:
                        out.append(f"node {node}: vehicles {va} and {vb} overlap ({a0:.3f}-{a1:.3f} vs {b0:.3f}-{b1:.3f})")
        return out

    def all_violations(self) -> list[str]:
        return self.violations + self.join_violations()

