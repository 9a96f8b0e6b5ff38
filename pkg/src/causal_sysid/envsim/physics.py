"""Planar rigid-body toy dynamics: exponential drag, Coulomb sliding friction and
restitution impulses with swept (time-of-impact) contact detection.

State is kept in plain Python floats; a rollout touches at most three bodies so
scalar arithmetic beats numpy dispatch by a wide margin.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import registry as reg
from .registry import AIR_HOCKEY, BOUNCING_BALL, EnvParamVector

GRAVITY = 9.81
STOP_SPEED = 1e-4
FIXED_WALL_DAMPING = -10.0
PUSHER_MASS_RATIO = 100.0
# Converts the commanded strike speed into m/s for the toy pusher.
STRIKE_GAIN = 30.0
# Pusher is withdrawn after its first contact or after this many seconds.
PUSHER_RETRACT_TIME = 0.25
MAX_EVENTS = 64
_TOUCH = 1e-12

BALL_RADIUS = 0.034
BALL_START_X = 0.0
# plates: (centre x, centre y, half length, surface angle in rad)
PLATE1 = (0.0, 0.3, 0.12, -0.35)
PLATE2 = (0.42, 0.05, 0.2, 0.45)


def wall_restitution(damping: float) -> float:
    """Restitution of a static surface as a function of its (negative) damping."""
    return math.exp(0.05 * damping)


@dataclass
class SimState:
    names: tuple
    pos: list
    vel: list
    radius: tuple
    mass: tuple
    active: list = field(default=None)
    time: float = 0.0

    def __post_init__(self):
        if any(r <= 0 for r in self.radius) or any(m <= 0 for m in self.mass):
            raise ValueError("radii and masses must be positive")
        if self.active is None:
            self.active = [True] * len(self.names)

    def copy(self) -> "SimState":
        return SimState(self.names, [list(p) for p in self.pos], [list(v) for v in self.vel],
                        self.radius, self.mass, list(self.active), self.time)

    def index(self, name):
        return self.names.index(name)

    def momentum(self):
        px = sum(m * v[0] for m, v, a in zip(self.mass, self.vel, self.active) if a)
        py = sum(m * v[1] for m, v, a in zip(self.mass, self.vel, self.active) if a)
        return px, py

    def kinetic_energy(self):
        return sum(0.5 * m * (v[0] ** 2 + v[1] ** 2) for m, v, a in zip(self.mass, self.vel, self.active) if a)


@dataclass
class Physics:
    """Per-rollout constants resolved from an EnvParamVector."""

    drag: list                 # per-body exponential rate (1/s, <= 0)
    friction: list             # per-body sliding coefficient
    restitution: list          # per-body restitution factor
    gravity: float = 0.0
    walls: list = field(default_factory=list)     # (axis, limit, direction, e, name)
    boxes: list = field(default_factory=list)     # (xmin, xmax, ymin, ymax, e, name)
    segments: list = field(default_factory=list)  # (ax, ay, ux, uy, length, nx, ny, e, name)
    stop_slow: bool = True
    contacts: list = field(default_factory=list)  # log of (time, kind, a, b)


def _plate_segment(plate, e, name):
    cx, cy, half, ang = plate
    ux, uy = math.cos(ang), math.sin(ang)
    ax, ay = cx - half * ux, cy - half * uy
    nx, ny = -uy, ux  # upward-facing normal
    if ny < 0:
        nx, ny = -nx, -ny
    return (ax, ay, ux, uy, 2 * half, nx, ny, e, name)


def physics_from_params(eps: EnvParamVector, names: tuple) -> Physics:
    env = eps.registry.env_name
    if env == AIR_HOCKEY:
        drag, friction, rest = [], [], []
        r_puck = eps["puck@dyna@restitution"]
        for n in names:
            drag.append(eps[f"{n}@dyna@damping"])
            if n == "pusher":
                friction.append(0.0)
                rest.append(1.0)
            else:
                friction.append(eps[f"{n}@dyna@friction_sliding"])
                rest.append(r_puck)
        hx, hy = reg.TABLE_HALF_EXTENTS
        # only the right wall's damping is a live knob; the other static bodies bounce
        # with the restitution of a default-damped wall whatever their parameter says
        fixed = wall_restitution(FIXED_WALL_DAMPING)
        walls = [
            (0, hx, 1, wall_restitution(eps["right_wall@dyna@damping"]), "right_wall"),
            (0, -hx, -1, fixed, "left_wall"),
            (1, hy, 1, fixed, "back_wall"),
            (1, -hy, -1, fixed, "front_wall"),
        ]
        ox, oy = reg.OBSTACLE_CENTER
        ohx, ohy = reg.OBSTACLE_HALF_EXTENTS
        boxes = [(ox - ohx, ox + ohx, oy - ohy, oy + ohy, fixed, "obstacle")]
        return Physics(drag, friction, rest, 0.0, walls, boxes, [], stop_slow=True)
    if env == BOUNCING_BALL:
        rate = eps["ball@dyna@damping"] / eps["ball@dyna@mass"]
        segs = [_plate_segment(PLATE1, wall_restitution(eps["plate1@dyna@damping"]), "plate1"),
                _plate_segment(PLATE2, wall_restitution(eps["plate2@dyna@damping"]), "plate2")]
        return Physics([rate], [0.0], [1.0], GRAVITY, [], [], segs, stop_slow=False)
    raise ValueError(f"no physics for {env!r}")


def _update_velocities(state: SimState, phys: Physics, dt: float):
    for i, v in enumerate(state.vel):
        if not state.active[i]:
            continue
        if phys.gravity:
            v[1] -= phys.gravity * dt
        decay = math.exp(phys.drag[i] * dt)
        vx, vy = v[0] * decay, v[1] * decay
        mu = phys.friction[i]
        if mu > 0.0:
            speed = math.hypot(vx, vy)
            if speed > 0.0:
                scale = max(0.0, speed - mu * GRAVITY * dt) / speed
                vx, vy = vx * scale, vy * scale
        if phys.stop_slow and math.hypot(vx, vy) < STOP_SPEED:
            vx = vy = 0.0
        v[0], v[1] = vx, vy


def integrate_step(state: SimState, eps: EnvParamVector, dt_sub: float) -> SimState:
    """Drag, friction (and gravity) followed by a collision-free position update."""
    if dt_sub <= 0:
        raise ValueError("dt_sub must be positive")
    out = state.copy()
    phys = physics_from_params(eps, state.names)
    _update_velocities(out, phys, dt_sub)
    _drift(out, dt_sub)
    out.time += dt_sub
    return out


def _drift(state: SimState, dt: float):
    for p, v, a in zip(state.pos, state.vel, state.active):
        if a:
            p[0] += v[0] * dt
            p[1] += v[1] * dt


# ---------------------------------------------------------------- contacts

def _pair_toi(state, i, j):
    pi, pj, vi, vj = state.pos[i], state.pos[j], state.vel[i], state.vel[j]
    dx, dy = pj[0] - pi[0], pj[1] - pi[1]
    wx, wy = vj[0] - vi[0], vj[1] - vi[1]
    b = dx * wx + dy * wy
    if b >= 0.0:
        return None  # separating or resting
    rsum = state.radius[i] + state.radius[j]
    c = dx * dx + dy * dy - rsum * rsum
    if c <= _TOUCH:
        return 0.0
    a = wx * wx + wy * wy
    disc = b * b - a * c
    if disc < 0.0:
        return None
    return max(0.0, (-b - math.sqrt(disc)) / a)


def _wall_toi(state, i, wall):
    axis, limit, direction, _, _ = wall
    vn = state.vel[i][axis] * direction
    if vn <= 0.0:
        return None
    gap = direction * (limit - state.pos[i][axis]) - state.radius[i]
    return max(0.0, gap / vn)


def _box_toi(state, i, box):
    """Ray against the box grown by the body radius. Returns (t, axis)."""
    r = state.radius[i]
    lo = (box[0] - r, box[2] - r)
    hi = (box[1] + r, box[3] + r)
    p, v = state.pos[i], state.vel[i]
    t_enter, t_exit, axis_enter = -math.inf, math.inf, -1
    for ax in (0, 1):
        if v[ax] == 0.0:
            if p[ax] <= lo[ax] or p[ax] >= hi[ax]:
                return None
            continue
        t0 = (lo[ax] - p[ax]) / v[ax]
        t1 = (hi[ax] - p[ax]) / v[ax]
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > t_enter:
            t_enter, axis_enter = t0, ax
        t_exit = min(t_exit, t1)
    if t_enter > t_exit or t_exit <= 0.0:
        return None
    if t_enter < 0.0:
        # already overlapping: push out along the axis of least penetration
        pen = [min(p[ax] - lo[ax], hi[ax] - p[ax]) for ax in (0, 1)]
        ax = 0 if pen[0] <= pen[1] else 1
        centre = 0.5 * (lo[ax] + hi[ax])
        outward = 1.0 if p[ax] >= centre else -1.0
        if v[ax] * outward >= 0.0:
            return None
        return 0.0, ax
    return t_enter, axis_enter


def _segment_toi(state, i, seg):
    ax, ay, ux, uy, length, nx, ny, _, _ = seg
    p, v = state.pos[i], state.vel[i]
    r = state.radius[i]
    vn = v[0] * nx + v[1] * ny
    if vn >= 0.0:
        return None
    s0 = (p[0] - ax) * nx + (p[1] - ay) * ny
    if s0 < 0.0:
        return None  # plates are one-sided
    t = max(0.0, (s0 - r) / -vn)
    cx, cy = p[0] + v[0] * t, p[1] + v[1] * t
    u = (cx - ax) * ux + (cy - ay) * uy
    if 0.0 <= u <= length:
        return t
    return None


def _bounce(v, nx, ny, e):
    vn = v[0] * nx + v[1] * ny
    if vn < 0.0:
        v[0] -= (1.0 + e) * vn * nx
        v[1] -= (1.0 + e) * vn * ny


def resolve_pair(state: SimState, i: int, j: int, e: float):
    pi, pj = state.pos[i], state.pos[j]
    dx, dy = pj[0] - pi[0], pj[1] - pi[1]
    dist = math.hypot(dx, dy)
    if dist == 0.0:
        return
    nx, ny = dx / dist, dy / dist
    vi, vj = state.vel[i], state.vel[j]
    vrel = (vj[0] - vi[0]) * nx + (vj[1] - vi[1]) * ny
    inv_i, inv_j = 1.0 / state.mass[i], 1.0 / state.mass[j]
    if vrel < 0.0:
        jn = -(1.0 + e) * vrel / (inv_i + inv_j)
        vi[0] -= jn * nx * inv_i
        vi[1] -= jn * ny * inv_i
        vj[0] += jn * nx * inv_j
        vj[1] += jn * ny * inv_j
    overlap = state.radius[i] + state.radius[j] - dist
    if overlap > 0.0:
        wi, wj = inv_i / (inv_i + inv_j), inv_j / (inv_i + inv_j)
        pi[0] -= overlap * wi * nx
        pi[1] -= overlap * wi * ny
        pj[0] += overlap * wj * nx
        pj[1] += overlap * wj * ny


def _resolve_wall(state, i, wall):
    axis, limit, direction, e, _ = wall
    v, p = state.vel[i], state.pos[i]
    if v[axis] * direction > 0.0:
        v[axis] = -e * v[axis]
    edge = limit - direction * state.radius[i]
    if (p[axis] - edge) * direction > 0.0:
        p[axis] = edge


def _resolve_box(state, i, box, axis):
    v, p = state.vel[i], state.pos[i]
    r = state.radius[i]
    lo, hi = (box[0], box[2])[axis] - r, (box[1], box[3])[axis] + r
    centre = 0.5 * (lo + hi)
    outward = 1.0 if p[axis] >= centre else -1.0
    if v[axis] * outward < 0.0:
        v[axis] = -box[4] * v[axis]
    if lo < p[axis] < hi:
        p[axis] = hi if outward > 0 else lo


def _resolve_segment(state, i, seg):
    ax, ay, _, _, _, nx, ny, e, _ = seg
    _bounce(state.vel[i], nx, ny, e)
    p = state.pos[i]
    s = (p[0] - ax) * nx + (p[1] - ay) * ny
    pen = state.radius[i] - s
    if pen > 0.0:
        p[0] += pen * nx
        p[1] += pen * ny


def pair_restitution(phys: Physics, i: int, j: int) -> float:
    return phys.restitution[i] * phys.restitution[j]


def resolve_collisions(state: SimState, eps: EnvParamVector) -> SimState:
    """Resolve every contact that is currently touching or overlapping."""
    out = state.copy()
    phys = physics_from_params(eps, state.names)
    n = len(out.names)
    for i in range(n):
        if not out.active[i]:
            continue
        for j in range(i + 1, n):
            if not out.active[j]:
                continue
            dx = out.pos[j][0] - out.pos[i][0]
            dy = out.pos[j][1] - out.pos[i][1]
            if math.hypot(dx, dy) <= out.radius[i] + out.radius[j] + _TOUCH:
                resolve_pair(out, i, j, pair_restitution(phys, i, j))
        for wall in phys.walls:
            axis, limit, direction, _, _ = wall
            if direction * (limit - out.pos[i][axis]) - out.radius[i] <= _TOUCH:
                _resolve_wall(out, i, wall)
        for box in phys.boxes:
            hit = _box_toi(out, i, box)
            if hit is not None and hit[0] == 0.0:
                _resolve_box(out, i, box, hit[1])
        for seg in phys.segments:
            if _segment_toi(out, i, seg) == 0.0:
                _resolve_segment(out, i, seg)
    return out


def _earliest_event(state, phys):
    best_t, best = math.inf, None
    n = len(state.names)
    for i in range(n):
        if not state.active[i]:
            continue
        vi = state.vel[i]
        moving_i = vi[0] != 0.0 or vi[1] != 0.0
        for j in range(i + 1, n):
            if not state.active[j]:
                continue
            t = _pair_toi(state, i, j)
            if t is not None and t < best_t:
                best_t, best = t, ("pair", i, j)
        if not moving_i:
            continue
        for wall in phys.walls:
            t = _wall_toi(state, i, wall)
            if t is not None and t < best_t:
                best_t, best = t, ("wall", i, wall)
        for box in phys.boxes:
            hit = _box_toi(state, i, box)
            if hit is not None and hit[0] < best_t:
                best_t, best = hit[0], ("box", i, box, hit[1])
        for seg in phys.segments:
            t = _segment_toi(state, i, seg)
            if t is not None and t < best_t:
                best_t, best = t, ("segment", i, seg)
    return best_t, best


def sweep(state: SimState, phys: Physics, dt: float, on_contact=None):
    """Advance positions by ``dt`` processing contacts in time-of-impact order."""
    remaining = dt
    for _ in range(MAX_EVENTS):
        t, event = _earliest_event(state, phys)
        if event is None or t > remaining:
            break
        _drift(state, t)
        remaining -= t
        kind, i = event[0], event[1]
        if kind == "pair":
            j = event[2]
            resolve_pair(state, i, j, pair_restitution(phys, i, j))
            label = state.names[j]
        elif kind == "wall":
            _resolve_wall(state, i, event[2])
            label = event[2][4]
        elif kind == "box":
            _resolve_box(state, i, event[2], event[3])
            label = event[2][5]
        else:
            _resolve_segment(state, i, event[2])
            label = event[2][8]
        phys.contacts.append((state.time + dt - remaining, state.names[i], label))
        if on_contact is not None:
            on_contact(state, kind, i, event)
    _drift(state, remaining)
    state.time += dt
