"""Case-study environments: a two-agent grid-world swap, a ring of heated
rooms, and a grid of signalized traffic intersections.

Each builder returns a network of Markov games together with one
specification automaton per component.  All builders are pure and the
returned objects immutable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .automata import Always, Conjunction, Dfa, Eventually, compile_formula
from .games import MarkovGame, MdpNetwork

# -- grid world ---------------------------------------------------------------------

CRASH_LABEL = "crashed"
GRID_ACTIONS = ("up", "down", "left", "right", "stay")
_GRID_MOVES = {"up": (0, 1), "down": (0, -1), "left": (-1, 0),
               "right": (1, 0), "stay": (0, 0)}


@dataclass(frozen=True)
class GridWorldParams:
    """Two agents swapping positions on a rectangular grid.

    Starts default to the center-bottom and center-top cells and the targets
    to the swapped starts.  Each agent's contract declares the detour route
    it guarantees to follow: the first agent skirts the column left of its
    start, the second the column to the right, so the declared routes never
    conflict.  Collision means entering the cell the other agent currently
    occupies (which includes swapping through each other); a collision is
    absorbing and fails the agent's specification.
    """
    width: int = 3
    height: int = 4
    start1: Optional[tuple] = None
    start2: Optional[tuple] = None

    def resolved(self):
        cx = self.width // 2
        s1 = self.start1 if self.start1 is not None else (cx, 0)
        s2 = self.start2 if self.start2 is not None else (cx, self.height - 1)
        return s1, s2

    def validate(self):
        if self.width < 3 or self.height < 2:
            raise ValueError("grid must be at least 3 wide and 2 tall")
        s1, s2 = self.resolved()
        for (x, y) in (s1, s2):
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError(f"cell {(x, y)} outside the grid")
        if s1 == s2:
            raise ValueError("agents must start on distinct cells")
        if s1[0] != s2[0] or {s1[1], s2[1]} != {0, self.height - 1}:
            raise ValueError("route synthesis expects column-aligned starts on "
                             "the top and bottom rows")
        if not (1 <= s1[0] <= self.width - 2):
            raise ValueError("starts need a free column on each side")


def _cell_label(x, y):
    return f"c{x}_{y}"


def _grid_routes(params: GridWorldParams):
    """Declared detour routes: left column for agent one, right for agent two."""
    s1, s2 = params.resolved()
    x = s1[0]
    up = s1[1] < s2[1]
    ys = range(s1[1], s2[1] + 1) if up else range(s1[1], s2[1] - 1, -1)
    route1 = [s1] + [(x - 1, y) for y in ys] + [s2]
    ys2 = range(s2[1], s1[1] - 1, -1) if up else range(s2[1], s1[1] + 1)
    route2 = [s2] + [(x + 1, y) for y in ys2] + [s1]
    return route1, route2


def _route_dfa(route, alphabet):
    transitions = {}
    for k, cell in enumerate(route):
        transitions[(k, _cell_label(*cell))] = k + 1
    n = len(route) + 1
    dfa = Dfa.from_partial(n, 0, [n - 1], alphabet, transitions,
                           state_names=[f"p{k}" for k in range(n)])
    return dfa


def build_gridworld(params: GridWorldParams = GridWorldParams()):
    """Two deterministic agents; labels expose the occupied cell.

    Entering the other agent's current cell crashes the mover; a crashed
    agent is labeled ``crashed`` without a position and no longer blocks
    any cell.
    """
    params.validate()
    w, h = params.width, params.height
    cells = [(x, y) for y in range(h) for x in range(w)]
    cell_index = {c: i for i, c in enumerate(cells)}
    n_cells = len(cells)
    crashed = n_cells
    alphabet = tuple(_cell_label(*c) for c in cells) + (CRASH_LABEL,)
    labels = [_cell_label(*c) for c in cells] + [CRASH_LABEL]

    def enabled_moves(cell):
        moves = []
        for a, name in enumerate(GRID_ACTIONS):
            dx, dy = _GRID_MOVES[name]
            nxt = (cell[0] + dx, cell[1] + dy)
            if 0 <= nxt[0] < w and 0 <= nxt[1] < h:
                moves.append((a, nxt))
        return moves

    s1, s2 = params.resolved()
    route1, route2 = _grid_routes(params)
    components = []
    for start, route in ((s1, route1), (s2, route2)):
        transitions = {}
        for cell in cells:
            s = cell_index[cell]
            for a, nxt in enabled_moves(cell):
                for env in range(n_cells + 1):
                    if env < n_cells and cell_index[nxt] == env:
                        target = crashed
                    else:
                        target = cell_index[nxt]
                    transitions[(s, a, (env,))] = ((target, 1.0),)
        for a in range(len(GRID_ACTIONS)):
            for env in range(n_cells + 1):
                transitions[(crashed, a, (env,))] = ((crashed, 1.0),)
        components.append(MarkovGame(
            n_cells + 1, cell_index[start], len(GRID_ACTIONS), labels,
            alphabet, transitions=transitions,
            state_names=[_cell_label(*c) for c in cells] + [CRASH_LABEL],
            template_key=("grid", tuple(route))))
    net = MdpNetwork(components, [(1,), (0,)])
    dfas = [_route_dfa(route1, alphabet), _route_dfa(route2, alphabet)]
    return net, dfas


def gridworld_routes(params: GridWorldParams = GridWorldParams()):
    """The declared swap routes (sequences of cells) for both agents."""
    params.validate()
    return _grid_routes(params)


# -- room temperature ring -------------------------------------------------------------

ROOM_ALPHABET = ("cold", "low", "target", "high", "hot")


@dataclass(frozen=True)
class RoomParams:
    """Ring of rooms, each heated by its own controller and coupled to its
    two neighbors by conduction.

    Temperatures are discretized to bins of ``temp_bin_width`` degrees over
    ``temp_range``; dynamics evaluate at bin centers and clamp at the range
    edges.  The specification per room: stay inside the comfort band for
    ``horizon`` steps and visit the setpoint band within that horizon.
    """
    rooms: int = 16
    alpha: float = 0.45
    beta: float = 0.045
    gamma_heat: float = 0.09
    exterior_temp: float = -1.0
    heater_temp: float = 50.0
    control_levels: tuple = (0.0, 0.5, 1.0)
    temp_bin_width: float = 0.25
    temp_range: tuple = (14.0, 26.0)
    comfort: tuple = (17.0, 23.0)
    target: tuple = (21.0, 22.0)
    horizon: int = 40
    initial_temp: float = 21.3
    stochastic: bool = False

    def validate(self):
        lo, hi = self.temp_range
        if self.rooms < 3:
            raise ValueError("the ring needs at least three rooms")
        if self.temp_bin_width <= 0:
            raise ValueError("bin width must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not (lo <= self.comfort[0] < self.target[0] < self.target[1]
                < self.comfort[1] <= hi):
            raise ValueError("need range ⊇ comfort ⊃ target with proper nesting")
        if self.temp_bin_width > self.target[1] - self.target[0]:
            raise ValueError("bins coarser than the setpoint band cannot "
                             "detect the specification")
        if not all(0.0 <= u <= 1.0 for u in self.control_levels) \
                or not self.control_levels:
            raise ValueError("control levels must lie in [0, 1]")
        for edge in (self.comfort + self.target + (hi,)):
            steps = (edge - lo) / self.temp_bin_width
            if abs(steps - round(steps)) > 1e-9:
                raise ValueError(f"boundary {edge} does not align with the bins")
        if not (lo <= self.initial_temp < hi):
            raise ValueError("initial temperature outside the range")

    @property
    def n_bins(self):
        lo, hi = self.temp_range
        return int(round((hi - lo) / self.temp_bin_width))

    def center(self, b):
        return self.temp_range[0] + (b + 0.5) * self.temp_bin_width

    def bin_of(self, temp):
        lo, hi = self.temp_range
        b = int((temp - lo) / self.temp_bin_width)
        return min(max(b, 0), self.n_bins - 1)

    def label_of_bin(self, b):
        c = self.center(b)
        if c < self.comfort[0]:
            return "cold"
        if c < self.target[0]:
            return "low"
        if c < self.target[1]:
            return "target"
        if c < self.comfort[1]:
            return "high"
        return "hot"


def room_step(params: RoomParams, temp, left, right, u):
    """Closed-form one-step temperature update (continuous, unclamped)."""
    return (temp
            + params.alpha * (left + right - 2.0 * temp)
            + params.beta * (params.exterior_temp - temp)
            + params.gamma_heat * (params.heater_temp - temp) * u)


def room_spec(params: RoomParams) -> Dfa:
    comfort = frozenset({"low", "target", "high"})
    formula = Conjunction((Always(comfort, params.horizon),
                           Eventually(frozenset({"target"}), params.horizon)))
    return compile_formula(formula, ROOM_ALPHABET).trim().collapse_rejecting()


def build_rooms(params: RoomParams = RoomParams()):
    """Ring network; each room's two neighbors form its joint environment."""
    params.validate()
    n_bins = params.n_bins
    labels = [params.label_of_bin(b) for b in range(n_bins)]
    initial = params.bin_of(params.initial_temp)

    def dynamics(b, a, env):
        u = params.control_levels[a]
        t_new = room_step(params, params.center(b),
                          params.center(env[0]), params.center(env[1]), u)
        if not params.stochastic:
            return ((params.bin_of(t_new), 1.0),)
        return _room_stochastic_row(params, b, env, u)

    def env_class(env):
        return round(params.center(env[0]) + params.center(env[1]), 9)

    dfa = room_spec(params)
    components = []
    for j in range(params.rooms):
        components.append(MarkovGame(
            n_bins, initial, len(params.control_levels), labels,
            ROOM_ALPHABET, dynamics=dynamics, env_class=env_class,
            all_actions_enabled=True, template_key=("room",)))
    preds = [((j - 1) % params.rooms, (j + 1) % params.rooms)
             for j in range(params.rooms)]
    net = MdpNetwork(components, preds)
    return net, [dfa] * params.rooms


def _room_stochastic_row(params, b, env, u):
    """Within-bin uniform own temperature; the affine image spreads over bins."""
    w = params.temp_bin_width
    lo_t = params.temp_range[0] + b * w
    c = 1.0 - 2.0 * params.alpha - params.beta - params.gamma_heat * u
    img_a = room_step(params, lo_t, params.center(env[0]),
                      params.center(env[1]), u)
    img_b = img_a + c * w
    lo_img, hi_img = min(img_a, img_b), max(img_a, img_b)
    if hi_img - lo_img < 1e-12:
        return ((params.bin_of((lo_img + hi_img) / 2.0), 1.0),)
    total = hi_img - lo_img
    row = {}
    b_lo, b_hi = params.bin_of(lo_img), params.bin_of(hi_img)
    for bb in range(b_lo, b_hi + 1):
        seg_lo = params.temp_range[0] + bb * w
        seg_hi = seg_lo + w
        if bb == 0:
            seg_lo = -float("inf")
        if bb == params.n_bins - 1:
            seg_hi = float("inf")
        overlap = max(0.0, min(hi_img, seg_hi) - max(lo_img, seg_lo))
        if overlap > 0:
            row[bb] = row.get(bb, 0.0) + overlap / total
    return tuple(sorted(row.items()))


# -- traffic intersections ----------------------------------------------------------

TRAFFIC_ALPHABET = ("low", "mid", "high")
SPILL_BY_BIN = {"low": 0, "mid": 1, "high": 2}


@dataclass(frozen=True)
class TrafficParams:
    """Grid of signalized intersections with queue spillover coupling.

    Each intersection holds one queue per axis; the light serves the green
    axis at ``service_rate`` cars per step, and switching spends one all-red
    step.  Arrivals are Bernoulli per axis plus a deterministic spillover
    equal to the worst congestion contribution among the feeders of that
    axis (their three-level queue bins are the only thing neighbors
    communicate).  The specification keeps the total queue at or below
    ``threshold`` for ``horizon`` steps.
    """
    grid_side: int = 3
    approach_cap: int = 12
    threshold: int = 20
    horizon: int = 100
    arrival_p: float = 0.3
    service_rate: int = 4
    bin_edges: tuple = (10, 21)
    initial_queues: tuple = (0, 0)

    def validate(self):
        if self.grid_side < 2:
            raise ValueError("need at least a 2x2 grid")
        if not 0.0 <= self.arrival_p <= 1.0:
            raise ValueError("arrival probability must lie in [0, 1]")
        if self.service_rate < 1 or self.approach_cap < 1:
            raise ValueError("service rate and caps must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not self.threshold <= self.queue_cap:
            raise ValueError("threshold must not exceed the modeled cap")
        if not (0 < self.bin_edges[0] <= self.bin_edges[1] <= self.queue_cap + 1):
            raise ValueError("bin edges must partition the queue range")
        if self.bin_edges[1] != self.threshold + 1:
            raise ValueError("the top bin must start right above the threshold")
        for q in self.initial_queues:
            if not 0 <= q <= self.approach_cap:
                raise ValueError("initial queues outside the cap")

    @property
    def queue_cap(self):
        return 2 * self.approach_cap

    def bin_of(self, total):
        if total < self.bin_edges[0]:
            return "low"
        if total < self.bin_edges[1]:
            return "mid"
        return "high"


def traffic_spec(params: TrafficParams) -> Dfa:
    formula = Always(frozenset({"low", "mid"}), params.horizon)
    return compile_formula(formula, TRAFFIC_ALPHABET)


def _bernoulli_sum(p, extra):
    """Distribution of ``Bernoulli(p) + extra`` as ((value, prob), ...)."""
    if p <= 0.0:
        return ((extra, 1.0),)
    if p >= 1.0:
        return ((1 + extra, 1.0),)
    return ((extra, 1.0 - p), (1 + extra, p))


def build_traffic(params: TrafficParams = TrafficParams()):
    """Grid network; feeders of each axis are the adjacent intersections."""
    params.validate()
    n = params.grid_side
    cap = params.approach_cap
    q_states = cap + 1

    def index(q_ns, q_ew, phase):
        return (q_ns * q_states + q_ew) * 2 + phase

    def unpack(s):
        phase = s % 2
        q_ew = (s // 2) % q_states
        q_ns = s // (2 * q_states)
        return q_ns, q_ew, phase

    n_states = q_states * q_states * 2
    labels = [params.bin_of(sum(unpack(s)[:2])) for s in range(n_states)]
    init = index(params.initial_queues[0], params.initial_queues[1], 0)

    def make_component(n_ns, n_ew):
        def spill(env):
            ns = max((SPILL_BY_BIN[labels[e]] for e in env[:n_ns]), default=0)
            ew = max((SPILL_BY_BIN[labels[e]] for e in env[n_ns:]), default=0)
            return ns, ew

        def dynamics(s, a, env):
            q_ns, q_ew, phase = unpack(s)
            if a == 1:
                phase_next, served_ns, served_ew = 1 - phase, 0, 0
            else:
                phase_next = phase
                served_ns = params.service_rate if phase == 0 else 0
                served_ew = params.service_rate if phase == 1 else 0
            sp_ns, sp_ew = spill(env)
            row = {}
            for in_ns, p_ns in _bernoulli_sum(params.arrival_p, sp_ns):
                for in_ew, p_ew in _bernoulli_sum(params.arrival_p, sp_ew):
                    nxt_ns = min(max(q_ns - served_ns, 0) + in_ns, cap)
                    nxt_ew = min(max(q_ew - served_ew, 0) + in_ew, cap)
                    t = index(nxt_ns, nxt_ew, phase_next)
                    row[t] = row.get(t, 0.0) + p_ns * p_ew
            return tuple(sorted(row.items()))

        def env_class(env):
            return spill(env)

        def env_member_class(pos, state):
            return labels[state]

        return MarkovGame(n_states, init, 2, labels, TRAFFIC_ALPHABET,
                          dynamics=dynamics, env_class=env_class,
                          env_member_class=env_member_class,
                          all_actions_enabled=True,
                          template_key=("traffic", n_ns, n_ew))

    def flat(r, c):
        return r * n + c

    components = []
    preds = []
    for r in range(n):
        for c in range(n):
            ns_feeders = [flat(rr, c) for rr in (r - 1, r + 1) if 0 <= rr < n]
            ew_feeders = [flat(r, cc) for cc in (c - 1, c + 1) if 0 <= cc < n]
            components.append(make_component(len(ns_feeders), len(ew_feeders)))
            preds.append(tuple(ns_feeders + ew_feeders))
    net = MdpNetwork(components, preds)
    dfa = traffic_spec(params)
    return net, [dfa] * (n * n)
