"""Exact discrete optimal transport over finite action supports.

Builds the two-step transport plan behind the general switching cost:
surplus measures moved *across* partition components (learning plan), plus
component-conditional plans *within* each component (transaction plan).
Plans are solved exactly by successive-shortest-path min-cost flow on
integer-scaled masses (see :mod:`netswitch._backend`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import _backend
from .errors import InfeasibleTransportError, ShapeError

MASS_ATOL = 1e-9
MAX_SUPPORT = 64
# masses are quantised to multiples of 2**-50 for the integer flow solver
SCALE = float(2 ** 50)


# ---------------------------------------------------------------------------
# partitions


def as_partition(partition, n_actions: int | None = None) -> np.ndarray:
    """Validate an action -> component-label assignment and return it as an int array."""
    labels = np.asarray(partition, dtype=np.int64)
    if labels.ndim != 1 or labels.size == 0:
        raise ShapeError("partition must be a non-empty 1-D label list")
    if n_actions is not None and labels.size != n_actions:
        raise ShapeError(f"partition covers {labels.size} actions, policy has {n_actions}")
    return labels


def components(partition) -> list[np.ndarray]:
    """Action index sets, ordered by ascending component label."""
    labels = as_partition(partition)
    return [np.flatnonzero(labels == lab) for lab in np.unique(labels)]


def component_masses(row, partition) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    return np.array([row[idx].sum() for idx in components(as_partition(partition, row.size))])


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class DiscreteMeasure:
    support: tuple[int, ...]
    mass: tuple[float, ...]

    def __post_init__(self):
        if len(self.support) != len(self.mass):
            raise ShapeError("support and mass lengths differ")
        if len(set(self.support)) != len(self.support):
            raise ValueError("support indices must be distinct")
        if any(m < 0 for m in self.mass):
            raise ValueError("masses must be nonnegative")

    @classmethod
    def from_dense(cls, vec, atol: float = 0.0) -> "DiscreteMeasure":
        vec = np.asarray(vec, dtype=float)
        idx = np.flatnonzero(vec > atol)
        return cls(tuple(int(i) for i in idx), tuple(float(vec[i]) for i in idx))

    @property
    def total(self) -> float:
        return float(sum(self.mass))

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[list(self.support)] = self.mass
        return out


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling ``{(src, dst): mass}``."""

    entries: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def dense(self, n: int, m: int | None = None) -> np.ndarray:
        out = np.zeros((n, n if m is None else m))
        for (i, j), w in self.entries.items():
            out[i, j] += w
        return out

    def marginals(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        d = self.dense(n)
        return d.sum(axis=1), d.sum(axis=0)

    def __add__(self, other: "TransportPlan") -> "TransportPlan":
        merged = dict(self.entries)
        for k, w in other.entries.items():
            merged[k] = merged.get(k, 0.0) + w
        return TransportPlan(merged)

    def scaled(self, factor: float) -> "TransportPlan":
        return TransportPlan({k: factor * w for k, w in self.entries.items()})

    def triples(self) -> list[tuple[int, int, float]]:
        return sorted((i, j, w) for (i, j), w in self.entries.items())

    def format(self) -> str:
        return "\n".join(f"({i}, {j}, {w:.12g})" for i, j, w in self.triples())


@dataclass(frozen=True)
class GroundCost:
    """Cost between two actions.

    ``cross_component_indicator`` charges ``weight`` when the two actions sit in
    different partition components and 0 otherwise; ``constant_one`` charges 1
    everywhere; ``explicit_matrix`` reads ``matrix[x, y]``.
    """

    kind: str
    matrix: np.ndarray | None = None
    weight: float = 1.0

    KINDS = ("cross_component_indicator", "constant_one", "explicit_matrix")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown ground cost kind {self.kind!r}")
        if self.kind == "explicit_matrix":
            m = np.array(self.matrix, dtype=float)
            if m.ndim != 2 or not np.all(np.isfinite(m)) or np.any(m < 0):
                raise ValueError("explicit cost matrix must be finite, nonnegative and 2-D")
            m.setflags(write=False)
            object.__setattr__(self, "matrix", m)

    @classmethod
    def cross(cls, weight: float = 1.0) -> "GroundCost":
        return cls("cross_component_indicator", weight=weight)

    @classmethod
    def one(cls) -> "GroundCost":
        return cls("constant_one")

    @classmethod
    def explicit(cls, matrix) -> "GroundCost":
        return cls("explicit_matrix", matrix=matrix)

    def table(self, n_actions: int, partition=None) -> np.ndarray:
        if self.kind == "constant_one":
            return np.ones((n_actions, n_actions))
        if self.kind == "explicit_matrix":
            if self.matrix.shape != (n_actions, n_actions):
                raise ShapeError(f"cost matrix {self.matrix.shape} does not fit {n_actions} actions")
            return np.array(self.matrix)
        if partition is None:
            raise ValueError("cross-component cost needs a partition")
        labels = as_partition(partition, n_actions)
        return self.weight * (labels[:, None] != labels[None, :]).astype(float)

    def to_text(self) -> str:
        if self.kind == "cross_component_indicator":
            return "cross" if self.weight == 1.0 else f"cross:{self.weight!r}"
        if self.kind == "constant_one":
            return "one"
        return "m:" + ";".join(",".join(repr(float(x)) for x in row) for row in self.matrix)

    @classmethod
    def from_text(cls, text: str) -> "GroundCost":
        text = text.strip()
        if text == "cross":
            return cls.cross()
        if text.startswith("cross:"):
            return cls.cross(float(text[6:]))
        if text == "one":
            return cls.one()
        if text.startswith("m:"):
            rows = [[float(x) for x in r.split(",")] for r in text[2:].split(";")]
            return cls.explicit(rows)
        raise ValueError(f"cannot parse ground cost {text!r}")


# ---------------------------------------------------------------------------
# solver


def _quantise(masses: np.ndarray, total: int | None = None) -> np.ndarray:
    q = np.rint(np.asarray(masses, dtype=float) * SCALE).astype(np.int64)
    if total is not None and q.size:
        # absorb rounding drift in the largest atom
        q[int(np.argmax(q))] += total - int(q.sum())
    return q


def quantise_pair(mu_mass, nu_mass) -> tuple[np.ndarray, np.ndarray]:
    """Integer supplies/demands with equal totals, at resolution ``2**-50``."""
    a = _quantise(mu_mass)
    b = _quantise(nu_mass, total=int(a.sum()))
    if b.size and np.any(b < 0):
        raise InfeasibleTransportError("mass mismatch too large to reconcile")
    return a, b


def _check_balanced(mu: DiscreteMeasure, nu: DiscreteMeasure) -> None:
    if abs(mu.total - nu.total) > MASS_ATOL:
        raise InfeasibleTransportError(
            f"source mass {mu.total:.12g} != target mass {nu.total:.12g}")
    if len(mu.support) > MAX_SUPPORT or len(nu.support) > MAX_SUPPORT:
        raise ValueError(f"supports are capped at {MAX_SUPPORT} points")


def northwest_corner(supply: np.ndarray, demand: np.ndarray) -> np.ndarray:
    """A feasible (generally suboptimal) integer plan, filled row-major."""
    supply = np.array(supply, dtype=np.int64)
    demand = np.array(demand, dtype=np.int64)
    flow = np.zeros((supply.size, demand.size), dtype=np.int64)
    i = j = 0
    while i < supply.size and j < demand.size:
        x = min(supply[i], demand[j])
        flow[i, j] = x
        supply[i] -= x
        demand[j] -= x
        if supply[i] == 0:
            i += 1
        else:
            j += 1
    return flow


def _integer_costs(C: np.ndarray) -> list[list[int]]:
    # every double is a dyadic rational, so one power of two makes them all integers
    ratios = [[float(x).as_integer_ratio() for x in row] for row in C]
    shift = max(d.bit_length() - 1 for row in ratios for _, d in row)
    return [[n << (shift - (d.bit_length() - 1)) for n, d in row] for row in ratios]


def cancel_negative_cycles(flow: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Make an integer plan exactly optimal for the float costs ``C``.

    The flow kernel compares path lengths in floating point and can stop one
    rounding error short of the optimum. This removes any remaining negative
    residual cycle using exact integer arithmetic.
    """
    flow = np.array(flow, dtype=np.int64)
    n, m = flow.shape
    K = _integer_costs(C)
    V = n + m
    while True:
        # residual arcs: i -> n+j always open, n+j -> i while flow[i, j] > 0
        arcs = [(i, n + j, K[i][j]) for i in range(n) for j in range(m)]
        arcs += [(n + j, i, -K[i][j]) for i in range(n) for j in range(m) if flow[i, j] > 0]
        dist = [0] * V
        pred = [-1] * V
        last = -1
        for _ in range(V):
            last = -1
            for u, v, w in arcs:
                if dist[u] + w < dist[v]:
                    dist[v] = dist[u] + w
                    pred[v] = u
                    last = v
            if last < 0:
                return flow
        for _ in range(V):
            last = pred[last]
        cycle = [last]
        node = pred[last]
        while node != last:
            cycle.append(node)
            node = pred[node]
        cycle.reverse()
        hops = list(zip(cycle, cycle[1:] + cycle[:1]))
        back = [(v, u - n) for u, v in hops if u >= n]
        push = min(int(flow[i, j]) for i, j in back)
        for u, v in hops:
            if u < n:
                flow[u, v - n] += push
            else:
                flow[v, u - n] -= push


def exact_objective(flow: np.ndarray, C: np.ndarray) -> Fraction:
    """``sum C * flow`` in rational arithmetic (flow in quantised units)."""
    return sum((Fraction(float(C[i, j])) * int(flow[i, j]) for i, j in zip(*np.nonzero(flow))),
               Fraction(0))


def solve_ot(mu: DiscreteMeasure, nu: DiscreteMeasure, cost: GroundCost | np.ndarray,
             n_actions: int | None = None, partition=None,
             mode: str = "optimal") -> tuple[TransportPlan, float]:
    """Optimal (or first-feasible) plan between two discrete measures on the action set.

    ``cost`` is a :class:`GroundCost` (needs ``n_actions``) or a dense matrix
    indexed by action ids.
    """
    _check_balanced(mu, nu)
    if not mu.support or not nu.support or mu.total == 0.0:
        return TransportPlan({}), 0.0
    if isinstance(cost, GroundCost):
        if n_actions is None:
            n_actions = 1 + max(max(mu.support), max(nu.support))
        C = cost.table(n_actions, partition)
    else:
        C = np.asarray(cost, dtype=float)
    sub = C[np.ix_(mu.support, nu.support)]
    supply, demand = quantise_pair(mu.mass, nu.mass)
    if mode == "optimal":
        flow = _backend.kernels.min_cost_flow(supply, demand, np.ascontiguousarray(sub))
        flow = cancel_negative_cycles(flow, sub)
    elif mode == "feasible":
        flow = northwest_corner(supply, demand)
    else:
        raise ValueError(f"unknown plan mode {mode!r}")
    entries = {}
    for i, j in zip(*np.nonzero(flow)):
        entries[(mu.support[i], nu.support[j])] = flow[i, j] / SCALE
    objective = float(exact_objective(flow, sub) / int(SCALE))
    return TransportPlan(entries), objective


# ---------------------------------------------------------------------------
# two-step switching plan


def surplus_measures(pi_o_row, pi_n_row, partition) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Mass that must leave each component of the old row, and enter each of the new one."""
    po = np.asarray(pi_o_row, dtype=float)
    pn = np.asarray(pi_n_row, dtype=float)
    if po.shape != pn.shape:
        raise ShapeError("rows must have equal length")
    rho = np.zeros_like(po)
    eta = np.zeros_like(pn)
    for idx in components(as_partition(partition, po.size)):
        a, b = po[idx].sum(), pn[idx].sum()
        if a > b:
            rho[idx] = (a - b) * po[idx] / a
        elif b > a:
            eta[idx] = (b - a) * pn[idx] / b
    return DiscreteMeasure.from_dense(rho), DiscreteMeasure.from_dense(eta)


def _within_component_plans(po, pn, partition, c2: GroundCost, mode: str):
    """Yield ``(tau, plan, objective)`` for each component with ``tau > 0``."""
    n = po.size
    for idx in components(as_partition(partition, n)):
        a, b = po[idx].sum(), pn[idx].sum()
        tau = min(a, b)
        if tau <= 0.0:
            continue
        cond_o = np.zeros(n)
        cond_n = np.zeros(n)
        cond_o[idx] = po[idx] / a
        cond_n[idx] = pn[idx] / b
        plan, obj = solve_ot(DiscreteMeasure.from_dense(cond_o), DiscreteMeasure.from_dense(cond_n),
                             c2, n, partition, mode)
        yield tau, plan, obj


def learning_cost_general(pi_o_row, pi_n_row, partition, c1: GroundCost,
                          mode: str = "optimal") -> float:
    rho, eta = surplus_measures(pi_o_row, pi_n_row, partition)
    _, obj = solve_ot(rho, eta, c1, len(pi_o_row), partition, mode)
    return obj


def transaction_cost_general(pi_o_row, pi_n_row, partition, c2: GroundCost,
                             mode: str = "optimal") -> float:
    po = np.asarray(pi_o_row, dtype=float)
    pn = np.asarray(pi_n_row, dtype=float)
    return float(sum(tau * obj for tau, _, obj in _within_component_plans(po, pn, partition, c2, mode)))


def combined_plan(pi_o_row, pi_n_row, partition, c1: GroundCost, c2: GroundCost,
                  mode: str = "optimal") -> TransportPlan:
    """Learning plan plus tau-weighted within-component plans; couples the two rows."""
    po = np.asarray(pi_o_row, dtype=float)
    pn = np.asarray(pi_n_row, dtype=float)
    rho, eta = surplus_measures(po, pn, partition)
    plan, _ = solve_ot(rho, eta, c1, po.size, partition, mode)
    for tau, lam, _ in _within_component_plans(po, pn, partition, c2, mode):
        plan = plan + lam.scaled(tau)
    return plan


def plan_cost(plan: TransportPlan, cost_matrix: np.ndarray) -> float:
    return float(sum(cost_matrix[k] * w for k, w in plan.entries.items()))
