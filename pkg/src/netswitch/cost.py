"""Switching-cost family and its specialisations.

A cost is ``sigma( sum_s mu[s] f[s] (c_l * L_s + c_t * T_s) )`` where ``L_s``
(learning) and ``T_s`` (transaction) compare the old and new action
distributions at state ``s``. The local and global switching costs, the
two-component transport cost and the general optimal-transport cost are all
members. :class:`CustomCostTable` covers hand-built costs keyed by policy
classes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import ot
from .errors import FormatError, PartitionArityError, ShapeError
from .mdp import STOCHASTIC_ATOL, TabularPolicy, _check_same_shape

STATEWISE_KINDS = ("indicator", "transport_two", "transport_general", "custom_table")


@dataclass(frozen=True)
class Activation:
    """The outer map sigma.

    ``identity``; ``scaled`` (``factor * x``); ``positive`` (1 if x > 0 else 0);
    ``table`` (piecewise-linear through ``breakpoints``, flat beyond the ends).
    """

    kind: str = "identity"
    factor: float = 1.0
    breakpoints: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.kind not in ("identity", "scaled", "positive", "table"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "table":
            xs = [p[0] for p in self.breakpoints]
            if len(xs) < 2 or any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("table activation needs >= 2 strictly increasing breakpoints")

    def __call__(self, x):
        if self.kind == "identity":
            return x
        if self.kind == "scaled":
            if isinstance(x, Fraction):
                return Fraction(self.factor) * x
            return self.factor * x
        if self.kind == "positive":
            return 1 if x > 0 else 0
        xs, ys = zip(*self.breakpoints)
        return float(np.interp(float(x), xs, ys))

    def to_text(self) -> str:
        if self.kind == "scaled":
            return f"scaled:{self.factor!r}"
        if self.kind == "table":
            return "table:" + ",".join(f"{x!r}:{y!r}" for x, y in self.breakpoints)
        return self.kind

    @classmethod
    def from_text(cls, text: str) -> "Activation":
        text = text.strip()
        if text.startswith("scaled:"):
            return cls("scaled", factor=float(text[7:]))
        if text.startswith("table:"):
            pts = tuple(tuple(float(v) for v in p.split(":")) for p in text[6:].split(","))
            return cls("table", breakpoints=pts)
        return cls(text)


# ---------------------------------------------------------------------------
# custom table costs

POLICY_CLASSES = ("deterministic-same-action", "deterministic-mixed", "stochastic-anywhere")


def policy_class(policy: TabularPolicy) -> str:
    if not policy.is_deterministic():
        return "stochastic-anywhere"
    acts = np.argmax(policy.probs, axis=1)
    return "deterministic-same-action" if np.all(acts == acts[0]) else "deterministic-mixed"


def fingerprint(policy: TabularPolicy) -> str:
    rows = ";".join(",".join(f"{p:.12g}" for p in row) for row in policy.probs)
    return f"fp:{rows}"


@dataclass(frozen=True)
class CustomCostTable:
    """Cost looked up from ``(old_key, new_key)`` pairs.

    A key is an exact policy fingerprint (see :func:`fingerprint`), a class
    name from :data:`POLICY_CLASSES`, or ``"*"``. The most specific match on
    the new policy wins, then on the old one. Switching to a row-identical
    policy costs ``same_policy_cost``.
    """

    entries: Mapping[tuple[str, str], float]
    same_policy_cost: float = 0.0

    def lookup(self, pi_o: TabularPolicy, pi_n: TabularPolicy) -> float:
        _check_same_shape(pi_o, pi_n)
        if np.all(pi_o.row_equal(pi_n)):
            return float(self.same_policy_cost)
        old_keys = (fingerprint(pi_o), policy_class(pi_o), "*")
        for nk in (fingerprint(pi_n), policy_class(pi_n), "*"):
            for ok in old_keys:
                if (ok, nk) in self.entries:
                    return float(self.entries[(ok, nk)])
        raise KeyError(f"no custom cost entry for switching to {policy_class(pi_n)}")

    def to_text(self) -> str:
        return ";".join(f"{o}>{n}:{v!r}" for (o, n), v in self.entries.items())

    @classmethod
    def from_text(cls, text: str, same_policy_cost: float = 0.0) -> "CustomCostTable":
        entries = {}
        for item in filter(None, (p.strip() for p in text.split(";"))):
            pair, value = item.rsplit(":", 1)
            o, n = pair.split(">")
            entries[(o.strip(), n.strip())] = float(value)
        return cls(entries, same_policy_cost)


def tiered_cost_table() -> CustomCostTable:
    """25 / 50 / 500 construction: same-action deterministic, mixed deterministic, stochastic."""
    return CustomCostTable({
        ("*", "deterministic-same-action"): 25.0,
        ("*", "deterministic-mixed"): 50.0,
        ("*", "stochastic-anywhere"): 500.0,
    })


# ---------------------------------------------------------------------------
# the cost family


@dataclass(frozen=True)
class CostSpec:
    statewise_kind: str = "transport_two"
    activation: Activation = field(default_factory=Activation)
    learn_weight: float = 1.0
    trans_weight: float = 0.0
    partition: tuple[int, ...] | None = None
    state_measure: tuple[float, ...] | None = None  # None -> uniform
    state_weight: tuple[float, ...] | None = None  # None -> all ones
    c1: ot.GroundCost = field(default_factory=ot.GroundCost.cross)
    c2: ot.GroundCost = field(default_factory=ot.GroundCost.one)
    ot_mode: str = "optimal"
    custom: CustomCostTable | None = None

    def __post_init__(self):
        if self.statewise_kind not in STATEWISE_KINDS:
            raise ValueError(f"unknown statewise kind {self.statewise_kind!r}")
        if self.state_measure is not None:
            mu = np.asarray(self.state_measure, dtype=float)
            if np.any(mu < 0) or abs(mu.sum() - 1.0) > STOCHASTIC_ATOL:
                raise ValueError("state measure must be a probability vector")
        if self.partition is not None:
            ot.as_partition(self.partition)
            if self.statewise_kind == "transport_two" and len(set(self.partition)) != 2:
                raise PartitionArityError("transport_two needs exactly two components")
        if self.statewise_kind in ("transport_two", "transport_general") and self.partition is None:
            raise ValueError(f"{self.statewise_kind} needs a partition")
        if self.statewise_kind == "custom_table" and self.custom is None:
            raise ValueError("custom_table needs a CustomCostTable")
        if self.ot_mode not in ("optimal", "feasible"):
            raise ValueError("ot_mode must be 'optimal' or 'feasible'")

    # local and global switching costs ------------------------------------

    @classmethod
    def local(cls, n_states: int) -> "CostSpec":
        return cls("indicator", Activation("scaled", factor=float(n_states)), 1.0, 0.0)

    @classmethod
    def global_switching(cls) -> "CostSpec":
        return cls("indicator", Activation("positive"), 1.0, 0.0)

    @classmethod
    def transport(cls, partition, c_l: float = 1.0, c_t: float = 0.0, **kw) -> "CostSpec":
        return cls("transport_two", learn_weight=c_l, trans_weight=c_t,
                   partition=tuple(int(x) for x in partition), **kw)

    @classmethod
    def zero(cls) -> "CostSpec":
        return cls("indicator", learn_weight=0.0, trans_weight=0.0)

    @classmethod
    def from_table(cls, table: CustomCostTable) -> "CostSpec":
        return cls("custom_table", custom=table)

    # per-state pieces -------------------------------------------------------

    def measure(self, n_states: int) -> np.ndarray:
        if self.state_measure is None:
            return np.full(n_states, 1.0 / n_states)
        mu = np.asarray(self.state_measure, dtype=float)
        if mu.size != n_states:
            raise ShapeError(f"state measure has {mu.size} entries, MDP has {n_states} states")
        return mu

    def weights(self, n_states: int) -> np.ndarray:
        if self.state_weight is None:
            return np.ones(n_states)
        f = np.asarray(self.state_weight, dtype=float)
        if f.size != n_states:
            raise ShapeError(f"state weight has {f.size} entries, MDP has {n_states} states")
        return f

    def statewise(self, po_row, pn_row) -> tuple[float, float]:
        """``(L_s, T_s)`` for one state."""
        kind = self.statewise_kind
        if kind == "indicator":
            differs = bool(np.any(np.abs(np.asarray(po_row) - np.asarray(pn_row)) > STOCHASTIC_ATOL))
            return (1.0 if differs else 0.0), 0.0
        if kind == "transport_two":
            return (statewise_learning_two(po_row, pn_row, self.partition),
                    statewise_transaction_two(po_row, pn_row, self.partition))
        if kind == "transport_general":
            return (ot.learning_cost_general(po_row, pn_row, self.partition, self.c1, self.ot_mode),
                    ot.transaction_cost_general(po_row, pn_row, self.partition, self.c2, self.ot_mode))
        raise ValueError("custom_table costs have no per-state decomposition")

    def statewise_terms(self, po: np.ndarray, pn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-state ``(L, T)`` arrays for two whole (S, A) tables."""
        if self.statewise_kind == "transport_two":
            comps = ot.components(ot.as_partition(self.partition, po.shape[1]))
            if len(comps) != 2:
                raise PartitionArityError(f"need exactly 2 components, got {len(comps)}")
            a = [po[:, c].sum(axis=1) for c in comps]
            b = [pn[:, c].sum(axis=1) for c in comps]
            return np.abs(a[0] - b[0]), np.minimum(a[0], b[0]) + np.minimum(a[1], b[1])
        pairs = [self.statewise(po[s], pn[s]) for s in range(po.shape[0])]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def statewise_total(self, po_row, pn_row) -> float:
        ell, tau = self.statewise(po_row, pn_row)
        return self.learn_weight * ell + self.trans_weight * tau

    # serialisation ----------------------------------------------------------

    def to_config(self) -> dict[str, str]:
        out = {"kind": self.statewise_kind, "sigma": self.activation.to_text(),
               "c_l": repr(float(self.learn_weight)), "c_t": repr(float(self.trans_weight))}
        if self.partition is not None:
            out["partition"] = ",".join(str(x) for x in self.partition)
        if self.state_measure is not None:
            out["mu"] = ",".join(repr(float(x)) for x in self.state_measure)
        if self.state_weight is not None:
            out["f"] = ",".join(repr(float(x)) for x in self.state_weight)
        if self.statewise_kind == "transport_general":
            out["c1"] = self.c1.to_text()
            out["c2"] = self.c2.to_text()
            out["ot_mode"] = self.ot_mode
        if self.custom is not None:
            out["custom"] = self.custom.to_text()
            out["same_policy"] = repr(float(self.custom.same_policy_cost))
        return out

    @classmethod
    def from_config(cls, cfg: Mapping[str, str], n_states: int | None = None) -> "CostSpec":
        """Parse a ``key=value`` block. ``kind`` may also be a shorthand: local, global, zero or tiered."""
        try:
            kind = cfg.get("kind", "transport_two").strip()
            if kind == "local":
                if n_states is None:
                    raise FormatError("kind=local needs the number of states")
                return cls.local(n_states)
            if kind == "global":
                return cls.global_switching()
            if kind == "zero":
                return cls.zero()
            if kind == "tiered":
                return cls.from_table(tiered_cost_table())

            def floats(key):
                return tuple(float(x) for x in cfg[key].split(",")) if key in cfg else None

            custom = None
            if "custom" in cfg:
                custom = CustomCostTable.from_text(cfg["custom"], float(cfg.get("same_policy", 0.0)))
            partition = tuple(int(x) for x in cfg["partition"].split(",")) if "partition" in cfg else None
            return cls(
                statewise_kind=kind,
                activation=Activation.from_text(cfg.get("sigma", "identity")),
                learn_weight=float(cfg.get("c_l", 1.0)),
                trans_weight=float(cfg.get("c_t", 0.0)),
                partition=partition,
                state_measure=floats("mu"),
                state_weight=floats("f"),
                c1=ot.GroundCost.from_text(cfg.get("c1", "cross")),
                c2=ot.GroundCost.from_text(cfg.get("c2", "one")),
                ot_mode=cfg.get("ot_mode", "optimal").strip(),
                custom=custom,
            )
        except FormatError:
            raise
        except (KeyError, ValueError) as exc:
            raise FormatError(f"bad cost block: {exc}") from exc


# ---------------------------------------------------------------------------
# closed forms for two components


def _two_masses(po_row, pn_row, partition) -> tuple[np.ndarray, np.ndarray]:
    po = np.asarray(po_row, dtype=float)
    pn = np.asarray(pn_row, dtype=float)
    labels = ot.as_partition(partition, po.size)
    if np.unique(labels).size != 2:
        raise PartitionArityError(f"need exactly 2 components, got {np.unique(labels).size}")
    return ot.component_masses(po, labels), ot.component_masses(pn, labels)


def statewise_learning_two(pi_o_row, pi_n_row, partition) -> float:
    """Mass moved across the two components: ``|pi_o(A1|s) - pi_n(A1|s)|``."""
    a, b = _two_masses(pi_o_row, pi_n_row, partition)
    return float(abs(a[0] - b[0]))


def statewise_transaction_two(pi_o_row, pi_n_row, partition) -> float:
    """Mass staying in its component: ``min(a1, b1) + min(a2, b2)``."""
    a, b = _two_masses(pi_o_row, pi_n_row, partition)
    return float(min(a[0], b[0]) + min(a[1], b[1]))


# ---------------------------------------------------------------------------
# aggregate


def cost(spec: CostSpec | CustomCostTable, pi_o: TabularPolicy, pi_n: TabularPolicy,
         mc_states: int | None = None, seed: int | None = None) -> float:
    """Switching cost ``C(pi_o, pi_n)``.

    With ``mc_states`` the state integral is replaced by an average over that
    many draws from the state measure.
    """
    if isinstance(spec, CustomCostTable):
        return spec.lookup(pi_o, pi_n)
    if spec.statewise_kind == "custom_table":
        return spec.custom.lookup(pi_o, pi_n)
    _check_same_shape(pi_o, pi_n)
    if mc_states is not None and mc_states < 1:
        raise ValueError("mc_states must be >= 1")
    S = pi_o.n_states
    mu = spec.measure(S)
    f = spec.weights(S)
    if mc_states is None and spec.statewise_kind == "indicator":
        return _indicator_exact(spec, pi_o, pi_n)
    ell, tau = spec.statewise_terms(pi_o.probs, pi_n.probs)
    F = spec.learn_weight * ell + spec.trans_weight * tau
    if mc_states is not None:
        rng = np.random.default_rng(seed)
        states = rng.choice(S, size=mc_states, p=mu)
        return float(spec.activation(math.fsum(f[states] * F[states]) / mc_states))
    total = math.fsum(float(mu[s]) * float(f[s]) * float(F[s]) for s in range(S) if mu[s] > 0)
    return float(spec.activation(total))


def _indicator_exact(spec: CostSpec, pi_o: TabularPolicy, pi_n: TabularPolicy) -> float:
    # rational arithmetic so that |S| * sum(1/|S| * 1{...}) is an exact integer
    S = pi_o.n_states
    differs = ~pi_o.row_equal(pi_n)
    if spec.state_measure is None:
        mu = [Fraction(1, S)] * S
    else:
        mu = [Fraction(float(x)) for x in spec.state_measure]
    f = [Fraction(float(x)) for x in spec.weights(S)]
    cl = Fraction(float(spec.learn_weight))
    total = sum((mu[s] * f[s] * cl for s in range(S) if differs[s]), Fraction(0))
    return float(spec.activation(total))


def local_cost(pi_o: TabularPolicy, pi_n: TabularPolicy) -> int:
    """Number of states whose action distributions differ."""
    return int(np.count_nonzero(~pi_o.row_equal(pi_n)))


def global_cost(pi_o: TabularPolicy, pi_n: TabularPolicy) -> int:
    """1 if the policies differ anywhere, else 0."""
    return int(local_cost(pi_o, pi_n) > 0)
