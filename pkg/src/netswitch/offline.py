"""Offline datasets and twin-critic net value evaluation in tabular form.

The critics are dense tables. Each training step draws one mini-batch per
critic, regresses toward the pessimistic target

    y = r - (1 - gamma) * C + gamma * min_j Qtarget_j(s', a'),   a' ~ pi(.|s')

with a clipped squared-error gradient step, then soft-updates the targets.
The recursion estimates the infinite-horizon net Q table ``Q_inf - C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _backend
from .errors import ConvergenceError, FormatError, UnsupportedDiscountError
from .mdp import FiniteMdp, TabularPolicy, _rollout, cdf_table, check_policy, sample_categorical
from .net_value import SwitchProblem


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class TransitionDataset:
    """Column-stored transition records, ordered by episode then step."""

    episode: np.ndarray
    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    n_states: int
    n_actions: int
    horizon: int
    behavior_id: str = "unknown"

    def __post_init__(self):
        ints = ("episode", "t", "s", "a", "s_next")
        for name in ints:
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        r = np.ascontiguousarray(self.r, dtype=float)
        done = np.asarray(self.done, dtype=bool)
        r.setflags(write=False)
        done.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "done", done)
        n = self.s.size
        if any(getattr(self, k).shape != (n,) for k in ints + ("r", "done")):
            raise ValueError("dataset columns must be 1-D and of equal length")
        if n == 0:
            return
        if np.any(self.t < 0) or np.any(self.t >= self.horizon):
            raise ValueError("record step index outside [0, H)")
        if not np.array_equal(self.done, self.t == self.horizon - 1):
            raise ValueError("done must be set exactly on the last step of an episode")
        for name, hi in (("s", self.n_states), ("s_next", self.n_states), ("a", self.n_actions)):
            col = getattr(self, name)
            if np.any(col < 0) or np.any(col >= hi):
                raise ValueError(f"column {name} out of range")
        if not np.all(np.isfinite(self.r)):
            raise ValueError("rewards must be finite")
        if " " in self.behavior_id or not self.behavior_id:
            raise ValueError("behavior_id must be a non-empty token without spaces")

    def __len__(self) -> int:
        return int(self.s.size)

    def __eq__(self, other):
        if not isinstance(other, TransitionDataset):
            return NotImplemented
        same_meta = (self.n_states, self.n_actions, self.horizon, self.behavior_id) == (
            other.n_states, other.n_actions, other.horizon, other.behavior_id)
        cols = ("episode", "t", "s", "a", "r", "s_next", "done")
        return same_meta and all(np.array_equal(getattr(self, c), getattr(other, c)) for c in cols)

    __hash__ = None

    def records(self) -> list[tuple[int, int, int, int, float, int, bool]]:
        return [(int(e), int(t), int(s), int(a), float(r), int(sn), bool(d))
                for e, t, s, a, r, sn, d in zip(self.episode, self.t, self.s, self.a,
                                                self.r, self.s_next, self.done)]

    def counts(self) -> np.ndarray:
        c = np.zeros((self.n_states, self.n_actions), dtype=np.int64)
        np.add.at(c, (self.s, self.a), 1)
        return c

    def format(self) -> str:
        lines = [f"dataset {len(self)} {self.n_states} {self.n_actions} {self.horizon} {self.behavior_id}"]
        for e, t, s, a, r, sn, d in self.records():
            lines.append(f"{e} {t} {s} {a} {r!r} {sn} {int(d)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse(cls, text: str) -> "TransitionDataset":
        lines = [ln.split("#", 1)[0].split() for ln in text.splitlines()]
        lines = [ln for ln in lines if ln]
        if not lines or lines[0][0] != "dataset" or len(lines[0]) != 6:
            raise FormatError("expected header 'dataset n_records n_states n_actions H behavior_id'")
        head = lines[0]
        try:
            n, S, A, H = (int(x) for x in head[1:5])
            body = lines[1:]
            if len(body) != n:
                raise FormatError(f"header announces {n} records, found {len(body)}")
            if any(len(row) != 7 for row in body):
                raise FormatError("every record needs 7 fields: episode t s a r s_next done")
            cols = list(zip(*body)) if body else [()] * 7
            ints = [np.array([int(x) for x in cols[k]], dtype=np.int64) for k in (0, 1, 2, 3, 5)]
            r = np.array([float(x) for x in cols[4]], dtype=float)
            done = np.array([int(x) for x in cols[6]], dtype=np.int64)
        except ValueError as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed dataset: {exc}") from exc
        if np.any((done != 0) & (done != 1)):
            raise FormatError("done flag must be 0 or 1")
        try:
            return cls(ints[0], ints[1], ints[2], ints[3], r, ints[4], done.astype(bool),
                       S, A, H, head[5])
        except ValueError as exc:
            raise FormatError(str(exc)) from exc

    def save(self, path) -> None:
        Path(path).write_text(self.format())

    @classmethod
    def load(cls, path) -> "TransitionDataset":
        return cls.parse(Path(path).read_text())


def generate_dataset(mdp: FiniteMdp, behavior: TabularPolicy, n_episodes: int, seed: int,
                     behavior_id: str = "behavior") -> TransitionDataset:
    """Roll out ``n_episodes`` full episodes of ``behavior``; ``n_episodes * H`` records."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    steps = list(_rollout(mdp, behavior, n_episodes, seed))
    H = mdp.horizon

    def col(k):
        # (H, n_episodes) -> episode-major order
        return np.stack([st[k] for st in steps]).T.reshape(-1)

    t = np.tile(np.arange(H), n_episodes)
    return TransitionDataset(
        episode=np.repeat(np.arange(n_episodes), H), t=t, s=col(0), a=col(1), r=col(2),
        s_next=col(3), done=t == H - 1, n_states=mdp.n_states, n_actions=mdp.n_actions,
        horizon=H, behavior_id=behavior_id)


@dataclass(frozen=True)
class Coverage:
    """How much of the (s, a) table the data touches.

    ``required_missing`` lists pairs the evaluated policy can bootstrap from
    (reachable next states, positive action probability) with no records.
    """

    fraction: float
    n_present: int
    n_pairs: int
    required_missing: tuple[tuple[int, int], ...] = ()

    def format(self) -> str:
        miss = ";".join(f"{s},{a}" for s, a in self.required_missing) or "none"
        return (f"coverage={self.fraction:.12g}\npairs_present={self.n_present}/{self.n_pairs}\n"
                f"required_missing={miss}\n")


def coverage(data: TransitionDataset, policy: TabularPolicy | None = None) -> Coverage:
    present = data.counts() > 0
    missing: tuple[tuple[int, int], ...] = ()
    if policy is not None:
        next_states = np.unique(data.s_next)
        need = np.zeros_like(present)
        need[next_states] = policy.probs[next_states] > 0
        missing = tuple((int(s), int(a)) for s, a in zip(*np.nonzero(need & ~present)))
    n_pairs = present.size
    return Coverage(float(present.sum()) / n_pairs, int(present.sum()), n_pairs, missing)


# ---------------------------------------------------------------------------
# twin critics


@dataclass
class TwinNetQ:
    """``m`` critic tables (default two) and their soft-updated targets."""

    q: np.ndarray
    target: np.ndarray
    step_count: int = 0

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float, order="C")
        self.target = np.array(self.target, dtype=float, order="C")
        if self.q.ndim != 3 or self.q.shape != self.target.shape:
            raise ValueError("critic tables must share a shape (m, S, A)")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.target))):
            raise ValueError("critic tables must be finite")

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, m: int = 2) -> "TwinNetQ":
        q = np.zeros((m, n_states, n_actions))
        return cls(q, q.copy())

    def copy(self) -> "TwinNetQ":
        return TwinNetQ(self.q.copy(), self.target.copy(), self.step_count)

    @property
    def m(self) -> int:
        return self.q.shape[0]

    def min_q(self) -> np.ndarray:
        return self.q.min(axis=0)

    def min_target(self) -> np.ndarray:
        return self.target.min(axis=0)

    def soft_update(self, rho: float) -> None:
        self.target = rho * self.target + (1.0 - rho) * self.q


def ope_target(r: float, s_next: int, policy: TabularPolicy, twin: TwinNetQ, cost_value: float,
               gamma: float, rng: np.random.Generator) -> float:
    """One pessimistic regression target, drawing ``a' ~ pi(.|s')`` from ``rng``."""
    cdf = cdf_table(policy.probs[s_next])
    a2 = int(sample_categorical(cdf[None, :], np.array([rng.random()]))[0])
    return (r - (1.0 - gamma) * cost_value) + gamma * float(twin.target[:, s_next, a2].min())


def readout(twin: TwinNetQ, policy: TabularPolicy, s0: int, mc_action_samples: int = 0,
            rng: np.random.Generator | None = None) -> float:
    """``E_{a ~ pi(.|s0)} min_i Q_i(s0, a)``, exact when ``mc_action_samples == 0``."""
    row = twin.q[:, s0, :].min(axis=0)
    if mc_action_samples <= 0:
        return math.fsum(policy.probs[s0] * row)
    if rng is None:
        raise ValueError("Monte-Carlo readout needs an rng")
    cdf = cdf_table(policy.probs[s0])
    acts = sample_categorical(np.broadcast_to(cdf, (mc_action_samples, cdf.size)),
                              rng.random(mc_action_samples))
    return math.fsum(row[acts]) / mc_action_samples


@dataclass(frozen=True)
class OpeConfig:
    lr_q: float = 0.5
    soft: float = 0.995
    batch_size: int = 256
    epochs: int = 200
    steps_per_epoch: int = 200
    mc_action_samples: int = 0
    grad_clip_q: float = 1.0
    seed: int = 0
    n_critics: int = 2
    loss_tol: float = 1e-6
    cost_mc_states: int = 0

    def __post_init__(self):
        if not 0.0 <= self.soft <= 1.0:
            raise ValueError("soft must lie in [0, 1]")
        if self.lr_q <= 0:
            raise ValueError("lr_q must be positive")
        for name in ("batch_size", "epochs", "steps_per_epoch", "n_critics"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mc_action_samples < 0 or self.cost_mc_states < 0:
            raise ValueError("sample counts must be nonnegative")
        if self.grad_clip_q < 0:
            raise ValueError("grad_clip_q must be nonnegative (0 disables clipping)")


@dataclass
class LossTrace:
    rows: list[tuple[int, float, float]] = field(default_factory=list)

    def append(self, epoch: int, loss: float, value: float) -> None:
        self.rows.append((epoch, loss, value))

    def __len__(self) -> int:
        return len(self.rows)

    def format(self) -> str:
        return "".join(f"{e} {loss:.12g} {v:.12g}\n" for e, loss, v in self.rows)

    @classmethod
    def parse(cls, text: str) -> "LossTrace":
        rows = []
        for line in text.splitlines():
            if line.strip():
                e, loss, v = line.split()
                rows.append((int(e), float(loss), float(v)))
        return cls(rows)


class OpeResult(NamedTuple):
    v_net_hat: float
    twin: TwinNetQ
    loss_trace: LossTrace
    coverage: Coverage


class CriticRunner:
    """Shared plumbing for driving the compiled/pure critic kernel over a dataset."""

    def __init__(self, data: TransitionDataset, twin: TwinNetQ, gamma: float, cfg: OpeConfig,
                 rng: np.random.Generator, s0: int):
        if len(data) == 0:
            raise ValueError("dataset is empty")
        self.data = data
        self.twin = twin
        self.gamma = gamma
        self.cfg = cfg
        self.rng = rng
        self.s0 = s0

    def draw(self, steps: int) -> tuple[np.ndarray, np.ndarray]:
        shape = (steps, self.twin.m, self.cfg.batch_size)
        idx = self.rng.integers(0, len(self.data), size=shape, dtype=np.int64)
        u = self.rng.random(shape)
        return idx, u

    def run(self, policy: TabularPolicy, idx, u, cost_terms) -> tuple[np.ndarray, np.ndarray]:
        T = idx.shape[0]
        losses = np.empty(T)
        vhat = np.empty(T)
        d = self.data
        _backend.kernels.critic_steps(
            self.twin.q, self.twin.target, np.ascontiguousarray(cdf_table(policy.probs)),
            d.s, d.a, d.r, d.s_next, np.ascontiguousarray(idx), np.ascontiguousarray(u),
            np.ascontiguousarray(cost_terms, dtype=float), float(self.gamma), float(self.cfg.lr_q),
            float(self.cfg.grad_clip_q), float(self.cfg.soft),
            np.ascontiguousarray(policy.probs[self.s0]), int(self.s0), losses, vhat)
        self.twin.step_count += T
        return losses, vhat


def check_finite(twin: TwinNetQ, where: str) -> None:
    if not (np.all(np.isfinite(twin.q)) and np.all(np.isfinite(twin.target))):
        bad = np.argwhere(~np.isfinite(twin.q))
        raise ConvergenceError(f"non-finite critic values {where} at step {twin.step_count}; "
                               f"first bad entries (critic, s, a): {bad[:3].tolist()}; "
                               "lower lr_q or enable grad_clip_q")


def evaluate_offline(problem: SwitchProblem, policy: TabularPolicy, data: TransitionDataset,
                     cfg: OpeConfig, twin: TwinNetQ | None = None,
                     switch_cost: float | None = None) -> OpeResult:
    """Offline net value of ``policy`` at ``s0`` from logged transitions.

    The switching cost ``C(pi_o, policy)`` enters every target as
    ``(1 - gamma) * C``. Training stops after ``cfg.epochs`` epochs, or earlier
    when the epoch-mean TD loss moves by less than ``cfg.loss_tol``.
    ``switch_cost`` overrides the cost computed from the problem.
    """
    mdp = problem.mdp
    if mdp.discount >= 1.0:
        raise UnsupportedDiscountError("offline evaluation needs gamma < 1")
    check_policy(mdp, policy)
    if (data.n_states, data.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValueError("dataset does not match the MDP's state/action spaces")
    rng = np.random.default_rng(cfg.seed)
    twin = TwinNetQ.zeros(mdp.n_states, mdp.n_actions, cfg.n_critics) if twin is None else twin.copy()
    c = switch_cost
    if c is None:
        c = problem.switch_cost(policy, cfg.cost_mc_states or None, cfg.seed)
    runner = CriticRunner(data, twin, mdp.discount, cfg, rng, problem.initial_state)
    cost_terms = np.full(cfg.steps_per_epoch, (1.0 - mdp.discount) * c)
    trace = LossTrace()
    prev = None
    for epoch in range(1, cfg.epochs + 1):
        idx, u = runner.draw(cfg.steps_per_epoch)
        losses, vhat = runner.run(policy, idx, u, cost_terms)
        check_finite(twin, f"in epoch {epoch}")
        loss = math.fsum(losses) / losses.size
        trace.append(epoch, loss, math.fsum(vhat) / vhat.size)
        if prev is not None and abs(loss - prev) < cfg.loss_tol:
            break
        prev = loss
    v = readout(twin, policy, problem.initial_state, cfg.mc_action_samples, rng)
    return OpeResult(v, twin, trace, coverage(data, policy))
