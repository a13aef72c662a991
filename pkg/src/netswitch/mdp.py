"""Finite MDPs, tabular policies, rollouts and exact dynamic-programming evaluation.

Conventions
-----------
* ``transition[s, a, s']`` is the probability of landing in ``s'``.
* An episode has exactly ``horizon`` reward steps, ``t = 0 .. H-1``.
* Rewards are the mean table plus optional uniform noise on
  ``[-halfwidth, +halfwidth]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, FormatError, ShapeError, UnsupportedDiscountError

STOCHASTIC_ATOL = 1e-12


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    transition: np.ndarray
    reward_mean: np.ndarray
    horizon: int
    discount: float
    initial_state: int = 0
    reward_noise_halfwidth: np.ndarray | float = 0.0

    def __post_init__(self):
        P = _frozen(self.transition)
        R = _frozen(self.reward_mean)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ShapeError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ShapeError(f"reward_mean shape {R.shape} != {P.shape[:2]}")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=2) - 1.0) > STOCHASTIC_ATOL):
            raise ValueError("every transition row must be a probability distribution")
        h = np.broadcast_to(np.asarray(self.reward_noise_halfwidth, dtype=float), R.shape)
        if np.any(h < 0):
            raise ValueError("reward noise halfwidth must be nonnegative")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= float(self.discount) <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0 <= int(self.initial_state) < P.shape[0]:
            raise ValueError("initial_state out of range")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward_mean", R)
        object.__setattr__(self, "reward_noise_halfwidth", _frozen(h))
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_initial_state(self, s0: int) -> "FiniteMdp":
        return FiniteMdp(self.transition, self.reward_mean, self.horizon, self.discount,
                         s0, self.reward_noise_halfwidth)

    def with_rewards(self, reward_mean) -> "FiniteMdp":
        return FiniteMdp(self.transition, reward_mean, self.horizon, self.discount,
                         self.initial_state, self.reward_noise_halfwidth)

    def __eq__(self, other):
        if not isinstance(other, FiniteMdp):
            return NotImplemented
        return (self.horizon == other.horizon and self.discount == other.discount
                and self.initial_state == other.initial_state
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.reward_mean, other.reward_mean)
                and np.array_equal(self.reward_noise_halfwidth, other.reward_noise_halfwidth))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic table ``probs[s, a] = pi(a | s)``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen(self.probs)
        if p.ndim != 2:
            raise ShapeError(f"policy table must be 2-D, got shape {p.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > STOCHASTIC_ATOL):
            raise ValueError("every policy row must be a probability distribution")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> "TabularPolicy":
        table = np.zeros((len(actions), n_actions))
        table[np.arange(len(actions)), np.asarray(actions, dtype=int)] = 1.0
        return cls(table)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.probs.max(axis=1), 1.0, rtol=0, atol=STOCHASTIC_ATOL)))

    def row_equal(self, other: "TabularPolicy", atol: float = STOCHASTIC_ATOL) -> np.ndarray:
        """Boolean per state: do the two action distributions coincide?"""
        _check_same_shape(self, other)
        return np.all(np.abs(self.probs - other.probs) <= atol, axis=1)

    def __eq__(self, other):
        if not isinstance(other, TabularPolicy):
            return NotImplemented
        return np.array_equal(self.probs, other.probs)

    __hash__ = None


def _check_same_shape(p1: TabularPolicy, p2: TabularPolicy) -> None:
    if p1.probs.shape != p2.probs.shape:
        raise ShapeError(f"policy shapes differ: {p1.probs.shape} vs {p2.probs.shape}")


def check_policy(mdp: FiniteMdp, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ShapeError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})")


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[tuple[int, int, float, int], ...]
    episode_return: float


# ---------------------------------------------------------------------------
# exact evaluation


def evaluate_exact(mdp: FiniteMdp, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """Finite-horizon value and Q tables by backward induction over H reward steps.

    Returns ``(V, Q)`` for the start of the episode (``t = 0``).
    """
    V, Q = backward_induction(mdp, policy)
    return V[0], Q[0]


def backward_induction(mdp: FiniteMdp, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """All stage tables: ``V[t, s]`` and ``Q[t, s, a]`` for ``t = 0 .. H``.

    Stage ``H`` is terminal and identically zero.
    """
    check_policy(mdp, policy)
    H, g = mdp.horizon, mdp.discount
    Q = np.zeros((H + 1, mdp.n_states, mdp.n_actions))
    V = np.zeros((H + 1, mdp.n_states))
    pi = policy.probs
    for t in range(H - 1, -1, -1):
        Q[t] = mdp.reward_mean + g * (mdp.transition @ V[t + 1])
        V[t] = np.sum(pi * Q[t], axis=1)
    return V, Q


def policy_matrix(mdp: FiniteMdp, policy: TabularPolicy) -> np.ndarray:
    """``M[(s,a), (s',a')] = P(s'|s,a) pi(a'|s')`` flattened to (SA, SA)."""
    check_policy(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    M = mdp.transition[:, :, :, None] * policy.probs[None, None, :, :]
    return M.reshape(S * A, S * A)


def evaluate_infinite(mdp: FiniteMdp, policy: TabularPolicy, tol: float = 1e-12,
                      method: str = "solve", max_iters: int = 1_000_000) -> np.ndarray:
    """Infinite-horizon discounted Q table, the solution of ``Q = R + gamma P Pi Q``.

    ``method="solve"`` uses a dense linear solve; ``method="vi"`` iterates the
    Bellman backup from zero until the sup-norm residual is at most ``tol``.
    """
    if mdp.discount >= 1.0:
        raise UnsupportedDiscountError("infinite-horizon evaluation needs gamma < 1")
    S, A = mdp.n_states, mdp.n_actions
    M = mdp.discount * policy_matrix(mdp, policy)
    r = mdp.reward_mean.reshape(-1)
    if method == "solve":
        q = np.linalg.solve(np.eye(S * A) - M, r)
    elif method == "vi":
        q = np.zeros(S * A)
        for _ in range(max_iters):
            q_new = r + M @ q
            if np.max(np.abs(q_new - q)) <= tol:
                q = q_new
                break
            q = q_new
        else:
            raise ConvergenceError(f"value iteration did not reach tol={tol}")
    else:
        raise ValueError(f"unknown method {method!r}")
    return q.reshape(S, A)


def occupancy(mdp: FiniteMdp, policy: TabularPolicy) -> np.ndarray:
    """Expected number of visits to each (s, a) per episode, from ``s0``."""
    check_policy(mdp, policy)
    d = np.zeros(mdp.n_states)
    d[mdp.initial_state] = 1.0
    occ = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(mdp.horizon):
        sa = d[:, None] * policy.probs
        occ += sa
        d = np.einsum("sa,sat->t", sa, mdp.transition)
    return occ


# ---------------------------------------------------------------------------
# simulation


def sample_categorical(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw, one per row: first index with ``u < cdf``."""
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def cdf_table(probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    return cdf


def _rollout(mdp: FiniteMdp, policy: TabularPolicy, n_episodes: int, seed: int):
    """Vectorised rollout core shared by :func:`simulate` and :func:`rollout_returns`.

    Yields ``(s, a, r, s_next)`` arrays, one tuple per time step.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    check_policy(mdp, policy)
    rng = np.random.default_rng(seed)
    pi_cdf = cdf_table(policy.probs)
    p_cdf = cdf_table(mdp.transition)
    noisy = bool(np.any(mdp.reward_noise_halfwidth > 0))
    s = np.full(n_episodes, mdp.initial_state, dtype=np.int64)
    for _ in range(mdp.horizon):
        a = sample_categorical(pi_cdf[s], rng.random(n_episodes))
        r = mdp.reward_mean[s, a]
        if noisy:
            h = mdp.reward_noise_halfwidth[s, a]
            r = r + h * (2.0 * rng.random(n_episodes) - 1.0)
        s_next = sample_categorical(p_cdf[s, a], rng.random(n_episodes))
        yield s, a, np.asarray(r, dtype=float), s_next
        s = s_next


def rollout_returns(mdp: FiniteMdp, policy: TabularPolicy, n_episodes: int,
                    seed: int) -> np.ndarray:
    """Discounted episode returns only; same random stream as :func:`simulate`."""
    total = np.zeros(n_episodes)
    disc = 1.0
    for _, _, r, _ in _rollout(mdp, policy, n_episodes, seed):
        total += disc * r
        disc *= mdp.discount
    return total


def simulate(mdp: FiniteMdp, policy: TabularPolicy, n_episodes: int,
             seed: int) -> list[Trajectory]:
    """Run ``n_episodes`` episodes of exactly ``H`` steps from ``s0``."""
    cols = list(_rollout(mdp, policy, n_episodes, seed))
    out = []
    for e in range(n_episodes):
        steps = tuple((int(s[e]), int(a[e]), float(r[e]), int(sn[e])) for s, a, r, sn in cols)
        ret = 0.0
        disc = 1.0
        for st in steps:
            ret += disc * st[2]
            disc *= mdp.discount
        out.append(Trajectory(steps, ret))
    return out


# ---------------------------------------------------------------------------
# text formats


def format_mdp(mdp: FiniteMdp) -> str:
    lines = [f"mdp {mdp.n_states} {mdp.n_actions} {mdp.horizon} {mdp.discount!r} {mdp.initial_state}"]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            probs = " ".join(repr(float(p)) for p in mdp.transition[s, a])
            lines.append(f"{s} {a} {float(mdp.reward_mean[s, a])!r} "
                         f"{float(mdp.reward_noise_halfwidth[s, a])!r} {probs}")
    return "\n".join(lines) + "\n"


def _content_lines(text: str) -> list[list[str]]:
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            rows.append(line.split())
    return rows


def parse_mdp(text: str) -> FiniteMdp:
    rows = _content_lines(text)
    if not rows or rows[0][0] != "mdp" or len(rows[0]) != 6:
        raise FormatError("expected header 'mdp n_states n_actions H gamma s0'")
    try:
        S, A, H = int(rows[0][1]), int(rows[0][2]), int(rows[0][3])
        gamma, s0 = float(rows[0][4]), int(rows[0][5])
        P = np.full((S, A, S), np.nan)
        R = np.full((S, A), np.nan)
        h = np.zeros((S, A))
        for row in rows[1:]:
            if len(row) != 4 + S:
                raise FormatError(f"bad row length {len(row)} (expected {4 + S})")
            s, a = int(row[0]), int(row[1])
            R[s, a], h[s, a] = float(row[2]), float(row[3])
            P[s, a] = [float(x) for x in row[4:]]
    except (ValueError, IndexError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"malformed MDP file: {exc}") from exc
    if np.isnan(R).any() or np.isnan(P).any():
        raise FormatError("MDP file does not define every (s, a) row")
    try:
        return FiniteMdp(P, R, H, gamma, s0, h)
    except (ShapeError, ValueError) as exc:
        raise FormatError(str(exc)) from exc


def format_policy(policy: TabularPolicy) -> str:
    lines = [f"policy {policy.n_states} {policy.n_actions}"]
    lines += [" ".join(repr(float(p)) for p in row) for row in policy.probs]
    return "\n".join(lines) + "\n"


def parse_policy(text: str) -> TabularPolicy:
    rows = _content_lines(text)
    if not rows or rows[0][0] != "policy" or len(rows[0]) != 3:
        raise FormatError("expected header 'policy n_states n_actions'")
    try:
        S, A = int(rows[0][1]), int(rows[0][2])
        table = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise FormatError(f"malformed policy file: {exc}") from exc
    if table.shape != (S, A):
        raise FormatError(f"policy table shape {table.shape} != ({S}, {A})")
    try:
        return TabularPolicy(table)
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def policy_from_spec(spec: str, n_states: int, n_actions: int) -> TabularPolicy:
    """Resolve ``uniform``, ``det:a0,a1,...`` or a path to a policy file."""
    if spec == "uniform":
        return TabularPolicy.uniform(n_states, n_actions)
    if spec.startswith("det:"):
        try:
            actions = [int(x) for x in spec[4:].split(",")]
        except ValueError as exc:
            raise FormatError(f"bad deterministic policy {spec!r}") from exc
        if len(actions) != n_states or not all(0 <= x < n_actions for x in actions):
            raise FormatError(f"deterministic policy {spec!r} does not fit ({n_states}, {n_actions})")
        return TabularPolicy.deterministic(actions, n_actions)
    return parse_policy(Path(spec).read_text())


def read_mdp(path) -> FiniteMdp:
    return parse_mdp(Path(path).read_text())
