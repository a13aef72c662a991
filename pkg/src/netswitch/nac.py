"""Net actor-critic: a softmax actor on the start state, trained against the
pessimistic twin critic from :mod:`netswitch.offline`, with a two-epoch
stopping rule and a strict-improvement switch decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, UnsupportedDiscountError
from .mdp import TabularPolicy, evaluate_exact, format_policy, parse_policy, rollout_returns
from .offline import (CriticRunner, OpeConfig, TransitionDataset, TwinNetQ, check_finite,
                      evaluate_offline)
from .net_value import SwitchProblem

WARM_START_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class ActorParams:
    logits: np.ndarray

    def __post_init__(self):
        th = np.array(self.logits, dtype=float)
        if th.ndim != 2 or not np.all(np.isfinite(th)):
            raise ValueError("logits must be a finite (S, A) table")
        th.setflags(write=False)
        object.__setattr__(self, "logits", th)

    @classmethod
    def warm_start(cls, policy: TabularPolicy) -> "ActorParams":
        return cls(np.log(np.clip(policy.probs, WARM_START_FLOOR, 1.0)))

    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def policy(self) -> TabularPolicy:
        return TabularPolicy(self.probs())


@dataclass(frozen=True)
class StoppingConfig:
    epochs_stop: int = 5
    alpha: float = 0.5
    b_u: float = 1.0
    b_d: float = 1.0
    window: int = 2

    def __post_init__(self):
        if self.epochs_stop < 0:
            raise ValueError("epochs_stop must be nonnegative")
        if self.alpha <= 0 or self.b_u <= 0 or self.b_d <= 0:
            raise ValueError("alpha, b_u and b_d must be positive")
        if self.window != 2:
            raise ValueError("the stopping window is fixed at 2 epochs")


@dataclass(frozen=True)
class NacConfig:
    ope: OpeConfig = field(default_factory=OpeConfig)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    actor_lr: float = 0.5
    actor_grad_clip: float = 1.0
    max_epochs: int = 50
    reevaluate: bool = True

    def __post_init__(self):
        if self.actor_lr <= 0:
            raise ValueError("actor_lr must be positive")
        if self.actor_grad_clip < 0 or self.max_epochs < 0:
            raise ValueError("actor_grad_clip and max_epochs must be nonnegative")


def actor_objective(twin: TwinNetQ, actor: ActorParams, s0: int) -> float:
    pi = actor.probs()[s0]
    return math.fsum(pi * twin.min_q()[s0])


def actor_gradient(twin: TwinNetQ, actor: ActorParams, s0: int) -> np.ndarray:
    """Analytic gradient of :func:`actor_objective`; nonzero only on row ``s0``."""
    pi = actor.probs()[s0]
    # the gradient ignores constant shifts of q; shifting makes a flat row give exactly 0
    q = twin.min_q()[s0]
    q = q - q[0]
    grad = np.zeros_like(actor.logits)
    grad[s0] = pi * (q - math.fsum(pi * q))
    return grad


def actor_step(actor: ActorParams, twin: TwinNetQ, s0: int, lr: float,
               grad_clip: float) -> ActorParams:
    if lr <= 0:
        raise ValueError("lr must be positive")
    g = actor_gradient(twin, actor, s0)
    if grad_clip > 0:
        norm = math.sqrt(math.fsum((g * g).ravel()))
        if norm > grad_clip:
            g = g * (grad_clip / norm)
    return ActorParams(actor.logits + lr * g)


def stopping_check(v0: float, v1: float, v2: float, cfg: StoppingConfig, epoch: int) -> bool:
    if epoch < cfg.epochs_stop:
        return False
    grown = 1.0 + cfg.alpha
    if v0 > 0 and v1 > grown * v0 and v2 > grown * v0:
        return True
    if v0 <= 0 and v1 > 0 and v2 > 0:
        return True
    if v1 >= v0 + cfg.b_u and v2 >= v0 + cfg.b_u:
        return True
    return v1 <= v0 - cfg.b_d and v2 <= v0 - cfg.b_d


@dataclass
class NacReport:
    chosen: str
    v_old: float
    v_new_net: float
    switch_flag: bool
    epochs_run: int
    value_trace: list[float]
    new_policy: TabularPolicy
    coverage: float = 1.0

    def __post_init__(self):
        if self.chosen not in ("old", "new") or self.switch_flag != (self.chosen == "new"):
            raise ValueError("inconsistent decision: switch must hold iff chosen=new")

    def consistent(self) -> bool:
        return self.switch_flag == (self.v_new_net > self.v_old)

    def format(self) -> str:
        lines = [f"chosen={self.chosen}", f"switch={str(self.switch_flag).lower()}",
                 f"v_old={self.v_old:.12g}", f"v_new_net={self.v_new_net:.12g}",
                 f"epochs_run={self.epochs_run}", f"coverage={self.coverage:.12g}",
                 "[trace]"]
        lines += [f"{k} {v:.12g}" for k, v in enumerate(self.value_trace, start=1)]
        lines.append("[policy]")
        return "\n".join(lines) + "\n" + format_policy(self.new_policy)

    @classmethod
    def parse(cls, text: str) -> "NacReport":
        head, sep, rest = text.partition("[trace]\n")
        trace_txt, sep2, pol_txt = rest.partition("[policy]\n")
        if not sep or not sep2:
            raise FormatError("report needs [trace] and [policy] blocks")
        kv = dict(line.split("=", 1) for line in head.splitlines() if "=" in line)
        try:
            trace = [float(line.split()[1]) for line in trace_txt.splitlines() if line.strip()]
            return cls(kv["chosen"], float(kv["v_old"]), float(kv["v_new_net"]),
                       kv["switch"] == "true", int(kv["epochs_run"]), trace,
                       parse_policy(pol_txt), float(kv.get("coverage", "1")))
        except (KeyError, ValueError, IndexError) as exc:
            raise FormatError(f"malformed report: {exc}") from exc


def decide(v_old: float, v_new_net: float) -> str:
    """Keep the incumbent unless the candidate is strictly better."""
    return "new" if v_new_net > v_old else "old"


def run_nac(problem: SwitchProblem, data: TransitionDataset, cfg: NacConfig) -> NacReport:
    mdp = problem.mdp
    if mdp.discount >= 1.0:
        raise UnsupportedDiscountError("NAC needs gamma < 1")
    s0 = problem.initial_state
    pi_o = problem.old_policy
    # keeping the incumbent is not a switch, so it is valued without cost
    old = evaluate_offline(problem, pi_o, data, cfg.ope, switch_cost=0.0)
    v_old = old.v_net_hat

    twin = old.twin.copy()
    actor = ActorParams.warm_start(pi_o)
    rng = np.random.default_rng([cfg.ope.seed, 1])
    runner = CriticRunner(data, twin, mdp.discount, cfg.ope, rng, s0)
    mc = cfg.ope.cost_mc_states or None
    steps = cfg.ope.steps_per_epoch
    values: list[float] = []
    epochs_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        idx, u = runner.draw(steps)
        vhat = np.empty(steps)
        for k in range(steps):
            pol = actor.policy()
            c = problem.switch_cost(pol, mc, cfg.ope.seed)
            _, v = runner.run(pol, idx[k:k + 1], u[k:k + 1], [(1.0 - mdp.discount) * c])
            vhat[k] = v[0]
            actor = actor_step(actor, twin, s0, cfg.actor_lr, cfg.actor_grad_clip)
        check_finite(twin, f"in NAC epoch {epoch}")
        values.append(math.fsum(vhat) / steps)
        epochs_run = epoch
        if len(values) >= 2 and stopping_check(v_old, values[-2], values[-1], cfg.stopping, epoch):
            break

    new_policy = actor.policy()
    if cfg.reevaluate or not values:
        v_new = evaluate_offline(problem, new_policy, data, cfg.ope).v_net_hat
    else:
        v_new = values[-1]
    chosen = decide(v_old, v_new)
    return NacReport(chosen, v_old, v_new, chosen == "new", epochs_run, values, new_policy,
                     old.coverage.fraction)


def responsibility_check(problem: SwitchProblem, report: NacReport, n_eval_episodes: int = 0,
                         seed: int | None = None) -> bool:
    """Does a ground-truth evaluator reach the same switch decision?

    Exact finite-horizon DP by default; Monte-Carlo rollouts (common random
    numbers for both policies) when ``n_eval_episodes > 0``.
    """
    mdp = problem.mdp
    s0 = problem.initial_state
    pi_o, pi_n = problem.old_policy, report.new_policy
    if n_eval_episodes > 0:
        base = mdp.with_initial_state(s0)
        seed = 0 if seed is None else seed
        v_old = float(np.mean(rollout_returns(base, pi_o, n_eval_episodes, seed)))
        v_new = float(np.mean(rollout_returns(base, pi_n, n_eval_episodes, seed)))
    else:
        v_old = float(evaluate_exact(mdp, pi_o)[0][s0])
        v_new = float(evaluate_exact(mdp, pi_n)[0][s0])
    truth = v_new - problem.switch_cost(pi_n) > v_old
    return truth == report.switch_flag


def with_seed(cfg: NacConfig, seed: int) -> NacConfig:
    return replace(cfg, ope=replace(cfg.ope, seed=seed))
