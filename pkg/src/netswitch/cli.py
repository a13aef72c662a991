"""``netswitch`` command line.

Every subcommand reads an optional config file (``--config``); flags given on
the command line win over config values. Results go to stdout and, with
``--out DIR``, to files written atomically inside ``DIR``.

Exit codes: 0 success, 1 failed check or non-convergence, 2 bad usage or input.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
from pathlib import Path

from .config import RunConfig, resolve_path
from .cost import cost
from .errors import ConvergenceError, FormatError, InfeasibleTransportError, ShapeError
from .mdp import FiniteMdp, evaluate_exact, policy_from_spec, read_mdp
from .nac import responsibility_check, run_nac
from .net_value import CandidateSet, SwitchProblem, net_value_exact, switch_optimal_search
from .offline import TransitionDataset, evaluate_offline, generate_dataset
from . import verify


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


class Output:
    def __init__(self, out_dir: str | None, quiet: bool):
        self.out_dir = Path(out_dir) if out_dir else None
        self.quiet = quiet

    def emit(self, text: str, filename: str | None = None) -> None:
        if not self.quiet:
            sys.stdout.write(text)
        if filename and self.out_dir is not None:
            write_atomic(self.out_dir / filename, text)

    def file(self, filename: str, text: str) -> None:
        if self.out_dir is not None:
            write_atomic(self.out_dir / filename, text)


def g12(x: float) -> str:
    return f"{float(x):.12g}"


# ---------------------------------------------------------------------------
# resolving inputs


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.set("run", "seed", getattr(args, "seed", None))
    return cfg


def _mdp(args, cfg: RunConfig) -> FiniteMdp:
    path = getattr(args, "mdp", None) or cfg.path("mdp", "path")
    if path is None:
        raise FormatError("no MDP given (use --mdp or [mdp] path)")
    mdp = read_mdp(path)
    s0 = getattr(args, "s0", None)
    if s0 is None and cfg.get("mdp", "s0") is not None:
        s0 = int(cfg.get("mdp", "s0"))
    return mdp if s0 is None else mdp.with_initial_state(s0)


def _policy(args, cfg: RunConfig, mdp: FiniteMdp, key: str, flag: str, default: str | None = None):
    spec = getattr(args, flag, None)
    base = Path.cwd()
    if spec is None:
        spec = cfg.get("policy", key)
        base = cfg.base_dir
    if spec is None:
        spec = default
    if spec is None:
        raise FormatError(f"no {key} policy given (use --{flag.replace('_', '-')} or [policy] {key})")
    if spec != "uniform" and not spec.startswith("det:"):
        spec = str(resolve_path(spec, base))
    return policy_from_spec(spec, mdp.n_states, mdp.n_actions)


def _problem(args, cfg: RunConfig, mdp: FiniteMdp) -> SwitchProblem:
    old = _policy(args, cfg, mdp, "old", "old", default="uniform")
    return SwitchProblem(mdp, old, cfg.cost_spec(mdp.n_states))


def _dataset(args, cfg: RunConfig, mdp: FiniteMdp, seed: int) -> TransitionDataset:
    path = getattr(args, "data", None) or cfg.path("data", "path")
    if path is not None:
        data = TransitionDataset.load(path)
        if (data.n_states, data.n_actions) != (mdp.n_states, mdp.n_actions):
            raise FormatError("dataset does not match the MDP")
        return data
    episodes = getattr(args, "episodes", None) or int(cfg.get("data", "episodes", 0))
    if episodes < 1:
        raise FormatError("no dataset given (use --data, or --episodes to generate one)")
    behavior = _policy(args, cfg, mdp, "behavior", "behavior", default="uniform")
    bid = cfg.get("policy", "behavior", "uniform") if getattr(args, "behavior", None) is None else args.behavior
    return generate_dataset(mdp, behavior, episodes, seed, behavior_id=_token(bid))


def _token(text: str) -> str:
    return Path(text).name.replace(" ", "_") or "behavior"


# ---------------------------------------------------------------------------
# commands


def cmd_evaluate(args, out: Output) -> int:
    cfg = _load_config(args)
    mdp = _mdp(args, cfg)
    pol = _policy(args, cfg, mdp, "new", "policy", default="uniform")
    old = _policy(args, cfg, mdp, "old", "old", default=None) if (
        args.old or cfg.get("policy", "old")) else pol
    problem = SwitchProblem(mdp, old, cfg.cost_spec(mdp.n_states))
    V, Q = evaluate_exact(mdp, pol)
    c = problem.switch_cost(pol)
    _, v_net, q_net = net_value_exact(problem, pol)
    lines = [f"cost={g12(c)}"]
    lines += [f"V({s})={g12(V[s])}" for s in range(mdp.n_states)]
    lines += [f"Q({s},{a})={g12(Q[s, a])}" for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    lines += [f"V_N({s})={g12(v_net[s])}" for s in range(mdp.n_states)]
    lines += [f"Q_N({s},{a})={g12(q_net[s, a])}"
              for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    out.emit("\n".join(lines) + "\n", "evaluate.txt")
    return 0


def cmd_cost(args, out: Output) -> int:
    cfg = _load_config(args)
    mdp = _mdp(args, cfg)
    old = _policy(args, cfg, mdp, "old", "old", default="uniform")
    new = _policy(args, cfg, mdp, "new", "new")
    c = cost(cfg.cost_spec(mdp.n_states), old, new, args.mc_states, cfg.seed())
    out.emit(f"cost={g12(c)}\n", "cost.txt")
    return 0


def cmd_gen_data(args, out: Output) -> int:
    cfg = _load_config(args)
    mdp = _mdp(args, cfg)
    if args.episodes is None and cfg.get("data", "episodes") is None:
        raise FormatError("gen-data needs --episodes or [data] episodes")
    args.data = None
    data = _dataset(args, cfg, mdp, cfg.seed())
    out.file("dataset.txt", data.format())
    out.emit(f"records={len(data)}\nepisodes={int(data.episode.max()) + 1}\n"
             f"coverage={g12(data.counts().astype(bool).mean())}\n")
    return 0


def cmd_ope(args, out: Output) -> int:
    cfg = _load_config(args)
    mdp = _mdp(args, cfg)
    seed = cfg.seed()
    problem = _problem(args, cfg, mdp)
    pol = _policy(args, cfg, mdp, "new", "policy", default=None) if (
        args.policy or cfg.get("policy", "new")) else problem.old_policy
    data = _dataset(args, cfg, mdp, seed)
    res = evaluate_offline(problem, pol, data, cfg.ope(seed))
    text = (f"v_net_hat={g12(res.v_net_hat)}\nsemantics=infinite_horizon_net\n"
            f"cost={g12(problem.switch_cost(pol))}\nepochs={len(res.loss_trace)}\n"
            + res.coverage.format())
    out.emit(text, "ope.txt")
    out.file("loss_trace.txt", res.loss_trace.format())
    return 0


def cmd_search(args, out: Output) -> int:
    cfg = _load_config(args)
    mdp = _mdp(args, cfg)
    problem = _problem(args, cfg, mdp)
    cands = CandidateSet.parse(args.candidates or cfg.get("search", "candidates", "det"))
    res = switch_optimal_search(problem, cands)
    out.emit(f"best={res.best_id}\nnet={g12(res.v_net)}\n", "search.txt")
    out.file("ranking.csv", res.format_ranking())
    if args.ranking and not out.quiet:
        sys.stdout.write(res.format_ranking())
    return 0


def _seed_list(args, cfg: RunConfig) -> list[int]:
    text = args.seeds or cfg.get("run", "seeds")
    if not text:
        return [cfg.seed()]
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise FormatError(f"bad seed list {text!r}") from exc


def cmd_nac(args, out: Output) -> int:
    cfg = _load_config(args)
    mdp = _mdp(args, cfg)
    problem = _problem(args, cfg, mdp)
    seeds = _seed_list(args, cfg)
    data_seed = int(cfg.get("data", "seed", cfg.seed()))
    data = _dataset(args, cfg, mdp, data_seed)
    rows = ["seed, switch, v_old, v_new_net, epochs_run, agrees"]
    for seed in seeds:
        report = run_nac(problem, data, cfg.nac(seed))
        agrees = responsibility_check(problem, report)
        name = "nac_report.txt" if len(seeds) == 1 else f"nac_report_seed{seed}.txt"
        text = report.format().replace("[trace]\n", f"responsible={str(agrees).lower()}\n[trace]\n", 1)
        if len(seeds) == 1:
            out.emit(text, name)
        else:
            out.file(name, text)
        rows.append(f"{seed}, {str(report.switch_flag).lower()}, {g12(report.v_old)}, "
                    f"{g12(report.v_new_net)}, {report.epochs_run}, {str(agrees).lower()}")
    if len(seeds) > 1:
        summary = "\n".join(rows) + "\n"
        n_switch = sum(r.split(", ")[1] == "true" for r in rows[1:])
        n_agree = sum(r.split(", ")[5] == "true" for r in rows[1:])
        out.emit(summary + f"switch_rate={g12(n_switch / len(seeds))}\n"
                 f"responsible_rate={g12(n_agree / len(seeds))}\n", "sweep.csv")
    return 0


def cmd_verify(args, out: Output) -> int:
    if args.list:
        out.emit("".join(f"{name}\n" for name in verify.check_names()))
        return 0
    lines: list[str] = []
    failed, first = verify.run_checks(args.fixture_dir, emit=lines.append)
    summary = f"{len(lines) - failed}/{len(lines)} checks passed\n"
    if first:
        summary += f"first failure: {first}\n"
    out.emit("\n".join(lines) + "\n" + summary, "verify.txt")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS,
                        help="run config file (key = value with [section] headers)")
    parser.add_argument("--seed", type=int, metavar="N", default=argparse.SUPPRESS)
    parser.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS,
                        help="directory for output files")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common)
    parser = argparse.ArgumentParser(prog="netswitch", parents=[common],
                                     description="Net-value policy switching on tabular MDPs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
        return p

    def mdp_flags(p):
        p.add_argument("--mdp", metavar="PATH")
        p.add_argument("--s0", type=int)

    p = add("evaluate", cmd_evaluate, "exact V, Q, cost, V_N and Q_N tables")
    mdp_flags(p)
    p.add_argument("--policy", help="uniform, det:a0,a1,... or a policy file")
    p.add_argument("--old", help="incumbent policy (defaults to the evaluated one)")

    p = add("cost", cmd_cost, "switching cost between two policies")
    mdp_flags(p)
    p.add_argument("--old")
    p.add_argument("--new")
    p.add_argument("--mc-states", type=int, help="Monte-Carlo state samples")

    p = add("gen-data", cmd_gen_data, "roll out a behavior policy into a dataset")
    mdp_flags(p)
    p.add_argument("--behavior")
    p.add_argument("--episodes", type=int)

    def data_flags(p):
        p.add_argument("--data", metavar="PATH")
        p.add_argument("--behavior", help="behavior policy when generating data")
        p.add_argument("--episodes", type=int, help="episodes to generate when --data is absent")

    p = add("ope", cmd_ope, "offline net value of a policy")
    mdp_flags(p)
    data_flags(p)
    p.add_argument("--policy")
    p.add_argument("--old")

    p = add("search", cmd_search, "exhaustive switch-optimal search")
    mdp_flags(p)
    p.add_argument("--old")
    p.add_argument("--candidates", help="det or grid:K")
    p.add_argument("--ranking", action="store_true", help="also print the full ranking")

    p = add("nac", cmd_nac, "net actor-critic with the final switch decision")
    mdp_flags(p)
    data_flags(p)
    p.add_argument("--old")
    p.add_argument("--seeds", help="comma-separated seed sweep")

    p = add("verify-paper", cmd_verify, "run the golden checks on bundled fixtures")
    p.add_argument("--list", action="store_true", help="list check names without running")
    p.add_argument("--fixture-dir", type=Path, help="read fixtures from here instead")
    return parser


INPUT_ERRORS = (FormatError, FileNotFoundError, IsADirectoryError, ShapeError, ValueError,
                InfeasibleTransportError, KeyError)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Output(getattr(args, "out", None), getattr(args, "quiet", False))
    try:
        return args.func(args, out)
    except ConvergenceError as exc:
        print(f"netswitch: {exc}", file=sys.stderr)
        return 1
    except INPUT_ERRORS as exc:
        print(f"netswitch: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
