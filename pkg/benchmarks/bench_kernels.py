"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--steps 200]

Each kernel runs on identical inputs under both backends; the script also
checks that the outputs agree bit for bit.
"""

import argparse
import time

import numpy as np

from netswitch import _backend, _pykernels
from netswitch.cost import CostSpec
from netswitch.mdp import FiniteMdp, TabularPolicy, cdf_table
from netswitch.net_value import SwitchProblem
from netswitch.offline import OpeConfig, evaluate_offline, generate_dataset


def critic_case(steps):
    rng = np.random.default_rng(0)
    S, A, m, B, n = 5, 3, 2, 256, 100_000
    q = rng.normal(0, 1, (m, S, A))
    pi = rng.dirichlet(np.ones(A), size=S)
    return dict(q=q, qt=q.copy(), cdf=np.ascontiguousarray(cdf_table(pi)),
                s=rng.integers(0, S, n), a=rng.integers(0, A, n), r=rng.random(n),
                s_next=rng.integers(0, S, n), idx=rng.integers(0, n, (steps, m, B)),
                u=rng.random((steps, m, B)), cost_terms=np.zeros(steps), gamma=0.9, lr=0.5,
                grad_clip=1.0, rho=0.995, pi_s0=np.ascontiguousarray(pi[0]), s0=0,
                losses=np.empty(steps), vhat=np.empty(steps))


def flow_case(size):
    rng = np.random.default_rng(1)
    supply = rng.integers(0, 2 ** 40, size)
    demand = rng.multinomial(int(supply.sum()) // 2 ** 20, np.ones(size) / size) * 2 ** 20
    demand[0] += int(supply.sum()) - int(demand.sum())
    return supply.astype(np.int64), demand.astype(np.int64), rng.uniform(0, 1, (size, size))


def best_of(repeat, fn):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_critic(kernels, case, repeat):
    def go():
        args = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in case.items()}
        kernels.critic_steps(**args)
        return args["q"].tobytes() + args["losses"].tobytes()
    return best_of(repeat, go)


def bench_flow(kernels, case, repeat):
    return best_of(repeat, lambda: kernels.min_cost_flow(*case).tobytes())


def bench_ope(choice, repeat):
    rng = np.random.default_rng(2)
    mdp = FiniteMdp(rng.dirichlet(np.ones(5), size=(5, 3)), rng.random((5, 3)), 100, 0.9)
    pi = TabularPolicy.uniform(5, 3)
    data = generate_dataset(mdp, pi, 200, seed=3)
    cfg = OpeConfig(epochs=10, steps_per_epoch=100)
    _backend.use(choice)
    try:
        return best_of(repeat, lambda: repr(evaluate_offline(
            SwitchProblem(mdp, pi, CostSpec.zero()), pi, data, cfg).v_net_hat))
    finally:
        _backend.use("auto")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--steps", type=int, default=200, help="critic steps per timing")
    args = ap.parse_args()
    if not _backend.compiled_available():
        raise SystemExit("compiled extension not built; run: python3 setup.py build_ext --inplace")
    from netswitch import _kernels

    rows = []
    case = critic_case(args.steps)
    rows.append((f"critic_steps x{args.steps}",) + tuple(
        zip(bench_critic(_pykernels, case, args.repeat), bench_critic(_kernels, case, args.repeat))))
    for size in (8, 32):
        fc = flow_case(size)
        rows.append((f"min_cost_flow {size}x{size}",) + tuple(
            zip(bench_flow(_pykernels, fc, args.repeat), bench_flow(_kernels, fc, args.repeat))))
    rows.append(("evaluate_offline 1000 steps",) + tuple(
        zip(bench_ope("python", args.repeat), bench_ope("cython", args.repeat))))

    print(f"{'kernel':30s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s}  identical")
    for name, (t_py, t_cy), (o_py, o_cy) in rows:
        print(f"{name:30s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:8.1f}  {o_py == o_cy}")


if __name__ == "__main__":
    main()
