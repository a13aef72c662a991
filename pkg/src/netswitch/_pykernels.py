"""Pure-Python/numpy kernels; the reference twin of ``_kernels.pyx``.

Both implementations perform the same floating-point operations in the same
order, so results are bit-identical across backends. Keep them in sync.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND = "python"


def critic_steps(q, qt, cdf, s, a, r, s_next, idx, u, cost_terms, gamma, lr, grad_clip,
                 rho, pi_s0, s0, losses, vhat):
    """Run ``T = idx.shape[0]`` twin-critic TD steps in place.

    q, qt      (m, S, A) critic tables and their soft-updated targets
    cdf        (S, A) cumulative action probabilities of the evaluated policy
    s, a, r, s_next   dataset columns
    idx        (T, m, B) record indices, one independent batch per critic
    u          (T, m, B) uniforms for next-action draws
    cost_terms (T,) value subtracted from every reward, ``(1 - gamma) * C``
    losses, vhat  (T,) outputs: mean squared TD error, and
                  ``sum_a pi(a|s0) min_i q[i, s0, a]`` after the step
    """
    T, m, B = idx.shape
    _, S, A = q.shape
    g = np.empty(S * A)
    scale = 2.0 / B
    for t in range(T):
        loss_sum = 0.0
        for i in range(m):
            k = idx[t, i]
            ss = s[k]
            aa = a[k]
            s2 = s_next[k]
            a2 = np.minimum((u[t, i][:, None] >= cdf[s2]).sum(axis=1), A - 1)
            tmin = qt[:, s2, a2].min(axis=0)
            y = (r[k] - cost_terms[t]) + gamma * tmin
            diff = q[i, ss, aa] - y
            g[:] = 0.0
            np.add.at(g, ss * A + aa, diff)
            g *= scale
            if grad_clip > 0.0:
                norm = math.sqrt(math.fsum(g * g))
                if norm > grad_clip:
                    g *= grad_clip / norm
            qi = q[i].reshape(-1)
            qi[:] = qi - lr * g
            loss_sum += math.fsum(diff * diff) / B
        qt[...] = rho * qt + (1.0 - rho) * q
        losses[t] = loss_sum / m
        vhat[t] = math.fsum(pi_s0 * q[:, s0, :].min(axis=0))


def min_cost_flow(supply, demand, cost):
    """Integer min-cost transportation by successive shortest paths.

    ``supply`` (n,) and ``demand`` (m,) are nonnegative int64 with equal sums;
    ``cost`` is (n, m) float64. Shortest paths use Bellman-Ford rounds over the
    residual bipartite graph (forward arcs always open, reverse arcs where flow
    is positive). Returns the (n, m) int64 flow.
    """
    n = supply.shape[0]
    m = demand.shape[0]
    rem_s = [int(x) for x in supply]
    rem_d = [int(x) for x in demand]
    c = [[float(cost[i, j]) for j in range(m)] for i in range(n)]
    flow = [[0] * m for _ in range(n)]
    inf = math.inf
    cmax = 0.0
    for i in range(n):
        for j in range(m):
            if abs(c[i][j]) > cmax:
                cmax = abs(c[i][j])
    eps = 1e-12 * (1.0 + cmax)
    total = sum(rem_s)
    while total > 0:
        D = [0.0 if rem_s[i] > 0 else inf for i in range(n)]
        E = [inf] * m
        pd = [-1] * n
        pe = [-1] * m
        for _round in range(n + m + 1):
            changed = False
            for j in range(m):
                for i in range(n):
                    if D[i] < inf:
                        v = D[i] + c[i][j]
                        if v < E[j] - eps:
                            E[j] = v
                            pe[j] = i
                            changed = True
            for i in range(n):
                for j in range(m):
                    if flow[i][j] > 0 and E[j] < inf:
                        v = E[j] - c[i][j]
                        if v < D[i] - eps:
                            D[i] = v
                            pd[i] = j
                            changed = True
            if not changed:
                break
        jb = -1
        for j in range(m):
            if rem_d[j] > 0 and E[j] < inf and (jb < 0 or E[j] < E[jb]):
                jb = j
        if jb < 0:
            raise RuntimeError("no augmenting path; supplies and demands unbalanced")
        # trace back sink -> source, collecting the bottleneck
        push = rem_d[jb]
        j = jb
        while True:
            i = pe[j]
            if pd[i] < 0:
                if rem_s[i] < push:
                    push = rem_s[i]
                break
            j = pd[i]
            if flow[i][j] < push:
                push = flow[i][j]
        j = jb
        while True:
            i = pe[j]
            flow[i][j] += push
            if pd[i] < 0:
                rem_s[i] -= push
                break
            j = pd[i]
            flow[i][j] -= push
        rem_d[jb] -= push
        total -= push
    return np.array(flow, dtype=np.int64).reshape(n, m)
