"""Exact stationary analysis of small integer-valued node chains."""

from __future__ import annotations

import math
from collections import deque
from functools import reduce

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from ..errors import ConfigurationError, DecompositionError, ResourceError
from ..policies import JOINT, NodeState
from ..processes import DISCRETE, GAUSSIAN, POISSON, ProcessSource
from .core import Metrics, SimConfig, kernel_params, step

MAX_M = 200
MAX_K = 100
MAX_STATES = (MAX_M + 1) * (MAX_K + 1)
RESIDUAL_TOL = 1e-12
_KEY_DIGITS = 9


def support(source: ProcessSource) -> list[tuple[float, float]]:
    """Finite support of an i.i.d. source as (value, probability) pairs."""
    f = source.scale
    if source.kind == DISCRETE:
        return [(f * v, p) for v, p in zip(source.params["values"], source.params["probs"]) if p > 0]
    if source.kind == GAUSSIAN and source.params["var"] == 0.0:
        return [(f * max(source.params["mean"], 0.0), 1.0)]
    raise ConfigurationError(
        f"exact analysis needs an i.i.d. source with finitely many values "
        f"(iid-discrete or a zero-variance gaussian), got {source.kind}"
    )


def _key(b: float, q: float) -> tuple[float, float]:
    return (round(b, _KEY_DIGITS), round(q, _KEY_DIGITS))


def _period(adj: sparse.csr_matrix, nodes: np.ndarray) -> int:
    """Period of the strongly connected class ``nodes`` from BFS levels."""
    inside = np.zeros(adj.shape[0], dtype=bool)
    inside[nodes] = True
    level = {int(nodes[0]): 0}
    dq = deque([int(nodes[0])])
    g = 0
    while dq:
        u = dq.popleft()
        for v in adj.indices[adj.indptr[u] : adj.indptr[u + 1]]:
            v = int(v)
            if not inside[v]:
                continue
            if v not in level:
                level[v] = level[u] + 1
                dq.append(v)
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) if g else 1


def exact_chain_analysis(cfg: SimConfig, max_iter: int = 10_000_000) -> Metrics:
    """Exact long-run metrics of the chain reachable from the initial state.

    The state space is explored by applying :func:`step` to every
    replenishment/arrival pair, so the dynamics are exactly those of the
    simulator. The chain restricted to its single closed class must be
    aperiodic; its stationary distribution is obtained by power iteration
    until ``||pi P - pi||_1 < 1e-12``, started from a sparse direct solve.
    """
    if cfg.M > MAX_M or (cfg.K is not None and cfg.K > MAX_K):
        raise ResourceError(
            f"exact analysis is capped at M <= {MAX_M} and K <= {MAX_K} "
            f"(at most {MAX_STATES} states); got M={cfg.M}, K={cfg.K}"
        )
    joint = cfg.mode == JOINT
    r_sup = support(cfg.replenishment)
    a_sup = support(cfg.arrivals) if joint else [(0.0, 1.0)]
    kp = kernel_params(cfg)

    start = _key(cfg.battery0, cfg.queue0)
    index = {start: 0}
    states = [start]
    rows, cols, probs = [], [], []
    n_out = 7
    rewards = []  # per state: discharge, loss, utility, energy, overflow, service, brownout
    dq = deque([0])
    while dq:
        i = dq.popleft()
        b, q = states[i]
        rew = np.zeros(n_out)
        for r, pr in r_sup:
            for a, pa in a_sup:
                p = pr * pa
                nxt, rec = step(NodeState(b, q), cfg, r, a, params=kp)
                k = _key(nxt.battery, nxt.queue)
                j = index.get(k)
                if j is None:
                    j = len(states)
                    if j >= MAX_STATES:
                        raise ResourceError(
                            f"reachable state space exceeds {MAX_STATES} states; "
                            "use integer-valued draws and inputs"
                        )
                    index[k] = j
                    states.append(k)
                    dq.append(j)
                rows.append(i)
                cols.append(j)
                probs.append(p)
                rew += p * np.array([
                    rec.discharged, rec.data_lost > 0.0, rec.utility, rec.e_consumed,
                    rec.battery_overflowed, rec.service, rec.brownout,
                ], dtype=float)
        rewards.append(rew)
    n = len(states)
    P = sparse.csr_matrix((probs, (rows, cols)), shape=(n, n))
    P.sum_duplicates()
    R = np.array(rewards)

    ncomp, labels = csgraph.connected_components(P, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = np.flatnonzero(labels == c)
        sub = P[members]
        if np.all(labels[sub.indices] == c):
            closed.append(members)
    if len(closed) != 1:
        raise DecompositionError(
            f"chain is reducible: {len(closed)} closed classes reachable from the initial state"
        )
    cls = closed[0]
    per = _period(P, cls)
    if per != 1:
        raise DecompositionError(f"chain restricted to its closed class has period {per}")

    Pc = P[cls][:, cls].tocsr()
    m = cls.size
    pi = _initial_guess(Pc)
    PT = Pc.T.tocsr()
    for _ in range(max_iter):
        nxt = PT @ pi
        nxt /= nxt.sum()
        res = float(np.abs(nxt - pi).sum())
        pi = nxt
        if res < RESIDUAL_TOL:
            break
    else:
        raise DecompositionError(f"power iteration did not converge (residual {res:.2e})")
    pi_full = np.zeros(n)
    pi_full[cls] = pi
    vals = pi_full @ R
    return Metrics(
        p_discharge=float(vals[0]),
        p_discharge_hw=0.0,
        p_loss=float(vals[1]) if joint else None,
        p_loss_hw=0.0 if joint else None,
        avg_utility=float(vals[2]),
        avg_utility_hw=0.0,
        mean_energy=float(vals[3]),
        mean_energy_hw=0.0,
        n_batches=0,
        avg_utility_cv=float(vals[2]),
        avg_utility_cv_hw=0.0,
        p_overflow=float(vals[4]),
        p_overflow_hw=0.0,
        p_brownout=float(vals[6]),
        mean_service=float(vals[5]),
        slots=0,
    )


def _initial_guess(Pc: sparse.csr_matrix) -> np.ndarray:
    m = Pc.shape[0]
    if m == 1:
        return np.ones(1)
    A = (Pc.T - sparse.identity(m, format="csr")).tolil()
    A[0, :] = np.ones(m)
    rhs = np.zeros(m)
    rhs[0] = 1.0
    try:
        x = splinalg.spsolve(A.tocsc(), rhs)
    except Exception:
        return np.full(m, 1.0 / m)
    if not np.all(np.isfinite(x)):
        return np.full(m, 1.0 / m)
    x = np.clip(x, 0.0, None)
    s = x.sum()
    return x / s if s > 0 else np.full(m, 1.0 / m)
