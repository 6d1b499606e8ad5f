"""Compiled slot loop.

The arithmetic here mirrors :func:`ehnode.simulator.core.step` operation for
operation so that the two agree bit for bit.
"""

import math

import numba
import numpy as np

# policy codes
P_B, P_Q, P_E, P_TO, P_CONST = 0, 1, 2, 3, 4
# utility codes
U_LOG2, U_LOGRATE, U_TABLE = 0, 1, 2

# accumulator slots
A_DISCHARGE = 0
A_LOSS = 1
A_OVERFLOW = 2
A_ENERGY = 3
A_SERVICE = 4
A_UTILITY = 5
A_LOST = 6
A_REPLENISH = 7
A_ARRIVE = 8
A_BROWNOUT = 9
A_SPILL = 10
N_ACC = 11

# trace record columns
R_B, R_Q, R_E, R_SERVICE, R_R, R_A, R_DISCHARGED, R_LOST = range(8)
N_REC = 8


@numba.njit(cache=True, nogil=True, inline="always")
def utility_value(e, ucode, ugamma, ux, uy):
    if ucode == U_TABLE:
        return np.interp(e, ux, uy)
    c = math.log2(1.0 + ugamma * e)
    if ucode == U_LOG2:
        return c
    return math.log1p(c)


@numba.njit(cache=True, nogil=True)
def advance(
    B, Q, r, a, joint, M, K,
    pcode, lo, hi, bthr, qthr, cap, rgamma, rbase,
    ucode, ugamma, ux, uy,
    acc, rec, record,
):
    """Run ``len(r)`` slots from state ``(B, Q)`` and add event counts and sums
    into ``acc``. Returns the final state.

    ``rbase`` is 2.0, passed at run time: with a literal base the compiler
    rewrites the power as exp2, which differs from CPython's pow in the last
    bit.
    """
    n_dis = 0.0
    n_loss = 0.0
    n_over = 0.0
    n_brown = 0.0
    lost = 0.0
    spill = 0.0
    # compensated sums
    s_e = 0.0
    c_e = 0.0
    s_s = 0.0
    c_s = 0.0
    s_u = 0.0
    c_u = 0.0
    s_r = 0.0
    c_r = 0.0
    s_a = 0.0
    c_a = 0.0
    # the draw usually repeats, so its rate and utility are cached
    last_e = -1.0
    last_c = 0.0
    last_u = 0.0
    for i in range(r.shape[0]):
        ri = r[i]
        ai = a[i] if joint else 0.0
        avail = B + ri
        if pcode == P_B:
            req = hi if B >= bthr else lo
        elif pcode == P_Q:
            req = hi if Q >= qthr else lo
        elif pcode == P_TO:
            req = avail if avail < cap else cap
        else:
            req = lo
        if req < 0.0:
            req = 0.0
        if req != last_e:
            last_e = req
            last_c = math.log2(1.0 + rgamma * req)
            last_u = utility_value(req, ucode, ugamma, ux, uy)
        c_req = last_c
        u_req = last_u
        if joint and Q + ai < c_req:
            # the queue cannot absorb the full rate: serve it all
            req = (rbase ** (Q + ai) - 1.0) / rgamma
            c_req = math.log2(1.0 + rgamma * req)
            u_req = utility_value(req, ucode, ugamma, ux, uy)
        if req > avail:
            # brown-out: the stored energy is drained and nothing is delivered
            e = avail
            served = 0.0
            u = 0.0
            n_brown += 1.0
        else:
            e = req
            served = c_req if joint else 0.0
            u = u_req
        pre = avail - e
        dis = pre <= 0.0
        if dis:
            n_dis += 1.0
            Bn = 0.0
        elif pre > M:
            n_over += 1.0
            spill += pre - M
            Bn = M
        else:
            Bn = pre
        ls = 0.0
        Qn = Q
        if joint:
            qpre = Q + ai - served
            if qpre > K:
                ls = qpre - K
                lost += ls
                n_loss += 1.0
                Qn = K
            elif qpre < 0.0:
                Qn = 0.0
            else:
                Qn = qpre
        if record:
            rec[i, R_B] = B
            rec[i, R_Q] = Q
            rec[i, R_E] = e
            rec[i, R_SERVICE] = served
            rec[i, R_R] = ri
            rec[i, R_A] = ai
            rec[i, R_DISCHARGED] = 1.0 if dis else 0.0
            rec[i, R_LOST] = ls
        B = Bn
        Q = Qn
        y = e - c_e
        t = s_e + y
        c_e = (t - s_e) - y
        s_e = t
        y = served - c_s
        t = s_s + y
        c_s = (t - s_s) - y
        s_s = t
        y = u - c_u
        t = s_u + y
        c_u = (t - s_u) - y
        s_u = t
        y = ri - c_r
        t = s_r + y
        c_r = (t - s_r) - y
        s_r = t
        y = ai - c_a
        t = s_a + y
        c_a = (t - s_a) - y
        s_a = t
    acc[A_DISCHARGE] += n_dis
    acc[A_LOSS] += n_loss
    acc[A_OVERFLOW] += n_over
    acc[A_ENERGY] += s_e
    acc[A_SERVICE] += s_s
    acc[A_UTILITY] += s_u
    acc[A_LOST] += lost
    acc[A_REPLENISH] += s_r
    acc[A_ARRIVE] += s_a
    acc[A_BROWNOUT] += n_brown
    acc[A_SPILL] += spill
    return B, Q
