"""Slow, literal evaluations of the return and loss formulas used as test oracles."""
import math

import numpy as np

from foarl.advantage import RolloutBuffer


def random_buffer(rng, k, terminal=None, n_nat=4, n_vis=5):
    buf = RolloutBuffer()
    for _ in range(k):
        pn = rng.dirichlet(np.ones(n_nat))
        pv = rng.dirichlet(np.ones(n_vis))
        a, b = int(rng.integers(n_nat)), int(rng.integers(n_vis))
        buf.append(a, b, float(rng.choice([-1.0, 0.0, 1.0])), rng.normal(), rng.normal(),
                   math.log(pn[a]), math.log(pv[b]),
                   float(-(pn * np.log(pn)).sum()), float(-(pv * np.log(pv)).sum()))
    buf.terminal = bool(rng.integers(2)) if terminal is None else terminal
    if not buf.terminal:
        buf.boot_nat, buf.boot_vis = rng.normal(), rng.normal()
    return buf


def gae_brute(deltas, gamma, lam):
    n = len(deltas)
    return [sum((gamma * lam) ** i * deltas[t + i] for i in range(n - t)) for t in range(n)]


def rewards(buf):
    """R[1..k] with R[j] the reward following step j-1 (index 0 unused)."""
    return [None] + list(buf.r_next)


def adv_nat(buf, t, gamma):
    R, k = rewards(buf), buf.k
    ret = sum(gamma ** i * R[t + 1 + i] for i in range(k - t))
    return ret + gamma ** (k - t) * buf.boot_nat - buf.v_nat[t]


def adv_vis(buf, t, gamma, exponent="k"):
    R, k = rewards(buf), buf.k
    ret = sum(gamma ** i * R[t + 2 + i] for i in range(k - 1 - t))
    power = k - t if exponent == "k" else k - 1 - t
    return ret + gamma ** power * buf.boot_vis - buf.v_vis[t]


def deltas(buf, head, gamma):
    R, k = rewards(buf), buf.k
    if head == "nat":
        V = list(buf.v_nat) + [buf.boot_nat]
        return [R[t + 1] + gamma * V[t + 1] - V[t] for t in range(k)]
    V = list(buf.v_vis) + [buf.boot_vis]
    return [R[t + 2] + gamma * V[t + 1] - V[t] for t in range(k - 1)]


def loss_parts(buf, gamma, lam, beta, exponent="k"):
    k = buf.k
    vn = 0.5 * sum(adv_nat(buf, t, gamma) ** 2 for t in range(k))
    vv = 0.5 * sum(adv_vis(buf, t, gamma, exponent) ** 2 for t in range(k - 1))
    gn = gae_brute(deltas(buf, "nat", gamma), gamma, lam)
    gv = gae_brute(deltas(buf, "vis", gamma), gamma, lam)
    pn = sum(-buf.logp_nat[t] * gn[t] - beta * buf.ent_nat[t] for t in range(k))
    pv = sum(-buf.logp_vis[t] * gv[t] - beta * buf.ent_vis[t] for t in range(k - 1))
    return vn, pn, vv, pv
