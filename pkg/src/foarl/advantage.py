"""Returns, advantages and losses for the two heads of a rollout.

The natural head is credited with the reward that follows its action,
``R[t+1]``. A gaze move only changes what the agent sees next, so the vision
head is credited with the reward one step later, ``R[t+2]``. Its sums stop one
step short of the rollout end.

Buffer indices are rollout-relative: step ``t`` holds ``S_t`` and the rewards
``R_{t+1}`` (``r_next[t]``) and ``R_{t+2}`` (``r_after[t]``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensorcore as tc

BOOTSTRAP_EXPONENTS = ("k", "k-1")


@dataclass(frozen=True)
class Hyper:
    gamma: float = 0.99
    lam: float = 0.92
    beta: float = 0.01
    value_coef: float = 0.5
    vis_bootstrap_exponent: str = "k"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.value_coef < 0.0:
            raise ValueError(f"value_coef must be >= 0, got {self.value_coef}")
        if self.vis_bootstrap_exponent not in BOOTSTRAP_EXPONENTS:
            raise ValueError(f"vis_bootstrap_exponent must be one of {BOOTSTRAP_EXPONENTS}")


@dataclass
class RolloutBuffer:
    a_nat: list[int] = field(default_factory=list)
    a_vis: list[int] = field(default_factory=list)
    r_next: list[float] = field(default_factory=list)
    r_after: list[float] = field(default_factory=list)
    v_nat: list[float] = field(default_factory=list)
    v_vis: list[float] = field(default_factory=list)
    logp_nat: list[float] = field(default_factory=list)
    logp_vis: list[float] = field(default_factory=list)
    ent_nat: list[float] = field(default_factory=list)
    ent_vis: list[float] = field(default_factory=list)
    frames: list[np.ndarray] = field(default_factory=list, repr=False)
    boot_nat: float = 0.0
    boot_vis: float = 0.0
    terminal: bool = False

    @property
    def k(self) -> int:
        return len(self.r_next)

    def append(self, a_nat, a_vis, reward, v_nat, v_vis, logp_nat, logp_vis, ent_nat, ent_vis, frame=None):
        # the new reward is R_{t+2} for the previous transition
        if self.r_after:
            self.r_after[-1] = float(reward)
        self.a_nat.append(int(a_nat))
        self.a_vis.append(int(a_vis))
        self.r_next.append(float(reward))
        self.r_after.append(math.nan)
        self.v_nat.append(float(v_nat))
        self.v_vis.append(float(v_vis))
        self.logp_nat.append(float(logp_nat))
        self.logp_vis.append(float(logp_vis))
        self.ent_nat.append(float(ent_nat))
        self.ent_vis.append(float(ent_vis))
        if frame is not None:
            self.frames.append(frame)

    def transitions(self):
        """``(S_t, A_nat, A_vis, R_{t+1}, R_{t+2}, S_{t+1})`` tuples; unknown items are None."""
        out = []
        for t in range(self.k):
            s = self.frames[t] if t < len(self.frames) else None
            s_next = self.frames[t + 1] if t + 1 < len(self.frames) else None
            r2 = None if math.isnan(self.r_after[t]) else self.r_after[t]
            out.append((s, self.a_nat[t], self.a_vis[t], self.r_next[t], r2, s_next))
        return out

    def overlap_ok(self) -> bool:
        return all(self.r_after[t] == self.r_next[t + 1] for t in range(self.k - 1))


@dataclass(frozen=True)
class LossParts:
    value_nat: float
    policy_nat: float
    value_vis: float
    policy_vis: float
    total: float


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _check_index(t: int, limit: int, what: str) -> None:
    if not 0 <= t < limit:
        raise tc.ContractViolation(f"{what}: index {t} outside [0, {limit})")


def nstep_advantage_nat(buf: RolloutBuffer, t: int, gamma: float) -> float:
    k = buf.k
    _check_index(t, k, "natural n-step advantage")
    ret = sum(gamma ** i * buf.r_next[t + i] for i in range(k - t))
    return ret + gamma ** (k - t) * buf.boot_nat - buf.v_nat[t]


def nstep_advantage_vis(buf: RolloutBuffer, t: int, gamma: float, exponent: str = "k") -> float:
    k = buf.k
    _check_index(t, k - 1, "vision n-step advantage")
    ret = sum(gamma ** i * buf.r_after[t + i] for i in range(k - 1 - t))
    power = k - t if exponent == "k" else k - 1 - t
    return ret + gamma ** power * buf.boot_vis - buf.v_vis[t]


def td0_delta(values, rewards, gamma: float, head: str, t: int) -> float:
    """One-step TD error.

    ``values`` holds ``V(s_0) .. V(s_k)`` (last entry is the bootstrap),
    ``rewards`` holds ``R_1 .. R_k``. The vision head uses ``R_{t+2}``.
    """
    k = len(rewards)
    if len(values) != k + 1:
        raise tc.ContractViolation(f"need {k + 1} values for {k} rewards, got {len(values)}")
    if head == "nat":
        _check_index(t, k, "natural TD error")
        return rewards[t] + gamma * values[t + 1] - values[t]
    if head == "vis":
        _check_index(t, k - 1, "vision TD error")
        return rewards[t + 1] + gamma * values[t + 1] - values[t]
    raise ValueError(f"unknown head {head!r}")


def td_deltas(buf: RolloutBuffer, head: str, gamma: float) -> np.ndarray:
    k = buf.k
    if head == "nat":
        values = buf.v_nat + [buf.boot_nat]
        return np.array([td0_delta(values, buf.r_next, gamma, "nat", t) for t in range(k)])
    values = buf.v_vis + [buf.boot_vis]
    rewards = buf.r_next[:1] + buf.r_after[:k - 1]
    return np.array([td0_delta(values, rewards, gamma, "vis", t) for t in range(k - 1)])


def gae(deltas, gamma: float, lam: float) -> np.ndarray:
    """Exponentially weighted sums of TD errors, by backward recursion."""
    deltas = np.asarray(deltas, dtype=np.float64)
    out = np.empty_like(deltas)
    acc = 0.0
    decay = gamma * lam
    for t in range(len(deltas) - 1, -1, -1):
        acc = deltas[t] + decay * acc
        out[t] = acc
    return out


def _steps(buf: RolloutBuffer, head: str) -> int:
    return buf.k if head == "nat" else max(buf.k - 1, 0)


def nstep_advantages(buf: RolloutBuffer, head: str, gamma: float, exponent: str = "k") -> np.ndarray:
    if head == "nat":
        return np.array([nstep_advantage_nat(buf, t, gamma) for t in range(buf.k)])
    return np.array([nstep_advantage_vis(buf, t, gamma, exponent) for t in range(_steps(buf, "vis"))])


def loss_value(buf: RolloutBuffer, head: str, gamma: float, exponent: str = "k") -> float:
    adv = nstep_advantages(buf, head, gamma, exponent)
    return 0.5 * float(np.sum(adv * adv))


def loss_policy(buf: RolloutBuffer, head: str, gamma: float, lam: float, beta: float) -> float:
    n = _steps(buf, head)
    if n == 0:
        return 0.0
    adv = gae(td_deltas(buf, head, gamma), gamma, lam)
    logp = np.asarray(buf.logp_nat if head == "nat" else buf.logp_vis)[:n]
    ent = np.asarray(buf.ent_nat if head == "nat" else buf.ent_vis)[:n]
    return float(np.sum(-logp * adv - beta * ent))


def total_loss(buf: RolloutBuffer, hyper: Hyper) -> LossParts:
    vn = loss_value(buf, "nat", hyper.gamma)
    pn = loss_policy(buf, "nat", hyper.gamma, hyper.lam, hyper.beta)
    vv = loss_value(buf, "vis", hyper.gamma, hyper.vis_bootstrap_exponent)
    pv = loss_policy(buf, "vis", hyper.gamma, hyper.lam, hyper.beta)
    return LossParts(vn, pn, vv, pv, pn + hyper.value_coef * vn + pv + hyper.value_coef * vv)


def tape_loss(buf: RolloutBuffer, steps: list[dict], hyper: Hyper) -> tuple[tc.Node, LossParts]:
    """Surrogate loss on the tape whose gradient is the actor-critic update.

    ``steps[t]`` holds the forward nodes of step ``t`` (``pi_nat``, ``v_nat``,
    ``pi_vis``, ``v_vis``). Advantages and bootstrap values enter as
    constants, so gradients flow only through the current step's value,
    log-probability and entropy.
    """
    if len(steps) != buf.k or buf.k == 0:
        raise tc.ContractViolation("need one set of step nodes per transition")
    tape = steps[0]["v_nat"].tape
    parts: dict[str, tc.Node | None] = {}
    for head in ("nat", "vis"):
        n = _steps(buf, head)
        actions = buf.a_nat if head == "nat" else buf.a_vis
        if n == 0:
            parts[f"value_{head}"] = parts[f"policy_{head}"] = None
            continue
        adv_n = nstep_advantages(buf, head, hyper.gamma, hyper.vis_bootstrap_exponent)
        adv_g = gae(td_deltas(buf, head, hyper.gamma), hyper.gamma, hyper.lam)
        value_terms, policy_terms = [], []
        v_buf = buf.v_nat if head == "nat" else buf.v_vis
        for t in range(n):
            v = steps[t][f"v_{head}"]
            # the n-step return, fixed by the buffer
            target = adv_n[t] + v_buf[t]
            err = tc.add(tape.constant([target]), tc.scale(v, -1.0))
            value_terms.append(tc.mul(err, err))
            pi = steps[t][f"pi_{head}"]
            logpi = tc.log(pi)
            ent = tc.scale(tc.sum_(tc.mul(pi, logpi)), -1.0)
            term = tc.add(tc.scale(tc.take(logpi, actions[t]), -adv_g[t]), tc.scale(ent, -hyper.beta))
            policy_terms.append(term)
        parts[f"value_{head}"] = tc.scale(_chain_sum(value_terms), 0.5)
        parts[f"policy_{head}"] = _chain_sum(policy_terms)

    total = None
    for name in ("policy_nat", "value_nat", "policy_vis", "value_vis"):
        node = parts[name]
        if node is None:
            continue
        node = tc.reshape(node, ())
        if name.startswith("value"):
            node = tc.scale(node, hyper.value_coef)
        total = node if total is None else tc.add(total, node)

    def val(name):
        node = parts[name]
        return 0.0 if node is None else float(node.value.reshape(()))

    numbers = LossParts(val("value_nat"), val("policy_nat"), val("value_vis"), val("policy_vis"), float(total.value))
    return total, numbers


def _chain_sum(nodes: list[tc.Node]) -> tc.Node:
    acc = nodes[0]
    for node in nodes[1:]:
        acc = tc.add(acc, node)
    return acc
