"""The two heads see the same rewards one step apart.

Builds a short rollout by hand and prints the natural and vision head
advantages side by side, then bumps a single reward to show which losses
react to it.
"""
import copy

import numpy as np

from foarl import advantage as adv
from foarl.advantage import Hyper, RolloutBuffer

hyper = Hyper()
buf = RolloutBuffer()
rewards = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0]
values = [0.3, 0.4, 0.6, 0.2, 0.3, 0.7]
for r, v in zip(rewards, values):
    # actions, log-probs and entropies only matter for the policy losses
    buf.append(0, 0, r, v, v, np.log(0.25), np.log(0.2), np.log(4), np.log(5))
buf.boot_nat = buf.boot_vis = 0.5

print("step  R_t+1  R_t+2   n-step nat   n-step vis   GAE nat    GAE vis")
a_nat = adv.nstep_advantages(buf, "nat", hyper.gamma)
a_vis = adv.nstep_advantages(buf, "vis", hyper.gamma)
g_nat = adv.gae(adv.td_deltas(buf, "nat", hyper.gamma), hyper.gamma, hyper.lam)
g_vis = adv.gae(adv.td_deltas(buf, "vis", hyper.gamma), hyper.gamma, hyper.lam)
for t in range(buf.k):
    last = t == buf.k - 1
    r2 = "    ?" if last else f"{buf.r_after[t]:5.1f}"
    nv = "          -" if last else f"{a_vis[t]:11.4f}"
    gv = "        -" if last else f"{g_vis[t]:9.4f}"
    print(f"{t:4d}  {buf.r_next[t]:5.1f}  {r2}  {a_nat[t]:11.4f}  {nv}  {g_nat[t]:8.4f}  {gv}")

# the vision head is judged by the reward that follows the NEXT step
bumped = copy.deepcopy(buf)
bumped.r_after[1] += 1.0
before, after = adv.total_loss(buf, hyper), adv.total_loss(bumped, hyper)
for field in ("value_nat", "policy_nat", "value_vis", "policy_vis"):
    print(f"{field:<11} {getattr(before, field):9.4f} -> {getattr(after, field):9.4f}")
