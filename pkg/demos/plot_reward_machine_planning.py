"""
Planning over a reward machine
==============================

Value iteration on a two-step ordering machine, the shaping rewards it
induces, and the desired transition label handed to the agent.
"""

# a machine that pays 1 for visiting point 1 and then point 2
from pathlib import Path

import numpy as np

from cprep.planning import desired_label, dump_values, greedy_policy, shaped_reward, value_iteration
from cprep.rm import parse_rm, rm_to_dot, validate_rm

rm = parse_rm((Path(__file__).parent / "rms" / "order2.rm").read_text())
print(rm.n_states, "states,", rm.n_transitions, "transitions")
print(validate_rm(rm) or "no diagnostics")

# V*(u) = max over outgoing edges of r + gamma V*(u'); the terminal stays at 0
table = value_iteration(rm, gamma=0.99)
print(dump_values(rm, table))
print("converged after", table.iterations_run, "sweeps")

# shaping with Phi = V* pays nothing along the optimal path
# and charges (gamma - 1) V*(u) for standing still
for u, names in ((0, ["P1"]), (1, ["P2"]), (0, [])):
    r = shaped_reward(rm, table, u, rm.label(*names))
    print(f"{rm.states[u]} --{'+'.join(names) or 'nothing'}--> shaped reward {r:+.4f}")

# the desired label is the positive part of the best guard
policy = greedy_policy(rm, table)
for u in range(rm.n_states):
    print(rm.states[u], desired_label(rm, policy, u).bits())

# one unrewarded step precedes the paying edge, so V*(u0) = gamma
gammas = np.linspace(0.5, 0.999, 6)
print(np.round([value_iteration(rm, g).values[0] for g in gammas], 4))

# graphviz source; `cprep rm viz demos/rms/order2.rm | dot -Tsvg` does the same from a shell
print(rm_to_dot(rm, "order2"))
