"""
Sector machines on the navigation gridworld
===========================================

The 6x6 map is cut into 2x2 sectors.  A destination context yields a
machine whose states are sectors, so destinations in the same sector share
one machine, and a wall layout changes which sector moves are allowed.
"""

import numpy as np

from cprep.gridworld import Cmdp, Context, GridMap, instantiate, render_task, sample_contexts
from cprep.planning import value_iteration
from cprep.rm import serialize_rm
from cprep.rm_generation import generate

cmdp = Cmdp("GN", "EL")
ctx = Context("EL", ((4, 1),))
task = instantiate(cmdp, ctx)
print(render_task(task, task.state_at((0, 5))))

grm = generate(cmdp, ctx, task=task)
print(serialize_rm(grm.rm))

# values decay with the number of sector hops to the goal sector
table = value_iteration(grm.rm, cmdp.gamma)
grid = np.zeros((3, 3))
for k, name in enumerate(grm.rm.states[:9]):
    grid[k // 3, k % 3] = table.values[k]
print(np.round(grid, 4))

# 36 destinations, 9 machines
machines = {serialize_rm(generate(cmdp, Context("EL", (c,))).rm) for c in GridMap().cells()}
print(len(machines), "distinct machines")

# with walls, a sector edge survives only if some open cell edge crosses it
cm = Cmdp("GN", "CM")
(walled,), _ = sample_contexts(cm, 1, 0, np.random.default_rng(8))
wtask = instantiate(cm, walled)
print(render_task(wtask))
wrm = generate(cm, walled, task=wtask).rm
print(wrm.n_transitions, "sector transitions with walls, vs", grm.rm.n_transitions, "without")

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, ax = plt.subplots(figsize=(3, 3))
    im = ax.imshow(grid, cmap="viridis")
    ax.set_title("V* per sector")
    fig.colorbar(im, ax=ax)
    fig.savefig("sector_values.svg")
