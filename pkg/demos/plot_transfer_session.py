"""
A small transfer session
========================

Train on a few source destinations, carry the network over to unseen
target destinations, and compare against learning the targets from
scratch.  Budgets here are tiny, so expect noisy curves.
"""

import numpy as np

from cprep.agent import DqnConfig
from cprep.gridworld import Cmdp
from cprep.metrics import THRESHOLD_GRID
from cprep.representation import parse_repr_name
from cprep.transfer import run_session, seed_utilities

cmdp = Cmdp("GN", "EL")
dqn = DqnConfig(learning_starts=500, target_update_interval=2000)

results = {}
for name in ("CTL", "CTL+C-PREP"):
    res = run_session(cmdp, parse_repr_name(name), dqn, n_src=8, n_tgt=16,
                      steps_src=10_000, steps_tgt=5_000, seed=42, eval_episodes=20,
                      track_generalization=False)
    u = seed_utilities(res.transferred, res.target)
    results[name] = (res, u)
    print(f"{name:12s} JS={u.js:.3f}  TTT_AUC={u.ttt_auc:6.2f}  TR={u.tr:+.3f}")

# the same source and target destinations are drawn for both representations
a, b = (results[k][0] for k in results)
print("same contexts:", a.src == b.src and a.tgt == b.tgt)

try:
    import matplotlib.pyplot as plt
except ImportError:
    plt = None
if plt is not None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for name, (res, u) in results.items():
        ax1.plot(res.transferred.progress, res.transferred.returns, label=f"{name} transferred")
        ax1.plot(res.target.progress, res.target.returns, "--", label=f"{name} scratch")
        ax2.plot(THRESHOLD_GRID, u.ttt_curve, label=name)
    ax1.set_xlabel("% of target training")
    ax1.set_ylabel("mean discounted return")
    ax1.legend(fontsize=7)
    ax2.set_xlabel("threshold")
    ax2.set_ylabel("TTT")
    ax2.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig("transfer_session.svg")
else:
    print(np.round(results["CTL+C-PREP"][1].ttt_curve[::10], 1))
