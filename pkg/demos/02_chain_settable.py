# %% [markdown]
# # Chaining scripted skills on SetTable
#
# A perfect planner fixes the subtask order; every skill ends on its own
# proprioceptive rule and the arm is reset before the next one starts.
# Stage predicates are checked every step on the full world state.

# %%
from __future__ import annotations

from mobilemanip.chaineval import ChainConfig, OracleBank, execute_chain, progressive_rates, task_plan
from mobilemanip.episodes import generate_episodes, generate_layouts

layouts = generate_layouts(0)
episodes = generate_episodes("settable", layouts, "cross_config", 10, seed=0)
for step in task_plan("settable", episodes[0]):
    print(f"{step.label:12s} completes stage {step.stage}" if step.stage is not None else step.label)

# %%
tr = execute_chain(episodes[0], OracleBank(), seed=0)
for s in tr.skills:
    print(f"{s['label']:12s} {s['steps']:4d} steps  goal reached: {s['success']}")
print("stage transitions:", tr.transitions)

# %% [markdown]
# Progressive completion over ten episodes, mobile versus stationary
# manipulation with region-goal navigation.

# %%
for variant in ("mobile", "stationary"):
    runs = [execute_chain(e, OracleBank(), 0, ChainConfig(variant=variant)) for e in episodes]
    print(variant, progressive_rates(runs).to_csv())
