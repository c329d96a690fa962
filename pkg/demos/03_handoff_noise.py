# %% [markdown]
# # Hand-off noise
#
# Navigation never ends exactly where the next skill expects. Perturbing the
# end pose of every Navigate with Gaussian noise shows why manipulation skills
# that can move the base are more forgiving than ones that cannot.

# %%
from __future__ import annotations

from mobilemanip.chaineval import handoff_csv, handoff_noise
from mobilemanip.episodes import generate_episodes, generate_layouts

layouts = generate_layouts(0)
episodes = []
for task in ("tidyhouse", "preparegroceries", "settable"):
    episodes += generate_episodes(task, layouts, "cross_config", 10, seed=3)

rows = handoff_noise(episodes, [0.0, 0.1, 0.2, 0.3], seed=0)
print(handoff_csv(rows))

# %%
for r in rows:
    bar = "#" * round(40 * r.gap)
    print(f"sigma {r.sigma:.1f}  mobile-stationary gap {100 * r.gap:5.1f} pp  {bar}")
