"""Scripted sensors on the default scene.

Runs the four fixed controllers over the same seeded episodes and prints
their pooled capture percentages. The sweeping lawnmower should clearly
beat both random walkers, and idling should be worst.
"""

from rncover import EnvConfig, evaluate, make_baseline

EPISODES = 20

env = EnvConfig()
for name in ("noop", "random-noop", "random", "lawnmower"):
    report = evaluate(make_baseline(name), env, episodes=EPISODES, seed=0)
    print(f"{name:12s} {report.capture_pct:6.2f}%  (+/- {report.stderr:.2f} per-episode stderr)")
