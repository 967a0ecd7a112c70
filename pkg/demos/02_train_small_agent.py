"""A short actor-critic run on a reduced scene.

Trains for a small number of environment steps with the deterministic
serial backend, then compares the greedy agent against a random walker on
held-out episodes. Expect little improvement at this budget; the point is
the workflow. Pass a step count as the first argument for longer runs.
"""

import sys

from rncover import AgentController, EnvConfig, TrainerConfig, evaluate, make_baseline, train
from rncover.io import save_checkpoint

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
env = EnvConfig(n_sensors=(1, 2), n_objects=(5, 15), horizon=(300, 600))
cfg = TrainerConfig(n_workers=8, backend="serial", total_env_steps=steps, lr=1e-2, beta=1e-2,
                    gamma=0.99, aggregation="mean", log_every=25)


def show(rec):
    if rec["capture_pct"] is not None:
        print(f"steps={rec['env_steps']:7d} capture={rec['capture_pct']:5.1f}% "
              f"entropy={rec['entropy']:.3f}")


result = train(cfg, env, progress=show)
save_checkpoint("demo_agent.ck", result.params)

agent = evaluate(AgentController(result.params, "deterministic", cfg.aggregation), env,
                 episodes=20, seed=99)
rand = evaluate(make_baseline("random"), env, episodes=20, seed=99)
print(f"agent {agent.capture_pct:.2f}%   random {rand.capture_pct:.2f}%")
print("checkpoint written to demo_agent.ck")
