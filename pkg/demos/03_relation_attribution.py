"""Which relations drive a decision?

Gates each relation of the controlled sensor's observation, takes the
derivative of the policy's KL divergence from uniform with respect to
each gate, and draws the result: green lines pushed the policy away from
uniform, red lines pulled it back. Uses a checkpoint if given, otherwise
a freshly initialized network.
"""

import sys
from pathlib import Path

import numpy as np

from rncover import Action, EnvConfig, init_episode, init_params, step
from rncover.analysis import relation_contributions, render_frame, write_ppm
from rncover.io import load_checkpoint
from rncover.observation import FrameHistory, observe

params = load_checkpoint(sys.argv[1]) if len(sys.argv) > 1 else init_params(0)
state = init_episode(EnvConfig(n_sensors=(2, 2), n_objects=(6, 6)), seed=3)
history = FrameHistory()
out = Path("attribution_frames")
out.mkdir(exist_ok=True)

for t in range(5):
    rel = observe(history, state, 0)
    report = relation_contributions(params, rel)
    strongest = int(np.argmax(np.abs(report.values)))
    print(f"t={t} KL={report.kl:.4f} action={Action(report.action).name:5s} "
          f"strongest={rel.pair_index[strongest]} ({report.values[strongest]:+.2e})")
    write_ppm(render_frame(state, 0, report, scale=300), out / f"t{t}.ppm")
    state, _ = step(state, [Action(report.action)] * len(state.sensors))

print(f"frames in {out}/")
