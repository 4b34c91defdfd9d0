"""Regenerate trace_rotation_golden.csv from the closed-form rotation flow.

The field (-y, x, 0) rotates points rigidly: x(t) = R_z(t) x0.
"""

from pathlib import Path

import numpy as np
import yaml

from beltrami.export import write_streamlines_csv

root = Path(__file__).resolve().parents[2]
cfg = yaml.safe_load((root / "configs" / "trace_rotation.yaml").read_text())["trace"]
t = np.linspace(0.0, cfg["t_max"], cfg["n_samples"])
lines = []
for x0 in np.asarray(cfg["starts"], dtype=float):
    c, s = np.cos(t), np.sin(t)
    lines.append(np.stack([c * x0[0] - s * x0[1], s * x0[0] + c * x0[1], np.full_like(t, x0[2])], axis=1))
write_streamlines_csv(Path(__file__).with_name("trace_rotation_golden.csv"), lines, [t] * len(lines))
