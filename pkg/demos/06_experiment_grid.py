"""
Experiment reports
==================

Run the grain sweep and the fusion comparison at a reduced scale and read
the CSV reports back.
"""

import tempfile
import warnings
from pathlib import Path

from agos.config import desk_config
from agos.experiments import read_report, run_experiment

warnings.simplefilter("ignore", UserWarning)
out = Path(tempfile.mkdtemp())

# Small images and few epochs keep this to about a minute.
cfg = desk_config(image_size=32, samples_per_class=30, object_size_min=6, object_size_max=14,
                  channels=8, stem_channels=8, out_channels=16, epochs=20, runs=2)

for kind in ("sweep-grains", "fusion-compare"):
    rows = read_report(run_experiment(kind, cfg, out))
    print(kind)
    for row in rows:
        print(f"  {row['variant']:<16} {100 * row['oa_mean@0.5']:6.2f} ± {100 * row['oa_std@0.5']:.2f}")
