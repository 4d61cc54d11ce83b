#!/usr/bin/env python3
"""Produce real pipeline outputs for the plotting package's test fixtures.

Runs a reduced SIS experiment end to end (simulate, asa+bce training, L-test
and E-test evaluation, report) and copies the resulting text tables into
plotkit/test/fixtures/. Rerun after changing any file format.
"""

import os
import shutil
import sys
import tempfile

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(REPO, "plotkit", "test", "fixtures")

CONFIG = """\
[run]
case = sis
size_label = 3K
n_train = 1200
loss_mode = asa
seed = 0
out_dir = {out}

[model]
sis_nodes = 4

[training]
min_epochs = 5
max_epochs = 8
alpha_interval = 4

[evaluation]
ltest_size = 400
etest_groups = 5
etest_group_size = 5
etest_grid_target = 9
eval_seed = 321
"""


def main():
    from nlerkit.cli import main as cli

    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "out")
        cfg_path = os.path.join(tmp, "run.cfg")
        with open(cfg_path, "w") as fh:
            fh.write(CONFIG.format(out=out))
        steps = [
            ["simulate", "--config", cfg_path],
            ["train", "--config", cfg_path],
            ["train", "--config", cfg_path, "--loss", "bce"],
            ["eval", "--config", cfg_path, "--mode", "ltest",
             "--checkpoint", f"{out}/checkpoint_asa_0.nler"],
            ["eval", "--config", cfg_path, "--mode", "ltest", "--loss", "bce",
             "--checkpoint", f"{out}/checkpoint_bce_0.nler"],
            ["eval", "--config", cfg_path, "--mode", "etest",
             "--checkpoint", f"{out}/checkpoint_asa_0.nler"],
            ["report", "--metrics", out],
        ]
        for step in steps:
            code = cli(step)
            if code != 0:
                print(f"step {step} failed with exit code {code}", file=sys.stderr)
                return code
        os.makedirs(FIXTURES, exist_ok=True)
        for name in sorted(os.listdir(out)):
            if name.endswith(".tsv"):
                shutil.copy(os.path.join(out, name), os.path.join(FIXTURES, name))
                print(f"fixture: {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
