"""Search for a potential/target pair that breaks transfer when the null space is not constant.

Source: two disconnected states (every action stays put), so ``P - I = 0``
and the null space is all of R^2.  The search scans non-constant null
potentials of growing scale against every deterministic 2-state, 2-action
target kernel and writes the first counterexample as a JSON fixture.
"""
from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from rewardrank.transferability import (
    ShapingPotential,
    TabularMDP,
    deterministic_kernels,
    diagnose_transferability,
    find_transfer_counterexample,
)

GAMMA = 0.9
SCALES = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0)


def block_source() -> TabularMDP:
    kernel = np.stack([np.eye(2), np.eye(2)])
    return TabularMDP(kernel=kernel, reward=np.array([1.0, 0.0]), gamma=GAMMA)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="tests/fixtures/necessity_witness.json")
    args = ap.parse_args(argv)
    source = block_source()
    diag = diagnose_transferability(source)
    direction = np.array([1.0, -1.0]) / np.sqrt(2.0)
    potentials = [ShapingPotential(s * direction, GAMMA) for s in SCALES]
    found = find_transfer_counterexample(source, potentials, deterministic_kernels(2, 2))
    if found is None:
        print("no counterexample found")
        return 1
    f, kern, rep = found
    fixture = {
        "source": source.to_dict(),
        "potential": f.f.tolist(),
        "target_kernel": kern.tolist(),
        "nullspace_dim": diag.nullspace_dim,
        "target_policy_match": rep.target_policy_match,
        "source_policy_match": rep.source_policy_match,
    }
    Path(args.out).write_text(json.dumps(fixture, indent=2, sort_keys=True) + "\n")
    print(rep.summary())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
