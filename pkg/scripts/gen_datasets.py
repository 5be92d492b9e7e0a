"""Materialize the synthetic benchmark datasets as JSONL files.

Writes the covariate-shift benchmark (unseen test environments) and a
concept-shift variant (same environments, flipped correlation) into the
chosen directory, ready for `invgraph train --config ...` with the
config's dataset field pointing at the file.
"""

import argparse
import dataclasses
import os
import sys

from invgraph.experiments import BENCHMARK_SPEC
from invgraph.graphs import serialize_dataset
from invgraph.synth import generate


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", default="data", help="directory for the JSONL files")
    args = parser.parse_args(argv)

    os.makedirs(args.out_dir, exist_ok=True)
    for name, spec in (
        ("covariate.jsonl", BENCHMARK_SPEC),
        ("concept.jsonl", dataclasses.replace(BENCHMARK_SPEC, shift_kind="concept", test_envs=())),
    ):
        path = os.path.join(args.out_dir, name)
        graphs, _ = generate(spec)
        serialize_dataset(list(graphs), path)
        print(f"wrote {len(graphs)} graphs to {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
