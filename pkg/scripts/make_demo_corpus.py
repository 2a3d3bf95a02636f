"""Materialize a synthetic corpus on disk for the CLI workflows.

Writes registry.csv, a donor plume library and per-site scene bundles under
the given root, in the exact layout `train --data` and `alertd ingest`
expect. Positives carry their injected truth masks, so the corpus is fully
labelled.

Usage:
    python scripts/make_demo_corpus.py --out /tmp/corpus [--sites 4] [--passes 60]
"""

import argparse

import numpy as np

from plumewatch.rtlut import AbsorptionModel, build_lut, default_grids, save_lut
from plumewatch.synth import (
    build_site_series,
    default_site_specs,
    make_plume_library,
    write_corpus_to_disk,
)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--sites", type=int, default=4)
    parser.add_argument("--passes", type=int, default=60)
    parser.add_argument("--size", type=int, default=64, help="crop edge, pixels")
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    lut = build_lut(AbsorptionModel.from_file(), *default_grids())
    specs = default_site_specs(args.sites, seed=args.seed)
    library = make_plume_library(args.seed + 1, n=24, shape=(args.size, args.size))
    rng = np.random.default_rng(args.seed + 2)
    series = [
        build_site_series(spec, lut, library, args.passes, positive_rate=0.12,
                          seed=int(rng.integers(1, 2**31)), shape=(args.size, args.size))
        for spec in specs
    ]
    write_corpus_to_disk(args.out, series, library, specs)
    save_lut(lut, f"{args.out}/lut.json")
    n_scenes = sum(len(s.pairs) for s in series)
    n_pos = sum(sum(m is not None for m in s.masks) for s in series)
    print(f"wrote {args.out}: {args.sites} sites, {n_scenes} scene pairs, "
          f"{n_pos} plumes, lut.json")


if __name__ == "__main__":
    main()
