"""Load a training corpus from the on-disk bundle layout.

Expected tree::

    root/
      registry.csv
      plumes/plume_*/            donor plume library
      scenes/{site_id}/{pass}/   scene bundles; positives carry a truth mask
                                 (synthetic provenance) or an annotation.tif

Each pass pairs with the most recent earlier clear pass of the same site as
its reference; the first pass of a site only ever serves as a reference.
The per-site series is split by time into the sampling index and the raw
validation examples.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .raster import load_scene, load_site_registry, read_band_tif
from .rtlut import RtLut
from .simulator import (
    PositiveExample,
    ScenePair,
    SiteEntry,
    TrainingIndex,
    load_plume_library,
)
from .training import Corpus, ValExample


def _annotation_mask(bundle: Path, scene):
    if scene.truth is not None:
        return scene.truth.mask
    annotation = bundle / "annotation.tif"
    if annotation.exists():
        grid, _, _, _ = read_band_tif(annotation)
        return grid > 0.5
    return None


def load_disk_corpus(root, lut: RtLut | None = None, val_fraction: float = 0.2,
                     expected_crop_m: float | None = None) -> Corpus:
    root = Path(root)
    registry = load_site_registry(root / "registry.csv")
    library = load_plume_library(root / "plumes") if (root / "plumes").exists() else []
    sites = []
    val: list[ValExample] = []
    for record in registry:
        site_dir = root / "scenes" / record.site_id
        if not site_dir.exists():
            continue
        bundles = sorted(p for p in site_dir.iterdir() if (p / "meta.json").exists())
        series = []
        previous_clear = None
        for bundle in bundles:
            scene = load_scene(bundle, expected_crop_m=expected_crop_m)
            mask = _annotation_mask(bundle, scene)
            if previous_clear is None:
                if mask is None:
                    previous_clear = scene
                continue
            series.append((ScenePair(scene=scene, reference=previous_clear), mask))
            if mask is None and scene.validity_mask.mean() >= 0.5:
                previous_clear = scene
        n_train = int(round(len(series) * (1.0 - val_fraction)))
        entry = SiteEntry(site_id=record.site_id)
        for pair, mask in series[:n_train]:
            if mask is None:
                entry.negatives.append(pair)
            else:
                entry.positives.append(PositiveExample(pair=pair, mask=np.asarray(mask)))
        sites.append(entry)
        for pair, mask in series[n_train:]:
            val.append(ValExample(
                scene=pair.scene, reference=pair.reference, mask=mask,
                label="plume" if mask is not None else "no_plume",
                site_id=record.site_id,
            ))
    return Corpus(index=TrainingIndex(sites=sites, plume_library=library), val=val)
