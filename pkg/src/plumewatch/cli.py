"""Command-line entry points.

Each console script wraps one pipeline stage: ``lutgen`` builds the
transmittance table, ``simulate`` injects a library plume into a scene
bundle, ``train``/``infer`` drive the detector, ``evaluate`` scores record
files and ``alertd`` runs the operational service.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np


def _parse_grid(spec: str, log_from_zero: bool):
    start, stop, n = spec.split(":")
    start, stop, n = float(start), float(stop), int(n)
    if log_from_zero and start == 0.0:
        return np.concatenate([[0.0], np.geomspace(stop / 400.0, stop, n - 1)])
    return np.linspace(start, stop, n)


@click.command()
@click.option("--model", "model_path", type=click.Path(exists=True), default=None,
              help="Absorption model JSON; defaults to the shipped table.")
@click.option("--dch4", "dch4_spec", default="0:20000:64",
              help="Column grid start:stop:count (ppb m); 0-start grids are log-spaced.")
@click.option("--amf", "amf_spec", default="2:6:16", help="Air-mass-factor grid start:stop:count.")
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output table path (.json, with a sibling .bin payload).")
def lutgen(model_path, dch4_spec, amf_spec, out_path):
    """Build the band-transmittance look-up table."""
    from .rtlut import AbsorptionModel, build_lut, save_lut

    model = AbsorptionModel.from_file(model_path)
    lut = build_lut(model, _parse_grid(dch4_spec, True), _parse_grid(amf_spec, False))
    written = save_lut(lut, out_path)
    click.echo(f"wrote {written} ({', '.join(lut.channels())})")


@click.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--plume", "plume_id", required=True, help="Plume id within the library.")
@click.option("--library", "library_root", required=True, type=click.Path(exists=True))
@click.option("--lut", "lut_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--crop-m", default=None, type=float, help="Expected crop edge (m); omit to skip.")
def simulate(scene_path, plume_id, library_root, lut_path, out_path, crop_m):
    """Inject a library plume into a clear scene bundle (wind-consistent)."""
    from .raster import load_scene, save_scene
    from .rtlut import load_lut
    from .simulator import inject_plume, load_plume, rotate_to_wind

    scene = load_scene(scene_path, expected_crop_m=crop_m)
    plume = load_plume(Path(library_root) / f"plume_{plume_id}")
    lut = load_lut(lut_path)
    rotated = rotate_to_wind(plume, scene.wind)
    injected = inject_plume(scene, rotated, lut)
    save_scene(injected, out_path)
    click.echo(f"wrote synthetic bundle {out_path} (plume {plume_id})")


@click.command()
@click.option("--data", "data_root", required=True, type=click.Path(exists=True),
              help="Corpus root: registry.csv + scenes/ + plumes/.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--lut", "lut_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
def train(data_root, config_path, lut_path, out_path):
    """Train the detector on a scene corpus."""
    from .detector import DetectorModel, ModelConfig, save_model
    from .diskcorpus import load_disk_corpus
    from .rtlut import load_lut
    from .simulator import SimulationPolicy
    from .training import TrainConfig, train as run_training

    raw = json.loads(Path(config_path).read_text()) if config_path else {}
    widths = tuple(raw.pop("widths", (32, 64, 128, 256)))
    config = TrainConfig(**raw)
    lut = load_lut(lut_path)
    corpus = load_disk_corpus(data_root, lut)
    model = DetectorModel(ModelConfig(widths=widths))
    model, log = run_training(model, corpus, SimulationPolicy(seed=config.seed), config, lut,
                              log_fn=lambda e: click.echo(
                                  f"epoch {e['epoch']}: loss {e['train_loss']:.4f}"
                                  f" val mAP {e['val_mAP']:.3f}"))
    save_model(model, out_path)
    log_path = Path(out_path).with_suffix(".log.json")
    log_path.write_text(json.dumps({
        "learning_rate": log.learning_rate,
        "weight_decay": log.weight_decay,
        "positive_weight": log.positive_weight,
        "best_epoch": log.best_epoch,
        "best_val_mAP": log.best_val_map,
        "epochs": log.epochs,
    }, indent=2))
    click.echo(f"wrote {out_path}; best val mAP {log.best_val_map:.3f} (log: {log_path})")


@click.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--site", "site_id", required=True)
@click.option("--lut", "lut_path", required=True, type=click.Path(exists=True))
@click.option("--reference", "reference_path", type=click.Path(exists=True), default=None,
              help="Reference bundle; omitted means single-pass retrieval.")
@click.option("--out", "out_prefix", required=True, type=click.Path())
@click.option("--crop-m", default=None, type=float)
def infer(model_path, scene_path, site_id, lut_path, reference_path, out_prefix, crop_m):
    """Score one scene bundle: probability raster + prediction JSON."""
    from . import quantify, retrieval
    from .detector import build_model_input, load_model, predict
    from .raster import load_scene, write_band_tif
    from .rtlut import load_lut

    model = load_model(model_path)
    lut = load_lut(lut_path)
    scene = load_scene(scene_path, expected_crop_m=crop_m)
    if reference_path:
        reference = load_scene(reference_path, expected_crop_m=crop_m)
        product = retrieval.mbmp(scene, reference, lut)
    else:
        reference = scene
        product = retrieval.mbsp(scene, lut)
    model_input = build_model_input(scene, reference, product, model.config)
    pred = predict(model, model_input, site_id)
    out = Path(out_prefix)
    write_band_tif(out.with_suffix(".tif"), pred.prob, scene.crop_extent, 10.0)
    payload = {
        "scene_id": scene.scene_id,
        "site_id": site_id,
        "scene_score": pred.scene_score,
        "pixel_threshold": pred.pixel_threshold,
        "min_blob_px": pred.min_blob_px,
        "model_version": pred.model_version,
        "film_bank": pred.film_bank,
        "retrieval_kind": product.kind,
    }
    mask = pred.mask & product.valid
    if mask.any() and scene.wind_speed > 0:
        estimate = quantify.flux(np.nan_to_num(product.dch4, nan=0.0), mask, scene.wind)
        payload.update(estimate.to_dict())
    out.with_suffix(".json").write_text(json.dumps(payload, indent=2))
    click.echo(f"scene score {pred.scene_score:.3f} -> {out.with_suffix('.json')}")


@click.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--threshold", default=0.5, type=float)
@click.option("--bins", default="0.5,1,2,3,5,10", help="Flux bin edges in t/h.")
@click.option("--region", default=None, help="Restrict to one country.")
@click.option("--site-averaged", is_flag=True, help="Also report site-averaged AP.")
@click.option("--out", "out_path", type=click.Path(), default=None)
@click.option("--hist-out", "hist_path", type=click.Path(), default=None,
              help="Write the two-class score histogram as CSV.")
def evaluate(records_path, threshold, bins, region, site_averaged, out_path, hist_path):
    """Metrics report for a CSV/JSON file of scored scene records."""
    from .evalkit import (binary_metrics, case_study_report, flux_stratified_recall,
                          load_records, save_histogram_csv, score_histogram,
                          site_averaged_ap)

    records = load_records(records_path)
    edges = [float(x) for x in bins.split(",")] + [float("inf")]
    if region:
        report, hist = case_study_report(records, region, threshold)
        payload = {"region": region, **report.to_dict(), "histogram": hist}
    else:
        report = binary_metrics(records, threshold)
        recall, excluded = flux_stratified_recall(records, edges, threshold)
        report.per_flux_bin_recall = recall
        payload = report.to_dict()
        payload["flux_excluded_records"] = excluded
        hist = score_histogram(records)
    if site_averaged:
        payload["site_averaged_AP"] = site_averaged_ap(records)
    if hist_path:
        save_histogram_csv(hist, hist_path)
    text = json.dumps(payload, indent=2)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


@click.group()
def alertd():
    """Operational alerting service."""


@alertd.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve(config_path):
    """Run the HTTP API with the daily ingest scheduler."""
    from .alertd.service import ServiceConfig, serve as run_serve

    run_serve(ServiceConfig.from_file(config_path))


@alertd.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--once", is_flag=True, default=False,
              help="Run a single ingest pass and exit (the default behaviour).")
def ingest(config_path, once):
    """Ingest new scenes now."""
    from .alertd.service import ServiceConfig, ingest_once

    alerts = ingest_once(ServiceConfig.from_file(config_path))
    click.echo(f"{len(alerts)} new alerts")
    if not once:
        click.echo("(single pass; use `alertd serve` for the daily schedule)", err=True)


def main(argv=None):
    """Dispatch helper so `python -m plumewatch.cli <command>` also works."""
    commands = {"lutgen": lutgen, "simulate": simulate, "train": train,
                "infer": infer, "evaluate": evaluate, "alertd": alertd}
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in commands:
        click.echo(f"usage: plumewatch <{'|'.join(commands)}> ...", err=True)
        raise SystemExit(2)
    return commands[argv[0]](argv[1:], standalone_mode=True)


if __name__ == "__main__":
    main()
