"""Run the desk-scale training experiment and report the headline numbers.

Usage:
    python scripts/run_desk_training.py [--seed 0] [--epochs 20] [--out model.ckpt]

Trains the detector on the synthetic eight-site corpus with the scaled
optimizer recipe, then adapts the conditioning bank of the held-out shifted
site and prints the before/after mAP.
"""

import argparse
import json

from plumewatch.detector import save_model
from plumewatch.experiments import desk_train_config, run_desk_experiment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--passes-per-site", type=int, default=250)
    parser.add_argument("--out", default=None, help="save the trained checkpoint here")
    args = parser.parse_args()

    config = desk_train_config(seed=args.seed)
    config.epochs = args.epochs
    result = run_desk_experiment(
        seed=args.seed,
        passes_per_site=args.passes_per_site,
        config=config,
        log_fn=lambda entry: print(
            f"epoch {entry['epoch']:3d}  loss {entry['train_loss']:.4f}  "
            f"val mAP {entry['val_mAP']:.3f}", flush=True,
        ),
    )
    print(json.dumps({
        "best_val_mAP": result.best_val_map,
        "shifted_site_mAP_generic": result.shifted_map_generic,
        "shifted_site_mAP_finetuned": result.shifted_map_finetuned,
        "train_minutes": round(result.train_seconds / 60, 2),
        "epochs_run": result.epochs_run,
    }, indent=2))
    if args.out and result.model is not None:
        save_model(result.model, args.out)
        print(f"checkpoint saved to {args.out}")


if __name__ == "__main__":
    main()
