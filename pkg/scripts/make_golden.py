"""Freeze the detector golden fixture (tests/data/).

Builds a small fixed-seed model, saves its checkpoint, and records the
probability raster it produces on a fixed input. The regression test
reloads both and requires agreement to 1e-5, which absorbs platform FMA
differences in 32-bit conv arithmetic. Regenerate only when the
architecture changes on purpose.
"""

from pathlib import Path

import numpy as np
import torch

from plumewatch.detector import DetectorModel, ModelConfig, ModelInput, forward, save_model

OUT = Path(__file__).resolve().parents[1] / "tests" / "data"
SEED = 31337


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(SEED)
    model = DetectorModel(ModelConfig(widths=(8, 16, 32, 64)), version="golden-1")
    model.add_bank("golden_site")
    with torch.no_grad():
        # nudge the site bank off identity so conditioning shows in the output
        bank = model.net.banks["golden_site"]
        for i, (g, b) in enumerate(zip(bank.gammas, bank.betas)):
            g.mul_(1.0 + 0.05 * (i + 1) / 8.0)
            b.add_(0.01 * (i + 1))
    save_model(model, OUT / "golden_model.ckpt")

    rng = np.random.default_rng(SEED)
    data = (rng.standard_normal((15, 64, 64)) * 0.2).astype(np.float32)
    density = np.ones((64, 64), dtype=np.float32)
    density[8:20, 40:52] = 0.0
    data[:, density == 0] = 0.0
    model_input = ModelInput(data=data, density=density)
    pred = forward(model, model_input, "golden_site")
    np.savez_compressed(OUT / "golden_case.npz",
                        data=data, density=density, prob=pred.prob)
    print(f"wrote {OUT / 'golden_model.ckpt'} and golden_case.npz "
          f"(scene score {pred.scene_score:.6f})")


if __name__ == "__main__":
    main()
