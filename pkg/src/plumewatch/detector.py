"""Per-site-conditioned convolutional detector over gridded scene inputs.

The model is an on-grid conditional neural process: observed channels are
multiplied by a density channel marking valid pixels and the density is
itself an input, so missing data carries no signal. The backbone is a
four-level UNet (conv / batch-norm / ReLU / max-pool encoders, transposed
convolution + double conv decoders with skip connections) emitting one
Bernoulli logit per pixel.

Site conditioning uses feature-wise linear modulation: each site with
enough labelled data owns a bank of per-channel (gamma, beta) pairs applied
after the first normalization of every block, and a GENERIC bank covers all
other sites. Banks are tiny (a few thousand scalars), so adapting to a new
site never touches the backbone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage
from torch import nn

from .raster import Scene
from .retrieval import RetrievalProduct

GENERIC_BANK = "GENERIC"


class DetectorError(Exception):
    pass


class ShapeError(DetectorError):
    pass


class EmptyLossError(DetectorError):
    pass


class InsufficientPositives(DetectorError):
    pass


class TrainingDiverged(DetectorError):
    def __init__(self, message, last_good_state=None):
        super().__init__(message)
        self.last_good_state = last_good_state


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple[int, ...] = (32, 64, 128, 256)
    data_channels: int = 15
    pixel_threshold: float = 0.5
    min_blob_px: int = 3
    mbmp_gain: float = 10.0  # scales the retrieval channel toward unit range
    wind_scale: float = 0.1  # m/s -> roughly unit range

    @property
    def in_channels(self) -> int:
        return self.data_channels + 1  # + density

    def film_widths(self) -> tuple[int, ...]:
        w = self.widths
        return (*w, w[2], w[1], w[0], w[0])


@dataclass
class ModelInput:
    """15 data channels plus the validity density channel.

    Channel layout: 6 current-pass bands, 6 reference-pass bands, the scaled
    multi-pass fractional signal, then the two broadcast wind components.
    Observed channels are zero at invalid pixels; the wind forcing channels
    stay spatially constant (the forward pass masks everything by density
    anyway).
    """

    data: np.ndarray  # (15, H, W) float32
    density: np.ndarray  # (H, W) float32 in {0, 1}


@dataclass
class Prediction:
    prob: np.ndarray  # (H, W) in [0, 1]
    scene_score: float
    pixel_threshold: float
    min_blob_px: int
    model_version: str
    film_bank: str

    @property
    def mask(self) -> np.ndarray:
        return _surviving_blobs(self.prob, self.pixel_threshold, self.min_blob_px)


def build_model_input(scene: Scene, reference: Scene, product: RetrievalProduct,
                      config: ModelConfig = ModelConfig()) -> ModelInput:
    valid = (
        product.valid
        & scene.validity_mask
        & reference.validity_mask
        & np.isfinite(scene.bands).all(axis=0)
        & np.isfinite(reference.bands).all(axis=0)
    )
    density = valid.astype(np.float32)
    h, w = density.shape
    data = np.zeros((config.data_channels, h, w), dtype=np.float32)
    data[0:6] = np.nan_to_num(scene.bands, nan=0.0) * density
    data[6:12] = np.nan_to_num(reference.bands, nan=0.0) * density
    data[12] = np.nan_to_num(product.delta_r, nan=0.0) * config.mbmp_gain * density
    data[13] = scene.wind[0] * config.wind_scale
    data[14] = scene.wind[1] * config.wind_scale
    return ModelInput(data=data, density=density)


class _FilmBank(nn.Module):
    def __init__(self, widths):
        super().__init__()
        self.gammas = nn.ParameterList([nn.Parameter(torch.ones(w)) for w in widths])
        self.betas = nn.ParameterList([nn.Parameter(torch.zeros(w)) for w in widths])


def _modulate(x: torch.Tensor, banks, site: int) -> torch.Tensor:
    # Per-sample (gamma, beta): stacking keeps gradients flowing to each bank.
    gamma = torch.stack([b.gammas[site] for b in banks])[:, :, None, None]
    beta = torch.stack([b.betas[site] for b in banks])[:, :, None, None]
    return gamma * x + beta


class _EncoderBlock(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.bn = nn.BatchNorm2d(cout)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x, banks, site):
        h = self.bn(self.conv(x))
        if banks is not None:
            h = _modulate(h, banks, site)
        h = torch.relu(h)
        return h, self.pool(h)


class _DecoderBlock(nn.Module):
    def __init__(self, cin, skip_c, cout):
        super().__init__()
        self.up = nn.ConvTranspose2d(cin, cin, 2, stride=2)
        self.conv1 = nn.Conv2d(cin + skip_c, cout, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(cout)

    def forward(self, x, skip, banks, site):
        h = torch.cat([self.up(x), skip], dim=1)
        h = self.bn1(self.conv1(h))
        if banks is not None:
            h = _modulate(h, banks, site)
        h = torch.relu(h)
        return torch.relu(self.bn2(self.conv2(h)))


class _UNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        w = config.widths
        cin = config.in_channels
        self.enc = nn.ModuleList([
            _EncoderBlock(cin, w[0]),
            _EncoderBlock(w[0], w[1]),
            _EncoderBlock(w[1], w[2]),
            _EncoderBlock(w[2], w[3]),
        ])
        self.dec = nn.ModuleList([
            _DecoderBlock(w[3], w[3], w[2]),
            _DecoderBlock(w[2], w[2], w[1]),
            _DecoderBlock(w[1], w[1], w[0]),
            _DecoderBlock(w[0], w[0], w[0]),
        ])
        self.head = nn.Conv2d(w[0], 1, 1)
        self.banks = nn.ModuleDict({GENERIC_BANK: _FilmBank(config.film_widths())})

    def forward(self, data, density, bank_ids=GENERIC_BANK):
        """bank_ids: None (unconditioned), one id, or one id per batch sample."""
        # ConvCNP-style masking: observations carry weight only where density=1.
        x = torch.cat([data * density.unsqueeze(1), density.unsqueeze(1)], dim=1)
        if bank_ids is None:
            banks = None
        else:
            if isinstance(bank_ids, str):
                bank_ids = [bank_ids] * data.shape[0]
            banks = [self.banks[b] for b in bank_ids]
        skips = []
        for i, block in enumerate(self.enc):
            skip, x = block(x, banks, i)
            skips.append(skip)
        for j, block in enumerate(self.dec):
            x = block(x, skips[3 - j], banks, 4 + j)
        return self.head(x)[:, 0]


class DetectorModel:
    """Backbone weights plus the registry of per-site FiLM banks."""

    def __init__(self, config: ModelConfig = ModelConfig(), version: str = "1"):
        self.config = config
        self.version = version
        self.net = _UNet(config)
        self.net.eval()

    @property
    def bank_ids(self) -> list[str]:
        return list(self.net.banks.keys())

    def has_bank(self, bank_id: str) -> bool:
        return bank_id in self.net.banks

    def add_bank(self, bank_id: str, copy_from: str = GENERIC_BANK) -> None:
        if bank_id in self.net.banks:
            return
        bank = _FilmBank(self.config.film_widths())
        source = self.net.banks[copy_from]
        with torch.no_grad():
            for dst, src in zip(bank.gammas, source.gammas):
                dst.copy_(src)
            for dst, src in zip(bank.betas, source.betas):
                dst.copy_(src)
        self.net.banks[bank_id] = bank

    def resolve_bank(self, bank_id: str | None) -> str:
        if bank_id is not None and bank_id in self.net.banks:
            return bank_id
        return GENERIC_BANK


def forward(model: DetectorModel, model_input: ModelInput,
            film_bank_id: str | None = None, *, raw_bank: bool = False) -> Prediction:
    """Deterministic inference on one input; H and W must be divisible by 16.

    ``raw_bank=True`` bypasses FiLM entirely (the unconditioned backbone),
    which is what identity banks must reproduce.
    """
    h, w = model_input.density.shape
    if h % 16 or w % 16:
        raise ShapeError(f"input {h}x{w} not divisible by 16; pad reflectively and crop back")
    bank = None if raw_bank else model.resolve_bank(film_bank_id)
    model.net.eval()
    with torch.no_grad():
        data = torch.from_numpy(np.ascontiguousarray(model_input.data)).unsqueeze(0)
        density = torch.from_numpy(np.ascontiguousarray(model_input.density)).unsqueeze(0)
        logits = model.net(data, density, bank)
        prob = torch.sigmoid(logits)[0].numpy()
    score = scene_score(prob, model.config.pixel_threshold, model.config.min_blob_px)
    return Prediction(
        prob=prob,
        scene_score=score,
        pixel_threshold=model.config.pixel_threshold,
        min_blob_px=model.config.min_blob_px,
        model_version=model.version,
        film_bank=bank if bank is not None else "(none)",
    )


def predict(model: DetectorModel, model_input: ModelInput,
            film_bank_id: str | None = None) -> Prediction:
    """forward() for arbitrary sizes: reflect-pad to /16, crop back."""
    h, w = model_input.density.shape
    pad_h = (-h) % 16
    pad_w = (-w) % 16
    if pad_h == 0 and pad_w == 0:
        return forward(model, model_input, film_bank_id)
    pad = ((0, pad_h), (0, pad_w))
    padded = ModelInput(
        data=np.pad(model_input.data, ((0, 0), *pad), mode="reflect"),
        density=np.pad(model_input.density, pad, mode="reflect"),
    )
    pred = forward(model, padded, film_bank_id)
    prob = pred.prob[:h, :w]
    score = scene_score(prob, model.config.pixel_threshold, model.config.min_blob_px)
    return Prediction(prob=prob, scene_score=score, pixel_threshold=pred.pixel_threshold,
                      min_blob_px=pred.min_blob_px, model_version=pred.model_version,
                      film_bank=pred.film_bank)


def _surviving_blobs(prob: np.ndarray, threshold: float, min_blob_px: int) -> np.ndarray:
    binary = prob >= threshold
    labels, n = ndimage.label(binary)  # 4-connectivity by default
    if n == 0:
        return np.zeros_like(binary)
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_blob_px
    keep[0] = False
    return keep[labels]


def scene_score(prob: np.ndarray, pixel_threshold: float = 0.5, min_blob_px: int = 3) -> float:
    """Max probability over 4-connected components of at least min_blob_px."""
    surviving = _surviving_blobs(np.asarray(prob), pixel_threshold, min_blob_px)
    if not surviving.any():
        return 0.0
    return float(np.asarray(prob)[surviving].max())


PROB_CLAMP = 1e-7


def loss_torch(prob: torch.Tensor, target: torch.Tensor, valid: torch.Tensor,
               positive_weight: float = 10.0) -> torch.Tensor:
    """Weighted Bernoulli negative log likelihood over valid pixels."""
    if valid.sum() == 0:
        raise EmptyLossError("no valid pixels to score")
    p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = positive_weight * target * torch.log(p) + (1.0 - target) * torch.log1p(-p)
    return -(ll * valid).sum() / valid.sum()


def loss(prob, target, valid=None, positive_weight: float = 10.0) -> float:
    """Numpy-facing wrapper around :func:`loss_torch`."""
    prob_t = torch.as_tensor(np.asarray(prob), dtype=torch.float64)
    target_t = torch.as_tensor(np.asarray(target), dtype=torch.float64)
    if valid is None:
        valid_t = torch.ones_like(prob_t)
    else:
        valid_t = torch.as_tensor(np.asarray(valid), dtype=torch.float64)
    return float(loss_torch(prob_t, target_t, valid_t, positive_weight))


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest + shape-prefixed named float32 tensors
# ---------------------------------------------------------------------------


def save_model(model: DetectorModel, path) -> Path:
    manifest_path = Path(path)
    payload_path = manifest_path.with_suffix(manifest_path.suffix + ".bin")
    state = model.net.state_dict()
    chunks = []
    names = []
    for name, tensor in state.items():
        array = tensor.detach().cpu().numpy().astype("<f4")
        encoded_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded_name)))
        chunks.append(encoded_name)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{max(array.ndim, 1)}I", *(array.shape or (1,))))
        chunks.append(np.ascontiguousarray(array).tobytes())
        names.append(name)
    payload_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps({
        "format": "plumewatch-checkpoint-1",
        "version": model.version,
        "config": {
            "widths": list(model.config.widths),
            "data_channels": model.config.data_channels,
            "pixel_threshold": model.config.pixel_threshold,
            "min_blob_px": model.config.min_blob_px,
            "mbmp_gain": model.config.mbmp_gain,
            "wind_scale": model.config.wind_scale,
        },
        "banks": model.bank_ids,
        "tensors": names,
        "payload": payload_path.name,
    }, indent=2))
    return manifest_path


def load_model(path) -> DetectorModel:
    manifest_path = Path(path)
    manifest = json.loads(manifest_path.read_text())
    cfg = manifest["config"]
    config = ModelConfig(
        widths=tuple(cfg["widths"]),
        data_channels=cfg["data_channels"],
        pixel_threshold=cfg["pixel_threshold"],
        min_blob_px=cfg["min_blob_px"],
        mbmp_gain=cfg.get("mbmp_gain", 10.0),
        wind_scale=cfg.get("wind_scale", 0.1),
    )
    model = DetectorModel(config=config, version=manifest["version"])
    for bank_id in manifest["banks"]:
        model.add_bank(bank_id)
    payload = (manifest_path.parent / manifest["payload"]).read_bytes()
    tensors = {}
    offset = 0
    while offset < len(payload):
        (name_len,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        name = payload[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", payload, offset)
        offset += 4
        shape = struct.unpack_from(f"<{max(ndim, 1)}I", payload, offset)[:ndim] or (1,)
        offset += 4 * max(ndim, 1)
        count = int(np.prod(shape)) if ndim else 1
        array = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(
            shape if ndim else ())
        offset += 4 * count
        tensors[name] = array.copy()
    state = model.net.state_dict()
    loaded = {}
    for name, template in state.items():
        if name not in tensors:
            raise DetectorError(f"checkpoint missing tensor {name}")
        loaded[name] = torch.from_numpy(tensors[name]).to(template.dtype).reshape(template.shape)
    model.net.load_state_dict(loaded)
    model.net.eval()
    return model
