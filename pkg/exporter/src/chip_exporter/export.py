"""Run a model over an image folder and dump per-layer activations.

Output follows the chip-toolkit tensor contract: one NPY v1.0 file per
(layer, sample) pair, float32 little-endian C-order, plus a UTF-8 JSON
manifest listing shapes and the file naming pattern.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.lib.format as npy_format
import torch
from PIL import Image
from torchvision import transforms

from .models import build_model

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
FILE_PATTERN = "acts/{layer}_s{sample}.npy"


@dataclass
class ExportConfig:
    model: str
    layers: list[str]
    samples: int
    image_dir: Path
    out_dir: Path
    capture_point: str = "post-module-output"
    pretrained: bool = False
    checkpoint: str | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValueError("layer selection list must not be empty")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        self.image_dir = Path(self.image_dir)
        self.out_dir = Path(self.out_dir)


@dataclass
class ExportResult:
    manifest_path: Path
    layer_shapes: dict[str, tuple[int, int, int]] = field(default_factory=dict)


def list_images(image_dir: Path) -> list[Path]:
    files = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images found under {image_dir}")
    return files


def _write_npy_v1(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fp:
        npy_format.write_array(fp, np.ascontiguousarray(array, dtype="<f4"),
                               version=(1, 0))


def export(config: ExportConfig) -> ExportResult:
    """Dump activations for every selected layer over the first N images."""
    model, resolution = build_model(config.model, pretrained=config.pretrained,
                                    checkpoint=config.checkpoint, seed=config.seed)
    try:
        modules = {name: model.get_submodule(name) for name in config.layers}
    except AttributeError as exc:
        raise ValueError(f"layer name does not resolve in {config.model}: {exc}") from exc

    images = list_images(config.image_dir)
    if len(images) < config.samples:
        raise ValueError(
            f"need {config.samples} images, found {len(images)} in {config.image_dir}"
        )
    transform = transforms.Compose([
        transforms.Resize((resolution, resolution)),
        transforms.ToTensor(),
        transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
    ])

    captured: dict[str, torch.Tensor] = {}
    hooks = []
    try:
        for name, module in modules.items():
            def hook(_mod, _inp, out, name=name):
                captured[name] = out.detach()
            hooks.append(module.register_forward_hook(hook))

        shapes: dict[str, tuple[int, int, int]] = {}
        for sample_id, image_path in enumerate(images[:config.samples]):
            with Image.open(image_path) as img:
                x = transform(img.convert("RGB")).unsqueeze(0)
            captured.clear()
            with torch.no_grad():
                model(x)
            for name in config.layers:
                if name not in captured:
                    raise ValueError(f"layer {name!r} produced no output")
                act = captured[name].squeeze(0).cpu().numpy()
                if act.ndim != 3:
                    raise ValueError(
                        f"layer {name!r} output is {act.ndim}-D, expected (c, h, w)"
                    )
                shapes[name] = tuple(act.shape)
                _write_npy_v1(
                    config.out_dir / FILE_PATTERN.format(layer=name, sample=sample_id),
                    act,
                )
    finally:
        for h in hooks:
            h.remove()

    manifest = {
        "model_name": config.model,
        "num_samples": config.samples,
        "dtype": "f32",
        "capture_point": config.capture_point,
        "layers": [
            {"layer_id": name, "c": shapes[name][0], "h": shapes[name][1],
             "w": shapes[name][2], "file_pattern": FILE_PATTERN}
            for name in config.layers
        ],
    }
    config.out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = config.out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return ExportResult(manifest_path, shapes)
