"""Static architecture descriptors, layer schedules, and params/FLOPs accounting.

FLOPs are multiply-accumulate counts (one MAC = one FLOP), the convention that
reproduces the published compression tables this toolkit cross-checks against.
Batch-norm learnable parameters (2 per channel) are counted by default for the
same reason; both are toggleable.

Kept-count conversion from a pruning ratio is kappa = floor((1 - ratio) * c).
The published kappa/ratio list pairs are only consistent under floor (e.g.
0.6 * 16 = 9.6 pairs with kappa 9, not 10).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ChipError, ScheduleError


def ratio_to_kappa(ratio: float, channels: int) -> int:
    """floor((1 - ratio) * c), nudged so exact integer products never round down."""
    if not 0.0 <= ratio <= 1.0:
        raise ScheduleError(f"ratio {ratio} outside [0, 1]")
    return max(1, int(math.floor((1.0 - ratio) * channels + 1e-9)))


@dataclass(frozen=True)
class ConvSpec:
    """One convolution: shape, spatial output, and how its input chains.

    ``input_from`` names the layer whose (possibly pruned) width feeds this
    layer's input channels; None means the network input. Non-prunable layers
    with ``width_tied_to`` set (residual downsample projections) follow the
    kept-count of the named layer instead of carrying their own schedule entry.
    """

    layer_id: str
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    out_h: int
    out_w: int
    has_bias: bool = False
    with_bn: bool = True
    input_from: str | None = None
    prunable: bool = True
    width_tied_to: str | None = None


@dataclass(frozen=True)
class FCSpec:
    """Fully connected layer; in_features scales with the feeding conv's width."""

    layer_id: str
    in_features: int
    out_features: int
    has_bias: bool = True
    input_from: str | None = None


@dataclass(frozen=True)
class ModelStats:
    params: int
    flops: int

    def __post_init__(self):
        if self.params < 0 or self.flops < 0:
            raise ChipError("params and flops must be non-negative")


@dataclass(frozen=True)
class ArchDescriptor:
    """Ordered conv + FC layers with the chaining needed for pruned accounting."""

    name: str
    convs: tuple[ConvSpec, ...]
    fcs: tuple[FCSpec, ...]

    def __post_init__(self):
        widths = {}
        for conv in self.convs:
            expect = widths.get(conv.input_from) if conv.input_from else conv.in_channels
            if conv.input_from is not None and conv.input_from not in widths:
                raise ScheduleError(
                    f"{self.name}: {conv.layer_id} chains from unknown layer "
                    f"{conv.input_from!r}"
                )
            if conv.input_from is not None and expect != conv.in_channels:
                raise ScheduleError(
                    f"{self.name}: {conv.layer_id} declares in_channels "
                    f"{conv.in_channels} but {conv.input_from} outputs {expect}"
                )
            if conv.width_tied_to is not None and conv.width_tied_to not in widths:
                raise ScheduleError(
                    f"{self.name}: {conv.layer_id} tied to unknown layer "
                    f"{conv.width_tied_to!r}"
                )
            widths[conv.layer_id] = conv.out_channels
        for fc in self.fcs:
            if fc.input_from is not None and fc.input_from not in widths:
                raise ScheduleError(
                    f"{self.name}: {fc.layer_id} chains from unknown layer "
                    f"{fc.input_from!r}"
                )

    def prunable_convs(self) -> list[ConvSpec]:
        return [c for c in self.convs if c.prunable]

    def conv(self, layer_id: str) -> ConvSpec:
        for c in self.convs:
            if c.layer_id == layer_id:
                return c
        raise ScheduleError(f"{self.name}: no conv layer {layer_id!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "convs": [
                {
                    "layer_id": c.layer_id, "in_channels": c.in_channels,
                    "out_channels": c.out_channels, "kernel": c.kernel,
                    "stride": c.stride, "out_h": c.out_h, "out_w": c.out_w,
                    "has_bias": c.has_bias, "with_bn": c.with_bn,
                    "input_from": c.input_from, "prunable": c.prunable,
                    "width_tied_to": c.width_tied_to,
                }
                for c in self.convs
            ],
            "fcs": [
                {
                    "layer_id": f.layer_id, "in_features": f.in_features,
                    "out_features": f.out_features, "has_bias": f.has_bias,
                    "input_from": f.input_from,
                }
                for f in self.fcs
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArchDescriptor":
        convs = tuple(ConvSpec(**c) for c in obj["convs"])
        fcs = tuple(FCSpec(**f) for f in obj["fcs"])
        return cls(obj["name"], convs, fcs)

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "ArchDescriptor":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class LayerSchedule:
    """Per-prunable-layer kept counts, stored either as kappas or as ratios."""

    arch_name: str
    mode: str  # "kappa" | "ratio"
    values: tuple[float, ...]

    def __post_init__(self):
        if self.mode not in ("kappa", "ratio"):
            raise ScheduleError(f"mode must be 'kappa' or 'ratio', got {self.mode!r}")

    def kappas(self, arch: ArchDescriptor) -> list[int]:
        prunable = arch.prunable_convs()
        if len(self.values) != len(prunable):
            raise ScheduleError(
                f"schedule has {len(self.values)} entries but {arch.name} has "
                f"{len(prunable)} prunable layers"
            )
        out = []
        for conv, v in zip(prunable, self.values):
            if self.mode == "kappa":
                k = int(v)
                if k != v:
                    raise ScheduleError(f"{conv.layer_id}: kappa {v} is not an integer")
                if not 1 <= k <= conv.out_channels:
                    raise ScheduleError(
                        f"{conv.layer_id}: kappa {k} out of range for "
                        f"{conv.out_channels} channels"
                    )
            else:
                k = ratio_to_kappa(float(v), conv.out_channels)
            out.append(k)
        return out

    def to_json(self) -> dict:
        return {"arch": self.arch_name, "mode": self.mode, "values": list(self.values)}

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")


def parse_schedule(path: Path | str, arch: ArchDescriptor) -> LayerSchedule:
    """Load a schedule JSON and validate it against the architecture."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        sched = LayerSchedule(obj["arch"], obj["mode"], tuple(obj["values"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ScheduleError(f"{path}: malformed schedule file: {exc}") from exc
    sched.kappas(arch)  # length and bound checks
    return sched


@dataclass(frozen=True)
class LayerStats:
    layer_id: str
    params_base: int
    params_pruned: int
    flops_base: int
    flops_pruned: int


def _effective_widths(arch: ArchDescriptor, kappas: list[int] | None) -> dict[str, int]:
    widths: dict[str, int] = {}
    if kappas is None:
        for conv in arch.convs:
            widths[conv.layer_id] = conv.out_channels
        return widths
    it = iter(kappas)
    for conv in arch.convs:
        if conv.prunable:
            widths[conv.layer_id] = next(it)
        elif conv.width_tied_to is not None:
            widths[conv.layer_id] = widths[conv.width_tied_to]
        else:
            widths[conv.layer_id] = conv.out_channels
    return widths


def _layer_counts(
    arch: ArchDescriptor, widths: dict[str, int], *, count_bn: bool
) -> dict[str, tuple[int, int]]:
    out: dict[str, tuple[int, int]] = {}
    for conv in arch.convs:
        cin = widths[conv.input_from] if conv.input_from else conv.in_channels
        cout = widths[conv.layer_id]
        weight = cout * cin * conv.kernel * conv.kernel
        params = weight + (cout if conv.has_bias else 0)
        if conv.with_bn and count_bn:
            params += 2 * cout
        flops = weight * conv.out_h * conv.out_w
        out[conv.layer_id] = (params, flops)
    for fc in arch.fcs:
        if fc.input_from is not None:
            base_width = arch.conv(fc.input_from).out_channels
            if fc.in_features % base_width:
                raise ScheduleError(
                    f"{fc.layer_id}: in_features {fc.in_features} not a multiple of "
                    f"feeding width {base_width}"
                )
            per_channel = fc.in_features // base_width
            fin = per_channel * widths[fc.input_from]
        else:
            fin = fc.in_features
        weight = fin * fc.out_features
        params = weight + (fc.out_features if fc.has_bias else 0)
        out[fc.layer_id] = (params, weight)
    return out


def count_stats(
    arch: ArchDescriptor,
    schedule: LayerSchedule | None = None,
    *,
    count_bn: bool = True,
    flops_per_mac: int = 1,
) -> ModelStats:
    """Total parameter and FLOP counts, pruned per the schedule when given.

    The default convention is one FLOP per multiply-accumulate; pass
    ``flops_per_mac=2`` to count the multiply and the add separately.
    """
    kappas = schedule.kappas(arch) if schedule is not None else None
    counts = _layer_counts(arch, _effective_widths(arch, kappas), count_bn=count_bn)
    params = sum(p for p, _ in counts.values())
    flops = sum(f for _, f in counts.values())
    return ModelStats(params, flops_per_mac * flops)


def layer_stats(
    arch: ArchDescriptor,
    schedule: LayerSchedule | None = None,
    *,
    count_bn: bool = True,
) -> list[LayerStats]:
    """Per-layer baseline vs pruned counts, for the stats CSV report."""
    base = _layer_counts(arch, _effective_widths(arch, None), count_bn=count_bn)
    kappas = schedule.kappas(arch) if schedule is not None else None
    pruned = _layer_counts(arch, _effective_widths(arch, kappas), count_bn=count_bn)
    rows = []
    for layer_id in base:
        pb, fb = base[layer_id]
        pp, fp = pruned[layer_id]
        rows.append(LayerStats(layer_id, pb, pp, fb, fp))
    return rows


def reduction_report(baseline: ModelStats, pruned: ModelStats) -> tuple[float, float]:
    """Percent reduction in (params, flops) of pruned relative to baseline."""
    if baseline.params <= 0 or baseline.flops <= 0:
        raise ChipError("baseline counts must be positive")
    return (
        100.0 * (1.0 - pruned.params / baseline.params),
        100.0 * (1.0 - pruned.flops / baseline.flops),
    )


def _data_root():
    return resources.files("chip") / "data"


def builtin_arch_names() -> list[str]:
    return sorted(p.name.removesuffix(".json") for p in (_data_root() / "archs").iterdir())


def load_builtin_arch(name: str) -> ArchDescriptor:
    """Load one of the architecture descriptors shipped with the package."""
    path = _data_root() / "archs" / f"{name}.json"
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ScheduleError(
            f"no builtin architecture {name!r}; available: {builtin_arch_names()}"
        ) from exc
    return ArchDescriptor.from_json(json.loads(text))


def builtin_schedule_names() -> list[str]:
    return sorted(
        p.name.removesuffix(".json") for p in (_data_root() / "schedules").iterdir()
    )


def load_builtin_schedule(name: str) -> LayerSchedule:
    """Load one of the published layer schedules shipped with the package."""
    path = _data_root() / "schedules" / f"{name}.json"
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ScheduleError(
            f"no builtin schedule {name!r}; available: {builtin_schedule_names()}"
        ) from exc
    return LayerSchedule(obj["arch"], obj["mode"], tuple(obj["values"]))
