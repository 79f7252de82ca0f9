"""A minimal trainable CNN on synthetic data, used to generate real activation
dumps and to run the full score/prune/fine-tune loop at desk scale.

Everything is float64 numpy with hand-written backward passes, so gradients can
be checked against central finite differences and training is bit-deterministic
for a fixed seed in single-threaded mode.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .accounting import ArchDescriptor, ConvSpec, FCSpec, LayerSchedule, count_stats, ratio_to_kappa
from .errors import ChipError, MaskError, TrainingDivergedError
from .scoring import PruneMask, score_model, select_mask
from .tensor_io import DumpManifest, FeatureMapSet, LayerEntry, write_feature_maps


class Conv2d:
    def __init__(self, in_channels, out_channels, kernel, stride=1, pad=0, *, rng):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.pad = pad
        fan_in = in_channels * kernel * kernel
        self.weight = rng.normal(0.0, np.sqrt(2.0 / fan_in),
                                 (out_channels, in_channels, kernel, kernel))
        self.bias = np.zeros(out_channels)
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)
        self._cache = None

    def forward(self, x):
        s, p, k = self.stride, self.pad, self.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        out = np.einsum("nihwkl,oikl->nohw", win, self.weight, optimize=True)
        out += self.bias[None, :, None, None]
        self._cache = (x.shape, xp.shape, win)
        return out

    def backward(self, gout):
        x_shape, xp_shape, win = self._cache
        s, p, k = self.stride, self.pad, self.kernel
        ho, wo = gout.shape[2], gout.shape[3]
        self.gweight += np.einsum("nohw,nihwkl->oikl", gout, win, optimize=True)
        self.gbias += gout.sum(axis=(0, 2, 3))
        gxp = np.zeros(xp_shape)
        for ki in range(k):
            for kj in range(k):
                contrib = np.einsum("nohw,oi->nihw", gout, self.weight[:, :, ki, kj],
                                    optimize=True)
                gxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += contrib
        if p:
            return gxp[:, :, p:p + x_shape[2], p:p + x_shape[3]]
        return gxp

    def params(self):
        return [("weight", self.weight, self.gweight), ("bias", self.bias, self.gbias)]


class ReLU:
    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, gout):
        return np.where(self._mask, gout, 0.0)

    def params(self):
        return []


class MaxPool2d:
    """2x2 max pooling with stride 2; gradient goes to the first maximum."""

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ChipError(f"pooling needs even spatial dims, got {h}x{w}")
        ho, wo = h // 2, w // 2
        blocks = x.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, ho, wo, 4)
        self._idx = blocks.argmax(axis=-1)
        self._in_shape = (n, c, h, w)
        return np.take_along_axis(blocks, self._idx[..., None], axis=-1)[..., 0]

    def backward(self, gout):
        n, c, h, w = self._in_shape
        ho, wo = h // 2, w // 2
        g4 = np.zeros((n, c, ho, wo, 4))
        np.put_along_axis(g4, self._idx[..., None], gout[..., None], axis=-1)
        g4 = g4.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return g4.reshape(n, c, h, w)

    def params(self):
        return []


class Flatten:
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gout):
        return gout.reshape(self._shape)

    def params(self):
        return []


class Linear:
    def __init__(self, in_features, out_features, *, rng):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = rng.normal(0.0, np.sqrt(2.0 / in_features),
                                 (out_features, in_features))
        self.bias = np.zeros(out_features)
        self.gweight = np.zeros_like(self.weight)
        self.gbias = np.zeros_like(self.bias)

    def forward(self, x):
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, gout):
        self.gweight += gout.T @ self._x
        self.gbias += gout.sum(axis=0)
        return gout @ self.weight

    def params(self):
        return [("weight", self.weight, self.gweight), ("bias", self.bias, self.gbias)]


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient wrt the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


@dataclass(frozen=True)
class SyntheticTask:
    """Balanced classification task: class-dependent Gaussian blob plus an
    oriented sinusoidal grating, randomly translated, with additive noise and
    amplitude jitter. Translation keeps fine-tuning from trivially recovering
    pruned capacity by template matching.
    """

    seed: int = 7
    num_classes: int = 8
    input_shape: tuple[int, int, int] = (1, 16, 16)
    train_size: int = 768
    test_size: int = 256
    noise: float = 0.8
    max_shift: int = 2

    def __post_init__(self):
        if self.train_size % self.num_classes or self.test_size % self.num_classes:
            raise ChipError("train/test sizes must be divisible by num_classes for balance")

    def class_patterns(self) -> np.ndarray:
        ch, h, w = self.input_shape
        rng = np.random.default_rng(self.seed)
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        patterns = np.zeros((self.num_classes, ch, h, w))
        for k in range(self.num_classes):
            cy, cx = rng.uniform(0.25, 0.75, 2) * [h, w]
            sigma = rng.uniform(0.12, 0.22) * h
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
            angle = np.pi * k / self.num_classes + rng.uniform(-0.1, 0.1)
            freq = rng.uniform(0.5, 0.9)
            grating = np.sin(freq * (np.cos(angle) * xx + np.sin(angle) * yy))
            for c in range(ch):
                patterns[k, c] = blob + 0.6 * grating
        return patterns

    def _draw(self, rng, size):
        per_class = size // self.num_classes
        labels = np.repeat(np.arange(self.num_classes), per_class)
        rng.shuffle(labels)
        patterns = self.class_patterns()
        amps = np.clip(rng.normal(1.0, 0.15, size), 0.2, None)
        x = patterns[labels] * amps[:, None, None, None]
        if self.max_shift:
            shifts = rng.integers(-self.max_shift, self.max_shift + 1, size=(size, 2))
            for i in range(size):
                x[i] = np.roll(x[i], tuple(shifts[i]), axis=(1, 2))
        x += self.noise * rng.standard_normal(x.shape)
        return x, labels

    def generate(self):
        rng = np.random.default_rng(self.seed + 1)
        xtr, ytr = self._draw(rng, self.train_size)
        xte, yte = self._draw(rng, self.test_size)
        return xtr, ytr, xte, yte


class MicroNet:
    """A small sequential CNN built from a spec list.

    Spec entries: ("conv", {"out": c, "k": k, "stride": s, "pad": p}),
    ("relu",), ("pool",), ("flatten",), ("fc", {"out": n}). Fully connected
    input sizes are inferred by shape propagation from ``input_shape``.
    """

    def __init__(self, spec, input_shape, num_classes, rng_seed):
        self.spec = tuple(spec)
        self.input_shape = tuple(input_shape)
        self.num_classes = num_classes
        self.rng_seed = rng_seed
        rng = np.random.default_rng(rng_seed)
        self.layers = []
        self.conv_ids: list[str] = []
        self._conv_shapes: dict[str, tuple[int, int, int]] = {}
        shape = tuple(input_shape)
        conv_n = fc_n = 0
        for entry in self.spec:
            kind = entry[0]
            if kind == "conv":
                opts = entry[1]
                k = opts.get("k", 3)
                stride = opts.get("stride", 1)
                pad = opts.get("pad", 0)
                conv = Conv2d(shape[0], opts["out"], k, stride, pad, rng=rng)
                conv.layer_id = f"conv{conv_n}"
                conv_n += 1
                self.layers.append(conv)
                self.conv_ids.append(conv.layer_id)
                h = (shape[1] + 2 * pad - k) // stride + 1
                w = (shape[2] + 2 * pad - k) // stride + 1
                shape = (opts["out"], h, w)
                self._conv_shapes[conv.layer_id] = shape
            elif kind == "relu":
                self.layers.append(ReLU())
            elif kind == "pool":
                self.layers.append(MaxPool2d())
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            elif kind == "flatten":
                self.layers.append(Flatten())
                shape = (int(np.prod(shape)),)
            elif kind == "fc":
                out = entry[1].get("out", num_classes)
                fc = Linear(shape[0], out, rng=rng)
                fc.layer_id = f"fc{fc_n}"
                fc_n += 1
                self.layers.append(fc)
                shape = (out,)
            else:
                raise ChipError(f"unknown layer kind {kind!r}")

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dlogits):
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def zero_grad(self):
        for layer in self.layers:
            for _, _, grad in layer.params():
                grad[...] = 0.0

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, value, grad in layer.params():
                yield f"layer{i}.{name}", value, grad

    def num_params(self) -> int:
        return sum(v.size for _, v, _ in self.named_params())

    def clone(self) -> "MicroNet":
        return copy.deepcopy(self)

    def forward_with_activations(self, x):
        """Logits plus each conv's post-nonlinearity output, keyed by conv id."""
        acts = {}
        pending = None
        for layer in self.layers:
            x = layer.forward(x)
            if isinstance(layer, Conv2d):
                pending = layer.layer_id
            elif isinstance(layer, ReLU) and pending is not None:
                acts[pending] = x
                pending = None
        return x, acts

    def conv_layers(self) -> list[Conv2d]:
        return [l for l in self.layers if isinstance(l, Conv2d)]

    def fc_layers(self) -> list[Linear]:
        return [l for l in self.layers if isinstance(l, Linear)]

    def arch_descriptor(self) -> ArchDescriptor:
        convs = []
        prev = None
        for conv in self.conv_layers():
            c, h, w = self._conv_shapes[conv.layer_id]
            convs.append(ConvSpec(
                conv.layer_id, conv.in_channels, conv.out_channels, conv.kernel,
                conv.stride, h, w, has_bias=True, with_bn=False, input_from=prev,
            ))
            prev = conv.layer_id
        fcs = []
        first = True
        for fc in self.fc_layers():
            fcs.append(FCSpec(fc.layer_id, fc.in_features, fc.out_features,
                              input_from=prev if first else None))
            first = False
        return ArchDescriptor("desknet", tuple(convs), tuple(fcs))


def reference_net(seed: int = 11, num_classes: int = 8) -> MicroNet:
    """The default desk net: three padded 3x3 convs with pooling, one FC head."""
    spec = [
        ("conv", {"out": 12, "k": 3, "pad": 1}), ("relu",), ("pool",),
        ("conv", {"out": 24, "k": 3, "pad": 1}), ("relu",), ("pool",),
        ("conv", {"out": 32, "k": 3, "pad": 1}), ("relu",),
        ("flatten",), ("fc", {}),
    ]
    return MicroNet(spec, (1, 16, 16), num_classes=num_classes, rng_seed=seed)


def reference_task(seed: int = 7) -> SyntheticTask:
    return SyntheticTask(seed=seed)


@dataclass
class TrainResult:
    net: MicroNet
    epoch_losses: list[float] = field(default_factory=list)


def train(
    net: MicroNet,
    task: SyntheticTask,
    epochs: int,
    lr: float,
    momentum: float,
    *,
    weight_decay: float = 5e-4,
    batch_size: int = 32,
    seed: int = 0,
    data=None,
) -> TrainResult:
    """SGD with momentum on the task's train split; returns a trained clone.

    ``data`` can pass a pre-generated (xtr, ytr, xte, yte) tuple to avoid
    regenerating the dataset across repeated calls.
    """
    if epochs < 0 or lr <= 0:
        raise ChipError("epochs must be >= 0 and lr > 0")
    xtr, ytr, _, _ = data if data is not None else task.generate()
    trained = net.clone()
    velocity = {name: np.zeros_like(v) for name, v, _ in trained.named_params()}
    order_rng = np.random.default_rng(seed)
    losses = []
    for epoch in range(epochs):
        perm = order_rng.permutation(len(xtr))
        epoch_loss = 0.0
        for start in range(0, len(xtr), batch_size):
            idx = perm[start:start + batch_size]
            trained.zero_grad()
            logits = trained.forward(xtr[idx])
            loss, dlogits = softmax_cross_entropy(logits, ytr[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch} "
                    f"(lr={lr}, momentum={momentum}, weight_decay={weight_decay})"
                )
            trained.backward(dlogits)
            for name, value, grad in trained.named_params():
                v = velocity[name]
                v *= momentum
                v -= lr * (grad + weight_decay * value)
                value += v
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / len(xtr))
    return TrainResult(trained, losses)


def accuracy(net: MicroNet, x: np.ndarray, y: np.ndarray) -> float:
    return float((net.forward(x).argmax(axis=1) == y).mean())


def numeric_gradient(net, x, y, layer_index, param_name, flat_index, eps=1e-6):
    """Central finite difference of the loss wrt one scalar weight."""
    layer = net.layers[layer_index]
    value = dict((n, v) for n, v, _ in layer.params())[param_name]
    flat = value.reshape(-1)
    orig = flat[flat_index]
    flat[flat_index] = orig + eps
    lp, _ = softmax_cross_entropy(net.forward(x), y)
    flat[flat_index] = orig - eps
    lm, _ = softmax_cross_entropy(net.forward(x), y)
    flat[flat_index] = orig
    return (lp - lm) / (2 * eps)


def gradient_check(net, x, y, samples_per_param: int = 20, seed: int = 0) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    rng = np.random.default_rng(seed)
    net = net.clone()
    net.zero_grad()
    logits = net.forward(x)
    _, dlogits = softmax_cross_entropy(logits, y)
    net.backward(dlogits)
    worst = 0.0
    for layer_index, layer in enumerate(net.layers):
        for name, value, grad in layer.params():
            n = min(samples_per_param, value.size)
            for flat_index in rng.choice(value.size, size=n, replace=False):
                analytic = grad.reshape(-1)[flat_index]
                numeric = numeric_gradient(net, x, y, layer_index, name, int(flat_index))
                denom = max(abs(analytic), abs(numeric), 1e-6)
                worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def capture_activations(
    net: MicroNet,
    task: SyntheticTask,
    num_samples: int,
    out_dir: Path | str,
    *,
    dtype: str = "f32",
    data=None,
) -> DumpManifest:
    """Dump each conv layer's post-relu output per sample in tensor-io format."""
    xtr, _, _, _ = data if data is not None else task.generate()
    if num_samples > len(xtr):
        raise ChipError(f"num_samples {num_samples} exceeds train split {len(xtr)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pattern = "acts/{layer}_s{sample}.npy"
    entries = []
    first_acts = None
    batch = 64
    for start in range(0, num_samples, batch):
        xb = xtr[start:min(start + batch, num_samples)]
        _, acts = net.forward_with_activations(xb)
        if first_acts is None:
            first_acts = acts
        for layer_id, a in acts.items():
            for j in range(a.shape[0]):
                sample_id = start + j
                fms = FeatureMapSet(layer_id, sample_id, a[j])
                write_feature_maps(
                    fms, out_dir / pattern.format(layer=layer_id, sample=sample_id),
                    dtype=dtype,
                )
    for layer_id in net.conv_ids:
        c, h, w = first_acts[layer_id].shape[1:]
        entries.append(LayerEntry(layer_id, c, h, w, pattern))
    manifest = DumpManifest(
        model_name="desknet",
        layers=tuple(entries),
        num_samples=num_samples,
        dtype=dtype,
        capture_point="post-relu",
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def apply_mask(net: MicroNet, masks: dict[str, PruneMask]) -> MicroNet:
    """Physically remove pruned conv output channels and the matching inputs
    of downstream layers. Layers without a mask keep all channels.
    """
    for layer_id, mask in masks.items():
        if layer_id not in net.conv_ids:
            raise MaskError(f"mask for unknown conv layer {layer_id!r}")
    pruned = net.clone()
    keep_in = None  # None means all input channels kept
    last_full_c = None  # pre-prune channel count of the last conv
    for conv in pruned.conv_layers():
        mask = masks.get(conv.layer_id)
        if mask is not None and len(mask.keep) != conv.out_channels:
            raise MaskError(
                f"{conv.layer_id}: mask covers {len(mask.keep)} channels, "
                f"layer has {conv.out_channels}"
            )
        last_full_c = conv.out_channels
        if keep_in is not None:
            conv.weight = conv.weight[:, keep_in]
            conv.in_channels = len(keep_in)
        if mask is not None:
            keep_out = list(mask.kept_channels)
            conv.weight = conv.weight[keep_out]
            conv.bias = conv.bias[keep_out]
            conv.out_channels = len(keep_out)
            c, h, w = pruned._conv_shapes[conv.layer_id]
            pruned._conv_shapes[conv.layer_id] = (len(keep_out), h, w)
            keep_in = keep_out
        else:
            keep_in = None
        conv.gweight = np.zeros_like(conv.weight)
        conv.gbias = np.zeros_like(conv.bias)
    if keep_in is not None and pruned.fc_layers():
        # The flatten is channel-major, so FC weight columns group into
        # last_full_c blocks regardless of any pooling in between.
        fc = pruned.fc_layers()[0]
        per_channel = fc.in_features // last_full_c
        fc.weight = (
            fc.weight.reshape(fc.out_features, last_full_c, per_channel)[:, keep_in]
            .reshape(fc.out_features, -1)
        )
        fc.in_features = fc.weight.shape[1]
        fc.gweight = np.zeros_like(fc.weight)
    return pruned


@dataclass(frozen=True)
class ComparisonRow:
    criterion: str
    seed: int
    ratio: float
    acc_pre: float
    acc_post: float
    params: int
    flops: int


@dataclass
class ComparisonReport:
    baseline_acc: float
    rows: list[ComparisonRow]

    def mean_acc(self, criterion: str, which: str = "acc_post") -> float:
        vals = [getattr(r, which) for r in self.rows if r.criterion == criterion]
        return float(np.mean(vals))

    def to_csv_rows(self) -> list[str]:
        out = ["criterion,seed,ratio,acc_pre,acc_post,params,flops"]
        for r in self.rows:
            out.append(f"{r.criterion},{r.seed},{r.ratio:g},{r.acc_pre:.6f},"
                       f"{r.acc_post:.6f},{r.params},{r.flops}")
        return out


CRITERIA = ("chip", "random", "l1norm")


def _top_kappa_mask(layer_id: str, order_scores, kappa: int) -> PruneMask:
    c = len(order_scores)
    ranked = sorted(range(c), key=lambda i: (-order_scores[i], i))
    kept = set(ranked[:kappa])
    return PruneMask(layer_id, tuple(i in kept for i in range(c)), kappa)


def prune_compare(
    task: SyntheticTask,
    net: MicroNet,
    ratio: float,
    criteria,
    seeds,
    *,
    finetune_epochs: int = 6,
    lr: float = 0.01,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
    capture_samples: int = 192,
    scoring_samples: int = 128,
    work_dir: Path | str | None = None,
) -> ComparisonReport:
    """Prune the net per criterion at the given ratio, fine-tune, and report.

    ratio 0 is the degenerate all-keep case. Every criterion prunes the same
    per-layer kept counts, so params/flops agree across criteria by design.
    """
    if not 0.0 <= ratio < 1.0:
        raise ChipError(f"ratio {ratio} outside [0, 1)")
    unknown = [c for c in criteria if c not in CRITERIA]
    if unknown:
        raise ChipError(f"unknown criteria {unknown}; supported: {list(CRITERIA)}")

    data = task.generate()
    _, _, xte, yte = data
    baseline_acc = accuracy(net, xte, yte)
    convs = net.conv_layers()
    kappas = [ratio_to_kappa(ratio, c.out_channels) for c in convs]
    desc = net.arch_descriptor()
    stats = count_stats(desc, LayerSchedule("desknet", "kappa", tuple(kappas)))

    manifest = None
    dump_root = None
    if "chip" in criteria:
        import tempfile

        dump_root = Path(work_dir) if work_dir else Path(tempfile.mkdtemp(prefix="chipdump_"))
        manifest = capture_activations(net, task, capture_samples, dump_root, data=data)

    rows = []
    for seed in seeds:
        masks_by_criterion = {}
        for criterion in criteria:
            masks = {}
            if criterion == "chip":
                scores = score_model(manifest, scoring_samples, scoring_samples,
                                     root=dump_root, seed=seed)
                for conv, kappa in zip(convs, kappas):
                    masks[conv.layer_id] = select_mask(scores.per_layer[conv.layer_id],
                                                       kappa)
            elif criterion == "l1norm":
                for conv, kappa in zip(convs, kappas):
                    norms = np.abs(conv.weight).sum(axis=(1, 2, 3))
                    masks[conv.layer_id] = _top_kappa_mask(conv.layer_id, norms, kappa)
            else:  # random
                rng = np.random.default_rng(seed)
                for conv, kappa in zip(convs, kappas):
                    scores = rng.permutation(conv.out_channels).astype(float)
                    masks[conv.layer_id] = _top_kappa_mask(conv.layer_id, scores, kappa)
            masks_by_criterion[criterion] = masks
        for criterion in criteria:
            pruned = apply_mask(net, masks_by_criterion[criterion])
            acc_pre = accuracy(pruned, xte, yte)
            tuned = train(pruned, task, finetune_epochs, lr, momentum,
                          weight_decay=weight_decay, seed=seed, data=data).net
            acc_post = accuracy(tuned, xte, yte)
            rows.append(ComparisonRow(criterion, seed, ratio, acc_pre, acc_post,
                                      stats.params, stats.flops))
    return ComparisonReport(baseline_acc, rows)
