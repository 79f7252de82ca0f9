#!/usr/bin/env python3
"""Regenerate the bundled architecture descriptors and layer schedules.

Run from the repository root:  python tools/gen_data.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from chip.accounting import ArchDescriptor, ConvSpec, FCSpec, LayerSchedule, count_stats

DATA = Path(__file__).resolve().parents[1] / "src" / "chip" / "data"


def resnet_cifar(name: str, blocks_per_stage: int) -> ArchDescriptor:
    # CIFAR-style residual net: 3x3 stem, three stages of basic blocks,
    # parameter-free shortcuts, global average pool, one FC.
    convs = [ConvSpec("stem", 3, 16, 3, 1, 32, 32)]
    prev = "stem"
    for s, (ch, sp) in enumerate([(16, 32), (32, 16), (64, 8)]):
        for b in range(blocks_per_stage):
            stride = 2 if (s > 0 and b == 0) else 1
            cin = convs[-1].out_channels
            c1 = ConvSpec(f"s{s}b{b}c1", cin, ch, 3, stride, sp, sp, input_from=prev)
            c2 = ConvSpec(f"s{s}b{b}c2", ch, ch, 3, 1, sp, sp, input_from=c1.layer_id)
            convs += [c1, c2]
            prev = c2.layer_id
    fcs = [FCSpec("fc", 64, 10, input_from=prev)]
    return ArchDescriptor(name, tuple(convs), tuple(fcs))


def vgg16_cifar() -> ArchDescriptor:
    cfg = [(64, 32), (64, 32), (128, 16), (128, 16), (256, 8), (256, 8), (256, 8),
           (512, 4), (512, 4), (512, 4), (512, 2), (512, 2), (512, 2)]
    convs = []
    prev = None
    cin = 3
    for i, (ch, sp) in enumerate(cfg, start=1):
        convs.append(ConvSpec(f"conv{i}", cin, ch, 3, 1, sp, sp, input_from=prev))
        prev = f"conv{i}"
        cin = ch
    fcs = (
        FCSpec("fc1", 512, 512, input_from=prev),
        FCSpec("fc2", 512, 10),
    )
    return ArchDescriptor("vgg16_cifar", tuple(convs), fcs)


def resnet50() -> ArchDescriptor:
    # Bottleneck net, stride on the 3x3 conv, projection shortcut on the first
    # block of each stage. Projections are not prunable; their width follows
    # the block-final conv so residual additions stay consistent.
    convs = [ConvSpec("stem", 3, 64, 7, 2, 112, 112)]
    stages = [(64, 3, 56), (128, 4, 28), (256, 6, 14), (512, 3, 7)]
    residual = "stem"  # layer whose width feeds the next block (after maxpool)
    for s, (mid, blocks, sp) in enumerate(stages):
        sp_in = 56 if s == 0 else stages[s - 1][2]
        out_ch = mid * 4
        for b in range(blocks):
            stride = 2 if (s > 0 and b == 0) else 1
            cin = convs[-1].out_channels if b else (64 if s == 0 else stages[s - 1][0] * 4)
            sp1 = sp if b else sp_in
            c1 = ConvSpec(f"s{s}b{b}c1", cin, mid, 1, 1, sp1, sp1, input_from=residual)
            c2 = ConvSpec(f"s{s}b{b}c2", mid, mid, 3, stride, sp, sp, input_from=c1.layer_id)
            c3 = ConvSpec(f"s{s}b{b}c3", mid, out_ch, 1, 1, sp, sp, input_from=c2.layer_id)
            convs += [c1, c2, c3]
            if b == 0:
                convs.append(
                    ConvSpec(f"s{s}down", cin, out_ch, 1, stride, sp, sp,
                             input_from=residual, prunable=False,
                             width_tied_to=c3.layer_id)
                )
            residual = c3.layer_id
    fcs = (FCSpec("fc", 2048, 1000, input_from=residual),)
    return ArchDescriptor("resnet50", tuple(convs), fcs)


SCHEDULES = {
    # (arch, label): {"kappa": [...], "ratio": [...]}
    # The 42.8 ratio pattern (0.4, 0.15) spans both the 16- and 32-channel
    # stages, so it repeats 18 times while the kappa pattern changes at 32.
    ("resnet56", "42.8"): {
        "kappa": [16] + [9, 13] * 9 + [19, 27] * 9 + [38, 64] * 9,
        "ratio": [0.0] + [0.4, 0.15] * 18 + [0.4, 0.0] * 9,
    },
    ("resnet56", "71.8"): {
        "kappa": [16] + [8, 9] * 9 + [12, 19] * 9 + [19, 64] * 9,
        "ratio": [0.0] + [0.5, 0.4] * 9 + [0.6, 0.4] * 9 + [0.7, 0.0] * 9,
    },
    ("resnet110", "48.3"): {
        "kappa": [16] + [10, 12] * 18 + [17, 24] * 18 + [35, 64] * 18,
        "ratio": [0.0] + [0.35, 0.22] * 18 + [0.45, 0.22] * 18 + [0.45, 0.0] * 18,
    },
    ("resnet110", "68.3"): {
        "kappa": [16] + [8, 9] * 18 + [11, 19] * 18 + [22, 64] * 18,
        "ratio": [0.0] + [0.5, 0.4] * 18 + [0.65, 0.4] * 18 + [0.65, 0.0] * 18,
    },
    ("vgg16_cifar", "81.6"): {
        "kappa": [50, 50, 101, 101, 202, 202, 202, 128, 128, 128, 128, 128, 512],
        "ratio": [0.21] * 7 + [0.75] * 5 + [0.0],
    },
    ("vgg16_cifar", "83.3"): {
        "kappa": [44, 44, 89, 89, 179, 179, 179, 128, 128, 128, 128, 128, 512],
        "ratio": [0.3] * 7 + [0.75] * 5 + [0.0],
    },
    ("vgg16_cifar", "87.3"): {
        "kappa": [35, 35, 70, 70, 140, 140, 140, 112, 112, 112, 112, 112, 512],
        "ratio": [0.45] * 7 + [0.78] * 5 + [0.0],
    },
    # The published 40.8% kappa list is internally inconsistent (52 entries for
    # 49 prunable layers), so only the ratio form ships for that level.
    ("resnet50", "40.8"): {
        "ratio": [0.0] + [0.35, 0.35, 0.1] * 13 + [0.35, 0.35, 0.0] * 3,
    },
    ("resnet50", "44.2"): {
        "kappa": [64] + [39, 39, 225] * 3 + [79, 79, 450] * 4
                 + [158, 158, 901] * 6 + [317, 317, 2048] * 3,
        "ratio": [0.0] + [0.38, 0.38, 0.12] * 13 + [0.38, 0.38, 0.0] * 3,
    },
    ("resnet50", "56.7"): {
        "kappa": [64] + [32, 32, 192] * 3 + [64, 64, 384] * 4
                 + [128, 128, 768] * 6 + [256, 256, 2048] * 3,
        "ratio": [0.0] + [0.5, 0.5, 0.25] * 13 + [0.5, 0.5, 0.0] * 3,
    },
    ("resnet50", "68.6"): {
        "kappa": [64] + [25, 25, 128] * 3 + [51, 51, 256] * 4
                 + [102, 102, 512] * 6 + [204, 204, 2048] * 3,
        "ratio": [0.0] + [0.6, 0.6, 0.5] * 13 + [0.6, 0.6, 0.0] * 3,
    },
}

def main():
    archs = {
        "resnet56": resnet_cifar("resnet56", 9),
        "resnet110": resnet_cifar("resnet110", 18),
        "vgg16_cifar": vgg16_cifar(),
        "resnet50": resnet50(),
    }
    (DATA / "archs").mkdir(parents=True, exist_ok=True)
    (DATA / "schedules").mkdir(parents=True, exist_ok=True)
    for name, arch in archs.items():
        arch.save(DATA / "archs" / f"{name}.json")
        base = count_stats(arch)
        print(f"{name}: {len(arch.prunable_convs())} prunable convs, "
              f"baseline {base.params/1e6:.3f}M params {base.flops/1e6:.2f}M MACs")
    for (arch_name, label), forms in SCHEDULES.items():
        for mode, values in forms.items():
            sched = LayerSchedule(arch_name, mode, tuple(values))
            sched.kappas(archs[arch_name])  # validate before shipping
            fname = f"{arch_name}_{label}_{mode}.json"
            sched.save(DATA / "schedules" / fname)
            print(f"wrote {fname} ({len(values)} entries)")


if __name__ == "__main__":
    main()
