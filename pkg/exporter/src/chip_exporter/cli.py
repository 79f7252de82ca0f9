import argparse
import sys

from .export import ExportConfig, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chip-export",
        description="Dump per-layer CNN activations as NPY v1.0 files plus a "
                    "JSON manifest readable by the chip toolkit.",
    )
    parser.add_argument("--model", required=True,
                        choices=["resnet50", "resnet56", "vgg16"])
    parser.add_argument("--layers", required=True,
                        help="comma-separated module paths, e.g. layer1.0,layer2.0")
    parser.add_argument("--samples", type=int, required=True)
    parser.add_argument("--images", required=True, help="folder of input images")
    parser.add_argument("--out", required=True, help="output dump directory")
    parser.add_argument("--capture-point", default="post-module-output",
                        help="free-form note recorded in the manifest")
    parser.add_argument("--pretrained", action="store_true",
                        help="download pretrained weights (needs network)")
    parser.add_argument("--checkpoint", default=None,
                        help="load a local state-dict instead")
    parser.add_argument("--seed", type=int, default=0,
                        help="init seed when running without weights")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    layers = [l.strip() for l in args.layers.split(",") if l.strip()]
    try:
        config = ExportConfig(
            model=args.model, layers=layers, samples=args.samples,
            image_dir=args.images, out_dir=args.out,
            capture_point=args.capture_point, pretrained=args.pretrained,
            checkpoint=args.checkpoint, seed=args.seed,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        result = export(config)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for layer, shape in result.layer_shapes.items():
        print(f"{layer}: {config.samples} samples of shape {shape}")
    print(f"manifest -> {result.manifest_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
