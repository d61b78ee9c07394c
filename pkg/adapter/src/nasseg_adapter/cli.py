"""Command-line entry points: serve a classifier, or export a fixture store."""

import argparse
import sys
import time

from nasseg.oracle import serve_oracle

from .export import export_fixture
from .specs import REGISTRY
from .wrapper import TorchOracle


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--arch", required=True, choices=sorted(REGISTRY))
    p.add_argument("--size", type=int, default=96, help="input height/width")
    p.add_argument("--max-batch", type=int, default=32)
    p.add_argument("--no-pretrained", action="store_true",
                   help="skip the weight download and use seeded random init")
    p.add_argument("--seed", type=int, default=0,
                   help="weight seed when falling back to random init")


def _build_oracle(args) -> TorchOracle:
    return TorchOracle(
        args.arch,
        input_hw=(args.size, args.size),
        max_batch=args.max_batch,
        pretrained=not args.no_pretrained,
        seed=args.seed,
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="nasseg-adapter", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="serve /v1/meta, /v1/logits, /v1/activations")
    _add_model_args(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(command="serve")

    p = sub.add_parser("export", help="export a file-backend store for a directory of PNGs")
    _add_model_args(p)
    p.add_argument("--images", required=True, help="directory of <image_id>.png inputs")
    p.add_argument("--out", required=True, help="store directory to create")
    p.set_defaults(command="export")

    args = parser.parse_args(argv)
    oracle = _build_oracle(args)

    if args.command == "serve":
        server = serve_oracle(oracle, host=args.host, port=args.port)
        host, port = server.server_address[:2]
        print(f"serving {args.arch} ({oracle.meta.num_classes} classes, "
              f"{args.size}x{args.size}) at http://{host}:{port}", flush=True)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            server.shutdown()
        return 0

    ids = export_fixture(oracle, args.images, args.out)
    print(f"exported {len(ids)} images to {args.out}: {', '.join(ids)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
