"""Command-line entry points: serve the HTTP facade or run benchmarks."""

from __future__ import annotations

import argparse
import json
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scenestage",
        description="Staged image generation from 3D room layouts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--root", default=None,
                       help="session store directory (default: fresh temp dir)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)

    ev = sub.add_parser("eval", help="layout sampling and benchmarks")
    esub = ev.add_subparsers(dest="eval_command", required=True)

    sample = esub.add_parser("sample", help="print one sampled layout as JSON")
    sample.add_argument("--seed", type=int, required=True)
    sample.add_argument("--resolution", type=int, default=128)

    run = esub.add_parser("run", help="run the detector benchmark")
    run.add_argument("--layouts", type=int, required=True,
                     help="number of sampled layouts")
    run.add_argument("--seeds", type=int, required=True,
                     help="generation seeds per layout")
    run.add_argument("--backend", default="toy",
                     help="'toy' or the URL of an external denoiser backend")
    run.add_argument("--detector", default="mock",
                     help="'mock' or the URL of an external detector")
    run.add_argument("--out", required=True, help="report JSON path")
    run.add_argument("--resolution", type=int, default=128)
    run.add_argument("--timesteps", type=int, default=20)
    run.add_argument("--no-consistency", action="store_true",
                     help="skip the translation-consistency probe")
    return parser


def _resolve_backend(spec: str):
    if spec == "toy":
        return "toy"
    from .service import ExternalModel

    return ExternalModel(spec)


def _resolve_detector(spec: str):
    if spec == "mock":
        return "mock"
    from .evaluation import HttpDetector

    return HttpDetector(spec)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        from .service import serve

        serve(args.root, host=args.host, port=args.port)
        return 0

    if args.eval_command == "sample":
        from .evaluation import sample_layout

        layout = sample_layout(args.seed, resolution=args.resolution)
        print(json.dumps(layout.to_dict(), indent=2))
        return 0

    from .evaluation import report_table, run_benchmark

    report = run_benchmark(
        args.layouts,
        args.seeds,
        backend=_resolve_backend(args.backend),
        detector=_resolve_detector(args.detector),
        resolution=args.resolution,
        timesteps=args.timesteps,
        include_consistency=not args.no_consistency,
    )
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    print(report_table(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
