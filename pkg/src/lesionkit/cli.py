"""Command-line front end.

Each subcommand builds one request for the HTTP service and prints a short
summary of the response.  By default the request runs against an
in-process instance of the app (no server needed, same filesystem); pass
``--server http://host:port`` to talk to a running instance instead.

Exit codes: 0 success, 2 usage error, 3 malformed input file, 4 shape or
configuration violation, 1 anything else.  A ``--config`` JSON file may
supply any flag (underscored keys); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx

EXIT_USAGE = 2
EXIT_BAD_INPUT = 3
EXIT_BAD_CONFIG = 4


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        from starlette.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _call(client: httpx.Client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code == 200:
        return response.json()
    if response.status_code == 400:
        body = response.json()
        code = EXIT_BAD_INPUT if body.get("code") == "malformed_input" else EXIT_BAD_CONFIG
        raise CliError(code, body.get("message", "request failed"))
    if response.status_code == 422:
        raise CliError(EXIT_BAD_CONFIG, f"invalid request: {response.text}")
    raise CliError(1, f"service error {response.status_code}: {response.text}")


def _payload(args: argparse.Namespace, keys: list[str]) -> dict:
    """Flag values with the --config file as a defaults layer underneath."""
    overrides = {}
    if getattr(args, "config", None):
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(EXIT_BAD_INPUT, f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise CliError(EXIT_BAD_INPUT, f"config {args.config} must hold a JSON object")
    payload = {k: v for k, v in overrides.items() if k in keys}
    payload.update({k: getattr(args, k) for k in keys if getattr(args, k) is not None})
    return payload


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--server", help="base URL of a running service (default: in-process)")
    sub.add_argument("--config", help="JSON file supplying defaults for any flag")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lesionkit", description=__doc__.split("\n\n")[0])
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("phantom", help="generate a synthetic PET/CT dataset with ground truth")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--cases", type=int)
    p.add_argument("--shape", type=int, nargs=3, metavar=("Z", "Y", "X"))
    p.add_argument("--n-lesions", dest="n_lesions", type=int)
    p.add_argument("--n-organs", dest="n_organs", type=int)
    p.add_argument("--hot-organ-labels", dest="hot_organ_labels", type=int, nargs="+")
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    _add_common(p)

    p = commands.add_parser("corrupt", help="emit two independently corrupted views of a volume")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="output directory for view1/view2")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-regions", dest="n_regions", type=int)
    p.add_argument("--region-size", dest="region_size_range", type=int, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--fill-range", dest="dropout_fill_range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--keep-mode-prob", dest="keep_mode_prob", type=float)
    _add_common(p)

    p = commands.add_parser("mask-to-boxes", help="turn a mask (or thresholded volume) into detection JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--case-id", dest="case_id")
    p.add_argument("--threshold", type=float, help="treat the input as a volume and threshold it")
    p.add_argument("--channel")
    p.add_argument("--anatomy", help="anatomy mask used with --exclude-labels")
    p.add_argument("--exclude-labels", dest="exclude_labels", type=int, nargs="+")
    p.add_argument("--min-voxels", dest="min_voxels", type=int)
    _add_common(p)

    p = commands.add_parser("fuse", help="stack PET + CT (+ optional anatomy) into one volume")
    p.add_argument("--pet", required=True)
    p.add_argument("--ct", required=True)
    p.add_argument("--anatomy")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = commands.add_parser("detect", help="run model inference on a volume or dataset")
    p.add_argument("--input", required=True, help="fused volume or dataset.json")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoder", choices=["swin", "conv"])
    p.add_argument("--anatomy", choices=["on", "off"], help="use the anatomy channel of a dataset")
    p.add_argument("--min-score", dest="min_score", type=float)
    p.add_argument("--min-size", dest="min_size", type=float)
    p.add_argument("--nms-iou", dest="nms_iou", type=float)
    p.add_argument("--jobs", type=int)
    _add_common(p)

    p = commands.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="detection JSON, dataset.json, or a mask file")
    p.add_argument("--out", required=True)
    p.add_argument("--iou", dest="extra_ious", type=float, nargs="+", help="extra IoU thresholds for the AP curve")
    p.add_argument("--fppi", dest="fppi_points", type=float, nargs="+")
    p.add_argument("--map-step", dest="map_step", type=float)
    p.add_argument("--gt-case-id", dest="gt_case_id")
    p.add_argument("--jobs", type=int)
    _add_common(p)

    p = commands.add_parser("compare", help="side-by-side table of two or more evaluation reports")
    p.add_argument("--reports", required=True, nargs="+")
    p.add_argument("--names", nargs="+")
    p.add_argument("--out", required=True)
    _add_common(p)

    p = commands.add_parser("init-weights", help="write a zero or random NTWS v1 weight file")
    p.add_argument("--out", required=True)
    p.add_argument("--encoder", choices=["swin", "conv"])
    p.add_argument("--shape", dest="image_shape", type=int, nargs=3, metavar=("Z", "Y", "X"))
    p.add_argument("--anatomy", choices=["on", "off"], help="expect a 3-channel input")
    p.add_argument("--zero", action="store_const", const=True, default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--ssl-head", dest="include_ssl_head", action="store_const", const=True, default=None)
    _add_common(p)

    return parser


def _run(args: argparse.Namespace) -> None:
    with _client(args.server) as client:
        if args.command == "phantom":
            payload = _payload(args, ["seed", "cases", "shape", "n_lesions", "n_organs",
                                      "hot_organ_labels", "noise_sigma"])
            payload["out_dir"] = args.out
            body = _call(client, "/phantom", payload)
            print(f"wrote {len(body['cases'])} case(s) under {body['dataset']} "
                  f"(suggested threshold {body['suggested_threshold']:g})")
        elif args.command == "corrupt":
            payload = _payload(args, ["input", "seed", "n_regions", "region_size_range",
                                      "dropout_fill_range", "keep_mode_prob"])
            payload["out_dir"] = args.out
            body = _call(client, "/corrupt", payload)
            print(f"wrote {body['view1']} and {body['view2']}")
        elif args.command == "mask-to-boxes":
            payload = _payload(args, ["input", "out", "case_id", "threshold", "channel",
                                      "anatomy", "exclude_labels", "min_voxels"])
            body = _call(client, "/mask-to-boxes", payload)
            print(f"wrote {body['n_boxes']} box(es) to {body['out']}")
        elif args.command == "fuse":
            payload = _payload(args, ["pet", "ct", "anatomy", "out"])
            body = _call(client, "/fuse", payload)
            print(f"wrote {body['out']} with channels {', '.join(body['channels'])}")
        elif args.command == "detect":
            payload = _payload(args, ["input", "weights", "out", "encoder",
                                      "min_score", "min_size", "nms_iou", "jobs"])
            if args.anatomy is not None:
                payload["anatomy"] = args.anatomy == "on"
            body = _call(client, "/detect", payload)
            print(f"wrote {body['n_detections']} detection(s) over {body['n_cases']} case(s) to {body['out']}")
        elif args.command == "evaluate":
            payload = _payload(args, ["pred", "gt", "out", "gt_case_id", "fppi_points",
                                      "map_step", "extra_ious", "jobs"])
            body = _call(client, "/evaluate", payload)
            print(body["markdown"], end="")
            print(f"wrote {body['out']}")
        elif args.command == "compare":
            payload = _payload(args, ["reports", "names", "out"])
            body = _call(client, "/compare", payload)
            print(body["markdown"], end="")
            print(f"wrote {body['out']}")
        elif args.command == "init-weights":
            payload = _payload(args, ["out", "encoder", "image_shape", "zero", "seed", "include_ssl_head"])
            if args.anatomy is not None:
                payload["anatomy"] = args.anatomy == "on"
            body = _call(client, "/weights/init", payload)
            print(f"wrote {body['n_tensors']} tensor(s) to {body['out']}")
        else:  # pragma: no cover - argparse enforces the choices
            raise CliError(EXIT_USAGE, f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        _run(args)
    except CliError as exc:
        print(f"lesionkit {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except httpx.HTTPError as exc:
        print(f"lesionkit {args.command}: cannot reach service: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
