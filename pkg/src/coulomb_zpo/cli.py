"""Command-line client of the compute service.

Every subcommand builds a request model and posts it to the service: by
default against an in-process ASGI transport (no network, deterministic),
or against a remote instance given --server.  `serve` runs the service
under uvicorn.

Outputs are JSON documents (stdout or --out directory) plus CSV files for
tabular payloads.  Exit code 0 on success, 2 on any failure or failed
sweep cell.
"""

from __future__ import annotations

import argparse
import json
import pathlib
import sys

import httpx


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=3600.0)
    # in-process ASGI transport: no sockets, deterministic, same service code
    from starlette.testclient import TestClient

    from .service import app

    return TestClient(app)


def _density_spec(args) -> dict:
    spec = {"kind": args.density_kind, "p": args.p, "box": args.box}
    if args.density_path:
        spec["kind"] = "tabulated"
        spec["path"] = args.density_path
    return spec


def _emit(payload: dict, args, csv_parts: dict[str, str] | None = None) -> None:
    if args.out:
        out = pathlib.Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{args.command}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        for name, text in (csv_parts or {}).items():
            (out / name).write_text(text, encoding="utf-8")
        print(f"wrote {args.command} outputs to {out}")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))


def _post(args, path: str, body: dict):
    with _client(args.server) as client:
        resp = client.post(path, json=body)
    if resp.status_code != 200:
        print(f"error {resp.status_code}: {resp.text}", file=sys.stderr)
        raise SystemExit(2)
    return resp.json()


def _parse_overrides(pairs: list[str]) -> dict[str, float]:
    out = {}
    for pair in pairs or []:
        key, _, val = pair.partition("=")
        if not val:
            raise SystemExit(f"override must be key=value, got {pair!r}")
        out[key] = float(val)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coulomb-zpo",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--server", default=None,
                        help="base URL of a running service (default: in-process)")
    parser.add_argument("--out", default=None, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_density_args(p):
        p.add_argument("--density-kind", default="power_tail",
                       choices=["power_tail", "tabulated"])
        p.add_argument("--p", type=float, default=2.0)
        p.add_argument("--box", type=float, default=None)
        p.add_argument("--density-path", default=None)

    p = sub.add_parser("describe-density", help="density summary and checks")
    add_density_args(p)
    p.add_argument("--probes", type=float, nargs="*", default=[0.0, 1.0, 2.0])

    p = sub.add_parser("ot", help="exact Coulomb OT layer")
    add_density_args(p)
    p.add_argument("--H", type=float, default=4.0)
    p.add_argument("--lattice-n", type=int, default=200)

    p = sub.add_parser("validate-params", help="schedule ordering table")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--H", type=float, default=4.0)
    p.add_argument("--override", action="append", default=[],
                   metavar="K=V", help="schedule multiplier, repeatable")

    p = sub.add_parser("recover", help="recovery construction at one eps")
    add_density_args(p)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--H", type=float, default=4.0)
    p.add_argument("--grid-n", type=int, default=512)
    p.add_argument("--grid-halfwidth", type=float, default=None)
    p.add_argument("--override", action="append", default=[], metavar="K=V")
    p.add_argument("--dump-fields", action="store_true")
    p.add_argument("--dump-remainder", action="store_true")

    p = sub.add_parser("oracle", help="variational oracles")
    add_density_args(p)
    p.add_argument("--mode", choices=["ground", "constrained", "delta"],
                   required=True)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--grid-n", type=int, default=256)
    p.add_argument("--domain-halfwidth", type=float, default=3.0)
    p.add_argument("--d2v-diag", type=float, nargs=2, default=[1.0, 0.0])
    p.add_argument("--eps-sequence", type=float, nargs="*",
                   default=[1e-3, 1e-4, 1e-5])

    p = sub.add_parser("sweep", help="(H, eps) sweep from a JSON config")
    p.add_argument("--config", required=True, help="path to a RunConfig JSON")

    p = sub.add_parser("serve", help="run the service under uvicorn")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8711)

    args = parser.parse_args(argv)

    if args.command == "serve":
        import uvicorn

        uvicorn.run("coulomb_zpo.service:app", host=args.host, port=args.port)
        return 0

    if args.command == "describe-density":
        payload = _post(args, "/density/describe",
                        {"density": _density_spec(args), "probes": args.probes})
        _emit(payload, args)
        return 0

    if args.command == "ot":
        payload = _post(args, "/ot", {"density": _density_spec(args),
                                      "H": args.H, "lattice_n": args.lattice_n})
        csv_text = payload.pop("lattice_csv")
        _emit(payload, args, {"ot_lattice.csv": csv_text})
        return 0

    if args.command == "validate-params":
        payload = _post(args, "/validate-params",
                        {"eps": args.eps, "H": args.H,
                         "overrides": _parse_overrides(args.override)})
        _emit(payload, args)
        return 0

    if args.command == "recover":
        payload = _post(args, "/recover", {
            "density": _density_spec(args), "H": args.H, "eps": args.eps,
            "grid_n": args.grid_n, "grid_halfwidth": args.grid_halfwidth,
            "overrides": _parse_overrides(args.override),
            "dump_fields": args.dump_fields,
            "dump_remainder": args.dump_remainder,
        })
        csv_parts = {}
        field_csv = payload.pop("psi_sq_csv", None)
        if field_csv:
            csv_parts["psi_sq.csv"] = field_csv
        rem_csv = payload.pop("remainder_csv", None)
        if rem_csv:
            csv_parts.update(rem_csv)
        _emit(payload, args, csv_parts)
        return 0

    if args.command == "oracle":
        payload = _post(args, "/oracle", {
            "mode": args.mode, "density": _density_spec(args), "eps": args.eps,
            "grid_n": args.grid_n, "domain_halfwidth": args.domain_halfwidth,
            "d2v_diag": args.d2v_diag, "eps_sequence": args.eps_sequence,
        })
        _emit(payload, args)
        return 0

    if args.command == "sweep":
        cfg = json.loads(pathlib.Path(args.config).read_text(encoding="utf-8"))
        payload = _post(args, "/sweep", cfg)
        csv_text = payload.pop("csv")
        _emit(payload, args, {"sweep.csv": csv_text})
        return 0 if payload.get("exit_ok") else 2

    raise SystemExit(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
