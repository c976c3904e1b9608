"""Command-line entry point.

Every subcommand is reproducible from its config file plus ``--seed``:
running it twice with the same arguments writes identical files.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

from spare import analytics
from spare.codec import Token, TokenPayload, embed_token, extract_token, mint_token
from spare.config import (
    apply_overrides,
    fixtures_dir,
    firewall_from_config,
    key_from_config,
    load_config,
    preset_doc,
    scenario_from_config,
    service_from_config,
)
from spare.engine import PRESETS, run_scenario
from spare.exceptions import SpareError
from spare.firewall import DeviceLedger, validate
from spare.regression import MODELS
from spare.workload import gen_benign, gen_malicious_demand, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

DEFAULT_GRID = {"users": [100, 200, 300], "devices": [10, 20, 30], "thresholds": [30, 35, 40]}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _config_doc(args) -> dict:
    if getattr(args, "preset", None) and getattr(args, "config", None):
        raise UsageError("--preset and --config are mutually exclusive")
    if getattr(args, "preset", None):
        doc = preset_doc(args.preset)
    else:
        doc = load_config(args.config)
    return apply_overrides(
        doc,
        seed=getattr(args, "seed", None),
        users=getattr(args, "users", None),
        devices=getattr(args, "devices", None),
        threshold=getattr(args, "threshold", None),
        mode=getattr(args, "mode", None),
        strategy=getattr(args, "strategy", None),
    )


def cmd_gen(args) -> int:
    doc = _config_doc(args)
    population = args.population
    if population is None:
        present = [p for p in ("benign", "malicious") if doc.get(p) is not None]
        if len(present) != 1:
            raise UsageError("config has both populations (or none); pass --population")
        population = present[0]
    if doc.get(population) is None:
        raise UsageError(f"config has no {population} workload")
    scenario = scenario_from_config(doc)
    if population == "benign":
        ds = gen_benign(scenario.benign, scenario.firewall.key)
    else:
        ds = gen_malicious_demand(scenario.malicious)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds.events)} events for {ds.spec.n_users} users to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if not args.preset and not args.config:
        raise UsageError("simulate needs --preset or --config")
    report = run_scenario(scenario_from_config(_config_doc(args)))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        report.write(out / "report.json", out / "records.csv")
        analytics.write_first_errors(report.records, out / "first_errors.csv")
    print(
        f"requests={report.requests} accepted={report.accepted} rejected={report.rejected} "
        f"failed={100 * report.failed_fraction:.2f}%"
    )
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _config_doc(args) if (args.config or args.preset) else preset_doc("table3_malicious")
    if args.seed is not None:
        doc = apply_overrides(doc, seed=args.seed)
    grid = {**DEFAULT_GRID, **(doc.get("sweep") or {})}
    base = scenario_from_config(doc)
    devices = grid["devices"] if base.malicious is not None else [0]
    rows = analytics.sweep_grid(grid["users"], devices, grid["thresholds"], base)
    if args.out:
        analytics.write_grid_rows(rows, args.out)
    else:
        analytics.dump_grid_rows(rows, sys.stdout)
    return EXIT_OK


def cmd_fit(args) -> int:
    if args.input:
        rows = analytics.read_grid_rows(args.input)
    else:
        with resources.as_file(fixtures_dir() / "table3.csv") as p:
            rows = analytics.read_grid_rows(p)
    fit = analytics.fit_poly2(rows) if args.model == "poly2" else analytics.fit_linear(rows)
    print(f"model: {fit.model}")
    print(f"rows: {len(rows)}")
    print(f"r_squared: {fit.r_squared:.4f}")
    for term, coef in zip(fit.terms(), fit.coefficients):
        print(f"  {term:>5}: {coef:+.6g}")
    if args.out:
        analytics.export(fit, args.out, "json")
    return EXIT_OK


def cmd_serve(args) -> int:
    from spare.service import GatewayService

    doc = load_config(args.config)
    if args.threshold is not None or args.mode is not None:
        doc = apply_overrides(doc, threshold=args.threshold, mode=args.mode)
    service = GatewayService(service_from_config(doc))
    print(f"serving on http://{service.cfg.listen_address}", flush=True)
    service.serve_forever()
    return EXIT_OK


def cmd_mint(args) -> int:
    key = key_from_config(load_config(args.config))
    at = int(time.time()) if args.at is None else args.at
    token = mint_token(TokenPayload(at, args.device_id), key)
    print(embed_token(args.base_url, token) if args.base_url else token.ciphertext_b64url)
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = _config_doc(args)
    cfg = firewall_from_config(doc)
    if "?" in args.url or "://" in args.url:
        token, resubmit = extract_token(args.url)
    else:
        token, resubmit = Token(args.url), False
    at = int(time.time()) if args.at is None else args.at
    verdict = validate(token, resubmit, at, DeviceLedger(), cfg)
    print("accept" if verdict.accepted else f"reject {verdict.reason.value}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spare", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_flags(p, preset=True):
        p.add_argument("--config", help="JSON config file")
        if preset:
            p.add_argument("--preset", choices=PRESETS)
        p.add_argument("--seed", type=int)
        p.add_argument("--users", type=int)
        p.add_argument("--devices", type=int)
        p.add_argument("--threshold", type=int)
        p.add_argument("--mode", choices=["timestamp_only", "timestamp_device"])
        p.add_argument("--strategy", choices=["static_url", "single_token", "random_pool", "round_robin"])

    p = sub.add_parser("gen", help="generate a one-day request dataset")
    scenario_flags(p)
    p.add_argument("--population", choices=["benign", "malicious"])
    p.add_argument("--out", required=True, help="dataset CSV path (metadata goes next to it)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("simulate", help="run a scenario or preset")
    scenario_flags(p)
    p.add_argument("--out", help="directory for report.json, records.csv and first_errors.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="users x devices x threshold grid (defaults to the table3 preset)")
    p.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="grid CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("fit", help="fit the failure-rate regression to a grid CSV")
    p.add_argument("--input", help="grid CSV (defaults to the shipped table3 fixture)")
    p.add_argument("--model", choices=sorted(MODELS), default="linear")
    p.add_argument("--out", help="write the fit as JSON")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("serve", help="run the HTTP validation gateway")
    p.add_argument("--config")
    p.add_argument("--threshold", type=int)
    p.add_argument("--mode", choices=["timestamp_only", "timestamp_device"])
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("mint", help="print a token for a device")
    p.add_argument("device_id")
    p.add_argument("--config")
    p.add_argument("--at", type=int, help="unix timestamp to mint at (default: now)")
    p.add_argument("--base-url", help="print a full URL instead of the bare token")
    p.set_defaults(func=cmd_mint)

    p = sub.add_parser("validate", help="judge one URL (or bare token) against a fresh ledger")
    p.add_argument("url")
    p.add_argument("--config")
    p.add_argument("--threshold", type=int)
    p.add_argument("--mode", choices=["timestamp_only", "timestamp_device"])
    p.add_argument("--at", type=int, help="server time as unix timestamp (default: now)")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"spare: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SpareError, OSError, json.JSONDecodeError) as exc:
        print(f"spare: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
