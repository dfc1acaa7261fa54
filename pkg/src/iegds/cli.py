"""Command line: validate, solve, batch and compare.

Exit codes: 0 success, 2 invalid input or configuration, 3 I/O error,
4 no feasible point found (for batch: no run succeeded), 5 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema

from . import dispatch, gasflow, harness, netmodel

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_IO = 3
EXIT_NO_FEASIBLE = 4
EXIT_SOLVER = 5

STATUS_EXIT = {dispatch.EXACT: EXIT_OK, dispatch.EPS: EXIT_OK, dispatch.NO_FEASIBLE: EXIT_NO_FEASIBLE}

log = logging.getLogger("iegds")


def _err(msg: str) -> None:
    print(f"iegds: {msg}", file=sys.stderr)


def cmd_validate(args) -> int:
    try:
        net = netmodel.load_network(args.file)
    except OSError as exc:
        _err(f"cannot read {args.file}: {exc.strerror or exc}")
        return EXIT_IO
    except netmodel.NetworkError as exc:
        _err(f"{args.file}: {exc}")
        return EXIT_INVALID
    tree = "tree" if netmodel.gas_graph_is_tree(net) else "not a tree"
    print(f"{args.file}: valid ({net.n_agents} buses, {net.n_gas} gas nodes, gas graph {tree}, H={net.H})")
    return EXIT_OK


def _load_config(args) -> harness.RunConfig:
    data = json.loads(Path(args.config).read_text())
    if args.model is not None:
        data["model"] = args.model
    if args.r is not None:
        data["r"] = args.r
    if args.max_outer is not None:
        data.setdefault("algorithm", {})["max_outer"] = args.max_outer
    if getattr(args, "jobs", None) is not None:
        data["jobs"] = args.jobs
    if args.out is not None:
        data["out"] = args.out
    return harness.RunConfig.from_dict(data, Path(args.config).parent)


def _config_or_exit(args):
    try:
        return _load_config(args), None
    except OSError as exc:
        _err(f"cannot read {args.config}: {exc.strerror or exc}")
        return None, EXIT_IO
    except json.JSONDecodeError as exc:
        _err(f"{args.config}: invalid JSON ({exc})")
        return None, EXIT_INVALID
    except (harness.ConfigError, ValueError, TypeError) as exc:
        _err(f"{args.config}: {exc}")
        return None, EXIT_INVALID


def _network_or_exit(cfg):
    try:
        return cfg.load_network(), None
    except OSError as exc:
        _err(f"cannot read network {cfg.network}: {exc.strerror or exc}")
        return None, EXIT_IO
    except (netmodel.NetworkError, ValueError) as exc:
        _err(f"network {cfg.network}: {exc}")
        return None, EXIT_INVALID


def cmd_solve(args) -> int:
    cfg, code = _config_or_exit(args)
    if cfg is None:
        return code
    net, code = _network_or_exit(cfg)
    if net is None:
        return code
    if cfg.model == gasflow.PWA and not netmodel.gas_graph_is_tree(net):
        _err("warning: gas graph is not a spanning tree; exact pressure recovery is unattainable for the PWA model")
    try:
        outcome = dispatch.run_two_stage(net, cfg.model, cfg.r, cfg.algorithm)
    except dispatch.DispatchError as exc:
        _err(f"solver failure: {exc} (after {len(exc.trace)} completed iterations)")
        return EXIT_SOLVER
    except ValueError as exc:
        _err(str(exc))
        return EXIT_INVALID
    out = Path(cfg.out)
    try:
        harness.write_outcome(outcome, out, cfg.include_strategy)
    except OSError as exc:
        _err(f"cannot write to {out}: {exc.strerror or exc}")
        return EXIT_IO
    eps = "not certified" if outcome.eps is None else f"{outcome.eps:.6g}"
    print(f"{outcome.status}: eps={eps} rho={outcome.rho_bar} violation={outcome.violation:.3e} -> {out}")
    return STATUS_EXIT[outcome.status]


def cmd_batch(args) -> int:
    cfg, code = _config_or_exit(args)
    if cfg is None:
        return code
    if not cfg.seeds:
        _err(f"{args.config}: seeds: required for batch")
        return EXIT_INVALID
    _, code = _network_or_exit(cfg)
    if code is not None:
        return code
    try:
        summary = harness.run_batch(cfg, Path(cfg.out))
    except OSError as exc:
        _err(f"batch I/O error: {exc}")
        return EXIT_IO
    n_ok = sum(r["status"] in dispatch.SUCCESS for r in summary.rows)
    print(f"{len(summary.rows)} runs, {n_ok} succeeded (rate {summary.success_rate:.2f}) -> {cfg.out}")
    return EXIT_OK if n_ok else EXIT_NO_FEASIBLE


def cmd_compare(args) -> int:
    docs = []
    for p in args.summaries:
        try:
            docs.append((p, json.loads(Path(p).read_text())))
        except OSError as exc:
            _err(f"cannot read {p}: {exc.strerror or exc}")
            return EXIT_IO
        except json.JSONDecodeError as exc:
            _err(f"{p}: invalid JSON ({exc})")
            return EXIT_INVALID
    try:
        for p, d in docs:
            harness.check(d, "summary")
        table, plot = harness.compare(docs)
    except harness.IncompatibleSummaries as exc:
        _err(str(exc))
        return EXIT_INVALID
    except jsonschema.ValidationError as exc:
        _err(f"invalid summary: {exc.message}")
        return EXIT_INVALID
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(table)
        (out / "plot.json").write_text(json.dumps(plot, indent=1) + "\n")
    sys.stdout.write(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="iegds", description="Economic dispatch game for coupled electrical and gas networks")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a network file")
    v.add_argument("file")
    v.set_defaults(func=cmd_validate)

    for name, func, helptext in (
        ("solve", cmd_solve, "run the two-stage method on one network"),
        ("batch", cmd_batch, "run generated cases for several models"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("-c", "--config", required=True)
        s.add_argument("--model", choices=["misoc", "pwa"])
        s.add_argument("--r", type=int)
        s.add_argument("--max-outer", type=int)
        s.add_argument("--out")
        if name == "batch":
            s.add_argument("--jobs", type=int)
        s.set_defaults(func=func)

    c = sub.add_parser("compare", help="tabulate batch summaries")
    c.add_argument("summaries", nargs="+")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("IEGDS_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
