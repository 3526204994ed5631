"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime or numeric error.
Run artifacts go to ``$FUELS_LOG_DIR`` (default ``./runs``) unless ``--log-dir`` is given.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import ExperimentConfig, dump_config, parse_config
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FuelsError,
    InfeasibleParametersError,
    ParameterError,
    ParseError,
    SchemaError,
)
from .federation import build_clients, evaluate, final_metrics, load_series, run_training
from .model import FILTER, ClientModel
from .report import read_reports, write_cdf_csv, write_loss_curve_csv, write_matrix_csv, write_metrics_csv, write_run_outputs

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
LOG_DIR_ENV = "FUELS_LOG_DIR"

_VALIDATION = (ConfigError, ContractError, DomainError, ParameterError, ParseError, SchemaError, InfeasibleParametersError)

log = logging.getLogger("fuels")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = _parse_value(value)
    for key in ("method", "seed", "T", "n_clients", "h", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _config(args) -> ExperimentConfig:
    return parse_config(args.config, _overrides(args))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file or inline JSON object")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field (repeatable)")
    p.add_argument("--method")
    p.add_argument("--seed", type=int)
    p.add_argument("--T", type=int, help="communication rounds")
    p.add_argument("--n-clients", dest="n_clients", type=int)
    p.add_argument("--h", type=int, help="hidden size per GRU")
    p.add_argument("--workers", type=int)


def _log_base(args) -> Path:
    if getattr(args, "log_dir", None):
        return Path(args.log_dir)
    return Path(os.environ.get(LOG_DIR_ENV, "runs"))


def make_run_dir(base: Path, cfg: ExperimentConfig) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base.mkdir(parents=True, exist_ok=True)
    for k in range(1000):
        suffix = f"-{k}" if k else ""
        path = base / f"{stamp}-{cfg.method}-seed{cfg.seed}{suffix}"
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue
    raise FuelsError(f"could not create a run directory under {base}")


# -- subcommands -----------------------------------------------------------


def cmd_gen_data(args) -> int:
    from .data import generate_synthetic, write_csv

    cfg = _config(args)
    series = generate_synthetic(cfg.n_clients, cfg.clusters, cfg.K, cfg.p, seed=cfg.seed, noise=cfg.data_noise)
    write_csv(series, args.out)
    print(args.out)
    return EXIT_OK


def train_run(cfg: ExperimentConfig, run_dir: Path) -> Path:
    """Train and write every artifact of one run into ``run_dir``."""
    (run_dir / "config.json").write_text(dump_config(cfg) + "\n")
    clients = build_clients(cfg)
    holder = {}

    def hook(report, server):
        holder["server"] = server

    reports = run_training(cfg, clients, log_path=run_dir / "rounds.jsonl", on_round=hook)
    write_run_outputs(reports, run_dir)
    models = run_dir / "models"
    models.mkdir(exist_ok=True)
    for st in clients:
        st.model.save(models / f"client_{st.client_id:03d}.json")
    server = holder.get("server")
    if server is not None:
        write_matrix_csv(server.cache.values, run_dir / "jsd_matrix.csv", "client_a", "client_b", "jsd")
        filters = run_dir / "filters"
        filters.mkdir(exist_ok=True)
        for st in clients:
            write_matrix_csv(st.model.params[FILTER], filters / f"client_{st.client_id:03d}.csv", "anchor", "negative", "weight")
    return run_dir


def cmd_train(args) -> int:
    cfg = _config(args)
    run_dir = make_run_dir(_log_base(args), cfg)
    train_run(cfg, run_dir)
    print(run_dir)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = parse_config(run_dir / "config.json")
    clients = build_clients(cfg, load_series(cfg))
    metrics = {}
    for st in clients:
        path = run_dir / "models" / f"client_{st.client_id:03d}.json"
        if not path.exists():
            raise SchemaError(f"missing checkpoint {path}")
        metrics[st.client_id] = evaluate(ClientModel.load(path).params, st.data.test)
    out = Path(args.out) if args.out else run_dir / "metrics.csv"
    write_metrics_csv(metrics, out)
    print(out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiments import ABLATIONS, run_ablation

    cfg = _config(args)
    variants = args.variants.split(",") if args.variants else list(ABLATIONS)
    unknown = [v for v in variants if v not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation variant(s): {', '.join(unknown)}", field="variants")
    rows = run_ablation(cfg, variants)
    out = Path(args.out) if args.out else make_run_dir(_log_base(args), cfg) / "ablation.csv"
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["variant", "mean_mse", "mean_mae", "uplink_per_client"], lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({**row, "mean_mse": repr(row["mean_mse"]), "mean_mae": repr(row["mean_mae"])})
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    source = Path(args.log)
    log_file = source / "rounds.jsonl" if source.is_dir() else source
    if not log_file.exists():
        raise SchemaError(f"no round log at {log_file}")
    out_dir = Path(args.out_dir) if args.out_dir else log_file.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = read_reports(log_file)
    metrics = final_metrics(reports)
    write_metrics_csv(metrics, out_dir / "metrics.csv")
    write_cdf_csv([m for m, _ in metrics.values()], out_dir / "cdf.csv")
    write_loss_curve_csv(reports, out_dir / "loss_curve.csv")
    print(out_dir)
    return EXIT_OK


def cmd_check_grad(args) -> int:
    from .gradcheck import run_suite

    rep = run_suite(args.seed, instances=args.instances)
    for kind, err in rep.op_errors.items():
        print(f"op {kind:12s} {err:.3e}")
    print(f"objective worst {max(rep.objective_errors):.3e} over {len(rep.objective_errors)} instances")
    print("PASS" if rep.passed else f"FAIL (tolerance {rep.tolerance:g})")
    return EXIT_OK if rep.passed else EXIT_RUNTIME


def cmd_theory(args) -> int:
    from .theory import TheoryParams, theory_lr_bound, theory_round_bound

    p = TheoryParams(
        Lambda=args.Lambda, xi=args.xi, I=args.I, eta=args.eta, L1=args.L1,
        Lh=args.Lh, N=args.N, alpha=args.alpha, rho=args.rho, G=args.G,
    )
    lr_bound = theory_lr_bound(p)
    out = {"lr_bound": lr_bound, "lr_feasible": lr_bound > 0}
    try:
        out["round_bound"] = theory_round_bound(p)
    except InfeasibleParametersError as exc:
        print(json.dumps({**out, "round_bound": None}))
        raise exc
    print(json.dumps(out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fuels", description="Federated spatio-temporal forecasting with prototype contrast.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic multi-client CSV")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one method and write a run directory")
    _add_config_flags(p)
    p.add_argument("--log-dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="re-evaluate saved checkpoints of a run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="FUELS against its single-switch variants")
    _add_config_flags(p)
    p.add_argument("--variants", help="comma-separated subset of variants")
    p.add_argument("--out")
    p.add_argument("--log-dir")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="turn a round log into metrics, CDF and loss-curve CSVs")
    p.add_argument("--log", required=True, help="run directory or rounds.jsonl")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("check-grad", help="finite-difference gradient self-test")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.set_defaults(func=cmd_check_grad)

    p = sub.add_parser("theory", help="evaluate the round-count and learning-rate bounds")
    for name, default in (
        ("Lambda", 1.0), ("xi", 0.1), ("I", 1.0), ("eta", 0.001), ("L1", 1.0),
        ("Lh", 1.0), ("N", 1.0), ("alpha", 1.0), ("rho", 0.0), ("G", 1.0),
    ):
        p.add_argument(f"--{name}", type=float, default=default)
    p.set_defaults(func=cmd_theory)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except _VALIDATION as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FuelsError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
