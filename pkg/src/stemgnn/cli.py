"""Command-line entry point.

Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import datasets, evaluation, gradcheck
from .errors import ConfigurationError, DataError, DimensionError, DomainError, NumericError
from .model import VARIANTS, NetworkParams
from .persistence import (RunConfig, encode_value, load_checkpoint, load_train_state,
                          save_checkpoint, save_train_state)
from .training import Dataset, TrainConfig, log_csv, prepare, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise UsageError(message)


# --------------------------------------------------------------------------
# config assembly


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value run config file")
    p.add_argument("--dataset", help="series CSV (header of node names, one row per timestamp)")
    p.add_argument("--adjacency", help="predefined adjacency CSV")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--variant", choices=list(VARIANTS), help="ablation variant label")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def _run_config(args) -> RunConfig:
    raw: dict[str, str] = {}
    if args.config:
        base = RunConfig.load(args.config)
        raw.update({k: encode_value(v) for k, v in base.items()})
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        raw[key.strip()] = value.strip()
    for key, attr in (("dataset", "dataset"), ("adjacency", "adjacency"), ("out_dir", "out"),
                      ("seed", "seed"), ("epochs", "epochs")):
        value = getattr(args, attr, None)
        if value is not None:
            raw[key] = str(value)
    if getattr(args, "variant", None):
        for f in dataclasses.fields(VARIANTS[args.variant]):
            raw[f.name] = str(getattr(VARIANTS[args.variant], f.name)).lower()
    return RunConfig.from_mapping(raw)


def _load_data(rc: RunConfig) -> tuple[Dataset, np.ndarray | None]:
    if not rc.dataset:
        raise ConfigurationError("no dataset given (--dataset or 'dataset' in the config)")
    dataset = datasets.load_csv(rc.dataset)
    adj = datasets.load_adjacency(rc.adjacency, dataset.n_nodes) if rc.adjacency else None
    return dataset, adj


def _with_model(config: TrainConfig, params: NetworkParams) -> TrainConfig:
    """Training config whose model dimensions follow the checkpoint."""
    c = params.config
    return dataclasses.replace(config, window=c.window, horizon=c.horizon, channels=c.channels,
                               basis=c.basis, attn_dim=c.attn_dim, hidden_dim=c.hidden_dim,
                               kernel_size=c.kernel_size, tied_gate=c.tied_gate)


def _checkpoint(path: str, dataset: Dataset) -> NetworkParams:
    params = load_checkpoint(path)
    if params.config.n_nodes != dataset.n_nodes:
        raise DataError(f"checkpoint has {params.config.n_nodes} nodes, "
                        f"dataset has {dataset.n_nodes}")
    return params


def _out_dir(rc: RunConfig) -> Path:
    out = Path(rc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)
        print(f"wrote {path}")


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    kw = {}
    if args.noise is not None:
        kw["noise"] = args.noise
    series, adj = datasets.write_synth(args.kind, args.nodes, args.length, args.seed, args.out, **kw)
    print(f"wrote {series}\nwrote {adj}")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = _run_config(args)
    dataset, adj = _load_data(rc)
    resume = load_train_state(args.resume) if args.resume else None
    result = train(dataset, rc.train, adj, resume=resume, until=args.until)
    out = _out_dir(rc)
    rc.save(out / "run.cfg")
    save_checkpoint(result.params, out / "checkpoint.txt")
    save_train_state(result.state, out / "state.txt")
    (out / "log.csv").write_text(log_csv(result.log))
    last = result.log[-1] if result.log else None
    if last is not None:
        print(f"epochs {len(result.log)}, best epoch {result.best_epoch}, "
              f"final train loss {last.train_loss:.6g}")
    print(f"wrote {out / 'checkpoint.txt'}, {out / 'state.txt'}, {out / 'log.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    rc = _run_config(args)
    dataset, adj = _load_data(rc)
    params = _checkpoint(args.checkpoint, dataset)
    config = _with_model(rc.train, params)
    horizons = args.horizon or list(rc.eval_horizons)
    summary = {}
    reports = []
    for H in horizons:
        rep = evaluation.evaluate(params, dataset, config, H, adj, args.split, config.freeze_graph)
        base = evaluation.evaluate_baselines(dataset, config, H, args.split)
        rep.extra["baselines"] = {k: {"mae": b.mae, "mape": b.mape, "rmse": b.rmse}
                                  for k, b in base.items()}
        summary[str(H)] = rep.summary()
        reports.append(rep)
        print(f"H={H}: MAE {rep.mae:.6g}  MAPE {rep.mape:.4g}%  RMSE {rep.rmse:.6g}  "
              f"(repeat-last MAE {base['repeat-last'].mae:.6g}, ma3 MAE {base['ma3'].mae:.6g})")
    summary["mean_over_horizons"] = {m: float(np.mean([getattr(r, m) for r in reports]))
                                     for m in ("mae", "mape", "rmse")}
    out = _out_dir(rc)
    _write(out / "report.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _write(out / "predictions.csv", reports[-1].predictions_csv(dataset.node_names))
    return EXIT_OK


def cmd_forecast(args) -> int:
    rc = _run_config(args)
    dataset, adj = _load_data(rc)
    params = _checkpoint(args.checkpoint, dataset)
    config = _with_model(rc.train, params)
    data = prepare(dataset, config)
    K = config.window
    if dataset.length < K:
        raise DataError(f"series has {dataset.length} timestamps, need at least K={K}")
    window = data.normalized[:, -K:]
    pred = evaluation.rolling_forecast(params, window, args.horizon, ablation=config.ablation,
                                       adjacency=adj, freeze_graph=config.freeze_graph)
    values = data.stats.invert(pred)   # (N, H)
    lines = ["step," + ",".join(dataset.node_names)]
    for h in range(args.horizon):
        lines.append(f"{h + 1}," + ",".join(f"{v:.17g}" for v in values[:, h]))
    _write(Path(args.output) if args.output else None, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    dataset, adj = _load_data(rc)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    H = args.horizon or rc.eval_horizons[0]
    table = evaluation.run_ablations(dataset, rc.train, adj, seeds=seeds, H=H)
    out = _out_dir(rc)
    _write(out / "ablation.csv", table.to_csv())
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = gradcheck.run_gradcheck(seed=args.seed, max_coords=args.coords)
    print("\n".join(report.lines()))
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_export_graph(args) -> int:
    rc = _run_config(args)
    dataset, _ = _load_data(rc)
    params = _checkpoint(args.checkpoint, dataset)
    W = evaluation.export_adjacency(params, dataset, _with_model(rc.train, params))
    _write(_out_dir(rc) / "learned_adjacency.csv", evaluation.adjacency_csv(W, dataset.node_names))
    return EXIT_OK


def cmd_export_spectral(args) -> int:
    rc = _run_config(args)
    dataset, adj = _load_data(rc)
    params = _checkpoint(args.checkpoint, dataset)
    names, table = evaluation.export_spectral_components(
        params, dataset, _with_model(rc.train, params), args.k,
        adjacency=adj if args.use_adjacency else None, largest=not args.smallest)
    path = _out_dir(rc) / "spectral_components.csv"
    datasets.write_csv(path, ["t"] + names,
                       np.column_stack([np.arange(len(table)), table]))
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stemgnn", description="Spectral-temporal graph forecasting toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic dataset and its true adjacency")
    p.add_argument("--kind", default="graph-diffusion-sines", choices=datasets.SYNTH_KINDS)
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float)
    p.add_argument("--out", required=True, help="series CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and write checkpoint, resumable state and log")
    _add_run_options(p)
    p.add_argument("--resume", help="state file from an earlier train run")
    p.add_argument("--until", type=int, help="stop after this many epochs in total")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rolling evaluation with baselines")
    _add_run_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--horizon", type=int, action="append", help="repeatable; default from config")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="forecast past the end of the series")
    _add_run_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--output", help="CSV path (default stdout)")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("ablate", help="train every ablation variant over several seeds")
    _add_run_options(p)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--horizon", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference audit of a tiny model")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--coords", type=int, help="entries probed per tensor (default all)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-graph", help="mean learned adjacency over training windows")
    _add_run_options(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("export-spectral", help="GFT components and their cell outputs")
    _add_run_options(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--smallest", action="store_true", help="take the smallest eigenvalues")
    p.add_argument("--use-adjacency", action="store_true",
                   help="basis from the --adjacency file instead of the learned graph")
    p.set_defaults(func=cmd_export_spectral)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        parser.print_usage(sys.stderr)
        print(f"stemgnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, DomainError, FileNotFoundError) as exc:
        print(f"stemgnn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"stemgnn: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
