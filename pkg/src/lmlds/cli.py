"""Command-line interface: ``lmlds {gen-synthetic,train,predict,evaluate,benchmark}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Settings may come from a JSON file given with ``--config``;
explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels
from .data_io import (
    SplitSpec,
    generate_synthetic,
    load_model,
    load_series,
    relative_error,
    save_model,
    save_series,
    write_long_format,
)
from .errors import (
    DataFormatError,
    IncompatibleLengthError,
    ModelFormatError,
    NumericalError,
    ReconstructionError,
)
from .gaussian_lds import DEFAULT_MAX_ITERS, DEFAULT_TOL
from .model import (
    ModelFamily,
    fit_baseline_lds,
    infer_last_latents,
    latent_dim_for_budget,
    param_count,
    predict,
    train,
)
from .tensor_core import TransformKind

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

L_VARIANTS = ("dft", "dct", "dwt", "identity")
BASELINE = "lds"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = ""
    config: str | None = None
    data: str | None = None
    manifest: str | None = None
    model: str | None = None
    transform: str = "dft"
    mode: str = "full"
    latent_dim: int | None = None
    param_budget: int | None = None
    train_len: int | None = None
    test_len: int | None = None
    horizon: int | None = None
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    seed: int = 0
    workers: int | None = None
    out: str | None = None
    overwrite: bool = False
    variants: str = "dft,dct,dwt,lds"
    rows: int | None = None
    tubes: int | None = None
    length: int = 300
    rho: float = 0.9
    noise_scale: float = 1.0
    sizes: str = "4x4,8x8"
    name: str = "synthetic"

    def variant_list(self) -> list[str]:
        return [v.strip().lower() for v in self.variants.split(",") if v.strip()]

    def validate(self) -> None:
        errs = []
        cmd = self.command
        needs_data = cmd in ("train", "predict", "evaluate")
        if needs_data:
            if not self.data:
                errs.append("--data is required")
            if not self.manifest:
                errs.append("--manifest is required")
        if cmd == "gen-synthetic":
            if not self.data or not self.manifest:
                errs.append("--data and --manifest name the files to write")
            if not self.rows or not self.tubes:
                errs.append("--rows and --tubes are required")
            if not self.latent_dim:
                errs.append("--latent-dim is required")
            if not 0 < self.rho < 1:
                errs.append("--rho must lie in (0, 1)")
        try:
            kind = TransformKind.parse(self.transform)
            if cmd == "gen-synthetic" and self.tubes:
                kind.check_length(self.tubes)
        except ValueError as exc:
            errs.append(f"--transform: {exc}")
        if self.mode not in ("diagonal", "full"):
            errs.append("--mode must be diagonal or full")
        if cmd in ("train", "evaluate"):
            if self.latent_dim is None and self.param_budget is None:
                errs.append("one of --latent-dim or --param-budget is required")
            if self.latent_dim is not None and self.param_budget is not None:
                errs.append("--latent-dim and --param-budget are mutually exclusive")
            if self.train_len is None:
                errs.append("--train-len is required")
        if self.latent_dim is not None and self.latent_dim < 1:
            errs.append("--latent-dim must be positive")
        if self.param_budget is not None and self.param_budget < 1:
            errs.append("--param-budget must be positive")
        if self.train_len is not None and self.train_len < 2:
            errs.append("--train-len must be at least 2")
        if self.test_len is not None and self.test_len < 1:
            errs.append("--test-len must be positive")
        if cmd == "predict":
            if not self.model:
                errs.append("--model is required")
            if self.horizon is None or self.horizon < 1:
                errs.append("--horizon must be a positive integer")
        if self.max_iters < 1:
            errs.append("--max-iters must be positive")
        if self.workers is not None and self.workers < 1:
            errs.append("--workers must be positive")
        if cmd != "gen-synthetic" and not self.out:
            errs.append("--out is required")
        if cmd in ("evaluate", "benchmark"):
            bad = [v for v in self.variant_list() if v not in L_VARIANTS + (BASELINE,)]
            if bad or not self.variant_list():
                errs.append(f"--variants: unknown {bad}; choose from {L_VARIANTS + (BASELINE,)}")
        if cmd == "benchmark":
            try:
                parse_sizes(self.sizes)
            except ValueError as exc:
                errs.append(f"--sizes: {exc}")
        if errs:
            raise ConfigError("; ".join(errs))

    def echo(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k not in ("config", "overwrite")}


def parse_sizes(text: str) -> list[tuple[int, int]]:
    sizes = []
    for item in text.split(","):
        item = item.strip().lower()
        if not item:
            continue
        i, sep, k = item.partition("x")
        if not sep:
            raise ValueError(f"size {item!r} is not of the form IxK")
        sizes.append((int(i), int(k)))
    if not sizes:
        raise ValueError("empty size list")
    return sizes


def _check_split(cfg: RunConfig, length: int) -> SplitSpec:
    n_test = cfg.test_len if cfg.test_len is not None else length - cfg.train_len
    spec = SplitSpec(cfg.train_len, max(n_test, 0))
    try:
        spec.validate(length)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def _check_new(paths, overwrite):
    if overwrite:
        return
    for p in paths:
        if Path(p).exists():
            raise ConfigError(f"{p} exists; pass --overwrite to replace it")


def _lmlds_latent(cfg: RunConfig, rows: int, tubes: int) -> int:
    if cfg.latent_dim is not None:
        if cfg.latent_dim > rows:
            raise ConfigError(f"--latent-dim {cfg.latent_dim} exceeds the {rows} rows")
        return cfg.latent_dim
    try:
        return latent_dim_for_budget(ModelFamily.L_MLDS, rows, tubes, cfg.param_budget, j_max=rows)
    except ValueError as exc:
        raise ConfigError(f"--param-budget: {exc}") from exc


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sidecar(out: str, suffix: str) -> Path:
    p = Path(out)
    return p.with_name(p.stem + suffix)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_synthetic(cfg: RunConfig) -> int:
    paths = [cfg.manifest, cfg.data] + ([cfg.out] if cfg.out else [])
    _check_new(paths, cfg.overwrite)
    series, truth = generate_synthetic(
        (cfg.rows, cfg.latent_dim, cfg.tubes),
        cfg.transform,
        seed=cfg.seed,
        n_steps=cfg.length,
        rho=cfg.rho,
        noise_scale=cfg.noise_scale,
        name=cfg.name,
    )
    save_series(series, cfg.manifest, cfg.data, overwrite=True)
    if cfg.out:
        save_model(truth, cfg.out, overwrite=True)
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    series = load_series(cfg.manifest, cfg.data)
    split = _check_split(cfg, series.n)
    latent = _lmlds_latent(cfg, series.rows, series.tubes)
    log_path = _sidecar(cfg.out, ".train.json")
    _check_new([cfg.out, log_path], cfg.overwrite)
    train_part = series.head(split.n_train)
    model, traces = train(
        train_part,
        latent,
        cfg.transform,
        cfg.mode,
        seed=cfg.seed,
        max_iters=cfg.max_iters,
        tol=cfg.tol,
        workers=cfg.workers,
    )
    save_model(model, cfg.out, overwrite=True)
    log = {
        "config": {k: v for k, v in cfg.echo().items() if k != "workers"},
        "latent_dim": latent,
        "param_count": param_count(ModelFamily.L_MLDS, series.rows, latent, series.tubes),
        "traces": [t.tolist() for t in traces],
        "em_iterations": [len(t) - 1 for t in traces],
        "monotone": bool(all(np.all(np.diff(t) >= -1e-8) for t in traces)),
    }
    _write_json(log_path, log)
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    _check_new([cfg.out], cfg.overwrite)
    model = load_model(cfg.model)
    series = load_series(cfg.manifest, cfg.data)
    i, _, k = model.dims
    if (series.rows, series.tubes) != (i, k):
        raise DataFormatError(
            f"dataset epochs are {series.rows}x{series.tubes}, model expects {i}x{k}"
        )
    n_train = model.n_train or series.n
    if n_train > series.n:
        raise DataFormatError(f"model was trained on {n_train} epochs, dataset has {series.n}")
    latents = infer_last_latents(model, series.observations[:n_train])
    preds = predict(model, latents, cfg.horizon)
    write_long_format(cfg.out, preds, first_epoch=n_train + 1, overwrite=True)
    return EXIT_OK


def _run_variant(name, cfg, train_part, test_part, latent, baseline_latent):
    rows, tubes = train_part.rows, train_part.tubes
    n_test = test_part.n
    entry = {"status": "ok"}
    try:
        t0 = time.perf_counter()
        if name == BASELINE:
            model, trace = fit_baseline_lds(
                train_part, baseline_latent, cfg.mode, cfg.seed, cfg.max_iters, cfg.tol
            )
            preds = model.predict(n_test) if n_test else np.empty((0, rows, tubes))
            entry["latent_dim"] = baseline_latent
            entry["param_count"] = model.n_parameters()
            entry["em_iterations"] = [len(trace) - 1]
        else:
            model, traces = train(
                train_part,
                latent,
                name,
                cfg.mode,
                seed=cfg.seed,
                max_iters=cfg.max_iters,
                tol=cfg.tol,
                workers=cfg.workers,
            )
            preds = predict(model, horizon=n_test) if n_test else np.empty((0, rows, tubes))
            entry["latent_dim"] = latent
            entry["param_count"] = param_count(ModelFamily.L_MLDS, rows, latent, tubes)
            entry["em_iterations"] = [len(t) - 1 for t in traces]
        entry["train_seconds"] = time.perf_counter() - t0
        errors = [relative_error(preds[h], test_part.observations[h]) for h in range(n_test)]
        entry["errors"] = errors
        entry["mean_error"] = float(np.mean(errors)) if errors else None
    except (NumericalError, ReconstructionError, IncompatibleLengthError, ValueError) as exc:
        entry = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return entry


def cmd_evaluate(cfg: RunConfig) -> int:
    series = load_series(cfg.manifest, cfg.data)
    split = _check_split(cfg, series.n)
    rows, tubes = series.rows, series.tubes
    latent = _lmlds_latent(cfg, rows, tubes)
    json_path = Path(cfg.out).with_suffix(".json")
    csv_path = Path(cfg.out).with_suffix(".csv")
    _check_new([json_path, csv_path], cfg.overwrite)
    train_part, test_part = series.split(split)

    budget = cfg.param_budget
    if budget is None:
        budget = param_count(ModelFamily.L_MLDS, rows, latent, tubes)
    try:
        baseline_latent = latent_dim_for_budget(
            ModelFamily.LDS, rows * tubes, 1, budget, j_max=rows * tubes
        )
    except ValueError as exc:
        raise ConfigError(f"baseline latent dimension: {exc}") from exc

    results = {}
    for name in cfg.variant_list():
        results[name] = _run_variant(name, cfg, train_part, test_part, latent, baseline_latent)

    report = {
        "config": cfg.echo(),
        "seed": cfg.seed,
        "backend": kernels.get_backend(),
        "split": {"n_train": split.n_train, "n_test": split.n_test},
        "param_budget": budget,
        "test_epochs": list(range(split.n_train + 1, split.n_train + split.n_test + 1)),
        "variants": results,
    }
    _write_json(json_path, report)
    with open(csv_path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "epoch", "horizon", "relative_error"])
        for name, entry in results.items():
            for h, err in enumerate(entry.get("errors", []), start=1):
                w.writerow([name, split.n_train + h, h, repr(err)])
    if results and all(e["status"] == "failed" for e in results.values()):
        print("error[numeric]: every variant failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _time_fit(name, train_part, latent, baseline_latent, cfg, workers):
    t0 = time.perf_counter()
    if name == BASELINE:
        fit_baseline_lds(train_part, baseline_latent, cfg.mode, cfg.seed, cfg.max_iters, cfg.tol)
    else:
        train(
            train_part,
            latent,
            name,
            cfg.mode,
            seed=cfg.seed,
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            workers=workers,
        )
    return time.perf_counter() - t0


def cmd_benchmark(cfg: RunConfig) -> int:
    json_path = Path(cfg.out).with_suffix(".json")
    csv_path = Path(cfg.out).with_suffix(".csv")
    _check_new([json_path, csv_path], cfg.overwrite)
    latent = cfg.latent_dim or 2
    workers = cfg.workers or (len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else 1)
    # compile kernels outside the timed region
    warm, _ = generate_synthetic((2, 1, 2), "dft", seed=0, n_steps=8)
    train(warm, 1, "dft", max_iters=2, workers=1)

    rows_out = []
    entries = []
    for rows, tubes in parse_sizes(cfg.sizes):
        size_entry = {"rows": rows, "tubes": tubes, "variants": {}}
        try:
            series, _ = generate_synthetic(
                (rows, min(latent, rows), tubes), "dft", seed=cfg.seed, n_steps=cfg.length, rho=cfg.rho
            )
        except (ValueError, ArithmeticError) as exc:
            size_entry["error"] = str(exc)
            entries.append(size_entry)
            continue
        j = min(latent, rows)
        budget = param_count(ModelFamily.L_MLDS, rows, j, tubes)
        baseline_latent = latent_dim_for_budget(ModelFamily.LDS, rows * tubes, 1, budget)
        for name in cfg.variant_list():
            v = {}
            try:
                v["seconds_1_worker"] = _time_fit(name, series, j, baseline_latent, cfg, 1)
                if name != BASELINE and workers > 1:
                    v[f"seconds_{workers}_workers"] = _time_fit(
                        name, series, j, baseline_latent, cfg, workers
                    )
                v["param_count"] = (
                    param_count(ModelFamily.LDS, rows * tubes, baseline_latent, 1)
                    if name == BASELINE
                    else param_count(ModelFamily.L_MLDS, rows, j, tubes)
                )
                v["status"] = "ok"
            except (NumericalError, IncompatibleLengthError, ValueError) as exc:
                v = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
            size_entry["variants"][name] = v
            for key, val in v.items():
                if key.startswith("seconds_"):
                    rows_out.append([rows, tubes, name, key.split("_")[1], repr(val)])
        entries.append(size_entry)

    report = {
        "config": cfg.echo(),
        "seed": cfg.seed,
        "backend": kernels.get_backend(),
        "workers": workers,
        "sizes": entries,
    }
    _write_json(json_path, report)
    with open(csv_path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rows", "tubes", "variant", "workers", "seconds"])
        w.writerows(rows_out)
    return EXIT_OK


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmlds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", help="JSON file with default settings")
        p.add_argument("--seed", type=int, default=S)
        p.add_argument("--out", default=S)
        p.add_argument("--overwrite", action="store_true", default=S)

    def data(p):
        p.add_argument("--data", default=S, help="long-format data file")
        p.add_argument("--manifest", default=S, help="dataset manifest (JSON)")

    def fitting(p):
        p.add_argument("--transform", default=S, help="dft | dct | dwt[:levels] | identity")
        p.add_argument("--mode", default=S, help="diagonal | full")
        p.add_argument("--latent-dim", type=int, default=S)
        p.add_argument("--param-budget", type=int, default=S)
        p.add_argument("--max-iters", type=int, default=S)
        p.add_argument("--tol", type=float, default=S)
        p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("gen-synthetic", help="sample a dataset from a random ground truth")
    common(p)
    data(p)
    p.add_argument("--transform", default=S)
    p.add_argument("--rows", type=int, default=S)
    p.add_argument("--tubes", type=int, default=S)
    p.add_argument("--latent-dim", type=int, default=S)
    p.add_argument("--length", type=int, default=S)
    p.add_argument("--rho", type=float, default=S)
    p.add_argument("--noise-scale", type=float, default=S)
    p.add_argument("--name", default=S)

    p = sub.add_parser("train", help="fit a model on the first --train-len epochs")
    common(p)
    data(p)
    fitting(p)
    p.add_argument("--train-len", type=int, default=S)

    p = sub.add_parser("predict", help="forecast the epochs following training")
    common(p)
    data(p)
    p.add_argument("--model", default=S)
    p.add_argument("--horizon", type=int, default=S)

    p = sub.add_parser("evaluate", help="compare transforms and the vectorized baseline")
    common(p)
    data(p)
    fitting(p)
    p.add_argument("--train-len", type=int, default=S)
    p.add_argument("--test-len", type=int, default=S)
    p.add_argument("--variants", default=S, help="comma list of dft,dct,dwt,identity,lds")

    p = sub.add_parser("benchmark", help="time training over a size sweep")
    common(p)
    fitting(p)
    p.add_argument("--sizes", default=S, help="comma list of IxK, e.g. 4x4,8x8")
    p.add_argument("--length", type=int, default=S)
    p.add_argument("--rho", type=float, default=S)
    p.add_argument("--variants", default=S)
    return parser


def resolve_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    settings = {}
    if args.get("config"):
        try:
            settings = json.loads(Path(args["config"]).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"--config: {exc}") from exc
        if not isinstance(settings, dict):
            raise ConfigError("--config must hold a JSON object")
        settings = {k.replace("-", "_"): v for k, v in settings.items()}
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(settings) - known)
        if unknown:
            raise ConfigError(f"--config: unknown keys {unknown}")
    settings.update(args)
    cfg = RunConfig(**settings)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
        return COMMANDS[cfg.command](cfg)
    except ConfigError as exc:
        print(f"error[config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, ModelFormatError, FileNotFoundError, IncompatibleLengthError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ReconstructionError) as exc:
        print(f"error[numeric]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
