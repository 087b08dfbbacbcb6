"""``incidentlab <command> --config cfg.json``: the pipeline as a CLI.

Exit codes: 0 ok, 2 bad input or config, 3 training/runtime failure.
Every output lands under ``paths.output_dir`` (synth may also write to the
configured incident/zone paths) and is recorded in ``manifest.json``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import boosting, dataset, explain, metrics, stats, synth
from .errors import InputError, TrainingError
from .seeding import rng, thread_cap

DEFAULT_DENSITY_COLUMNS = (
    "Main Category",
    "Primary Vehicle Category",
    "Secondary Vehicle Category",
    "Is Major Incident",
    "Closure Type",
    "Direction",
    "Hour",
)

_CONFIG_KEYS = {
    "paths", "include", "exclude", "preset", "task", "hyperparameters", "tau", "tau_grid", "seed",
    "log_target", "cv_folds", "test_fraction", "aliases", "density_columns", "density_bins",
    "wasserstein_columns", "min_group_size", "sweep_mode", "shap_sample_size", "top_k", "synth",
}


@dataclass
class RunConfig:
    incidents: Path | None = None
    zones: Path | None = None
    output_dir: Path = Path("out")
    include: list[str] = field(default_factory=list)
    exclude: list[str] = field(default_factory=list)
    preset: str = "gbdt_depthwise"
    task: str = "regression"
    hyperparameters: dict = field(default_factory=dict)
    tau: float = 30.0
    tau_grid: list[float] = field(default_factory=metrics.default_tau_grid)
    seed: int = 0
    log_target: bool = False
    cv_folds: int = 0
    test_fraction: float = 0.2
    aliases: dict = field(default_factory=dict)
    density_columns: list[str] = field(default_factory=lambda: list(DEFAULT_DENSITY_COLUMNS))
    density_bins: int = 50
    wasserstein_columns: list[str] = field(default_factory=lambda: ["Main Category"])
    min_group_size: int = 30
    sweep_mode: str = "retrain"
    shap_sample_size: int | None = None
    top_k: int | None = None
    synth: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        unknown = set(d) - _CONFIG_KEYS
        if unknown:
            raise InputError(f"unknown config key(s): {sorted(unknown)}")
        paths = d.get("paths", {})
        bad = set(paths) - {"incidents", "zones", "output_dir"}
        if bad:
            raise InputError(f"unknown paths entr(y/ies): {sorted(bad)}")

        def resolve(p):
            if p is None:
                return None
            p = Path(p)
            return p if p.is_absolute() else base / p

        kw = {k: v for k, v in d.items() if k != "paths"}
        cfg = cls(
            incidents=resolve(paths.get("incidents")),
            zones=resolve(paths.get("zones")),
            output_dir=resolve(paths.get("output_dir", "out")),
            raw=d,
            **kw,
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise InputError("seed must be an integer")
        taus = [float(t) for t in self.tau_grid]
        if not taus or any(b <= a for a, b in zip(taus, taus[1:])):
            raise InputError("tau_grid must be a non-empty strictly increasing list")
        self.tau_grid = taus
        self.tau = float(self.tau)
        if self.sweep_mode not in ("retrain", "threshold"):
            raise InputError(f"sweep_mode must be 'retrain' or 'threshold', got {self.sweep_mode!r}")
        if self.cv_folds not in (0, 1) and self.cv_folds < 2:
            raise InputError("cv_folds must be 0/1 (single split) or >= 2")
        if self.shap_sample_size is not None and self.shap_sample_size < 1:
            raise InputError("shap_sample_size must be positive")
        self.model_spec()

    def model_spec(self, task: str | None = None, tau: float | None = None) -> boosting.ModelSpec:
        hp = dict(self.hyperparameters)
        known = {"n_rounds", "learning_rate", "n_trees", "early_stopping_rounds"}
        top = {k: hp.pop(k) for k in list(hp) if k in known}
        tree = hp.pop("tree", {})
        tree.update(hp)
        spec = boosting.ModelSpec(preset=self.preset, task=task or self.task,
                                  tau=self.tau if tau is None else tau,
                                  log_target=self.log_target, tree=tree, **top)
        spec.tree_params()
        return spec

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(d, dict):
        raise InputError(f"{path}: config must be a JSON object")
    try:
        return RunConfig.from_dict(d, path.parent)
    except TypeError as e:
        raise InputError(f"{path}: {e}") from None


# ---------------------------------------------------------------- outputs

def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"


class Outputs:
    """Atomic writer that remembers what it wrote for the manifest."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.root = cfg.output_dir
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    @contextmanager
    def path(self, target: Path):
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        os.close(fd)
        try:
            yield Path(tmp)
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        self.files.append(target)

    def write_text(self, name: str | Path, text: str) -> Path:
        target = name if isinstance(name, Path) and name.is_absolute() else self.root / name
        with self.path(target) as tmp:
            tmp.write_text(text, encoding="utf-8")
        return target

    def write_json(self, name, obj) -> Path:
        return self.write_text(name, dumps(obj))

    def _rel(self, p: Path) -> str:
        return os.path.relpath(p, self.root).replace(os.sep, "/")

    def finish(self) -> None:
        mpath = self.root / "manifest.json"
        manifest = {"commands": {}}
        if mpath.is_file():
            try:
                manifest = json.loads(mpath.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                pass
        files = {}
        for p in self.files:
            files[self._rel(p)] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest.setdefault("commands", {})[self.command] = {"config_hash": self.cfg.hash(), "files": files}
        with self.path(mpath) as tmp:
            tmp.write_text(dumps(manifest), encoding="utf-8")


def slug(name: str) -> str:
    return re.sub(r"[^0-9A-Za-z]+", "_", name).strip("_").lower()


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------- data

def _need(path: Path | None, what: str) -> Path:
    if path is None:
        raise InputError(f"paths.{what} is not configured")
    if not path.is_file():
        raise InputError(f"{what} file not found: {path}")
    return path


def load_joined(cfg: RunConfig) -> dataset.JoinedList:
    inc_path = _need(cfg.incidents, "incidents")
    zone_path = _need(cfg.zones, "zones")
    incidents = dataset.load_incidents(inc_path, cfg.aliases or None)
    zones = dataset.load_zones(zone_path)
    return dataset.merge(incidents, zones)


def _check_columns(records, names) -> None:
    avail = set(dataset.available_columns(records))
    for name in names:
        if name not in avail:
            raise InputError(f"unknown column {name!r}")


def build_matrix(cfg: RunConfig, records) -> dataset.FeatureMatrix:
    _check_columns(records, list(cfg.include) + list(cfg.exclude))
    return dataset.encode(records, include=cfg.include, exclude=cfg.exclude)


def _fit(spec, X, y, seed, names):
    try:
        return boosting.fit_model(spec, X, y, seed, feature_names=names)
    except InputError:
        raise
    except (ArithmeticError, ValueError, RuntimeError, MemoryError) as e:
        raise TrainingError(f"training failed: {type(e).__name__}: {e}") from e


def model_bundle(model, matrix: dataset.FeatureMatrix, spec: boosting.ModelSpec, cfg: RunConfig) -> dict:
    return {
        "model": model.to_dict(),
        "columns": [c.to_dict() for c in matrix.columns],
        "task": spec.task,
        "tau": spec.tau,
        "preset": spec.preset,
        "seed": cfg.seed,
        "test_fraction": cfg.test_fraction,
    }


def load_bundle(path: Path):
    if not path.is_file():
        raise InputError(f"model file not found: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
        model = boosting.model_from_dict(d["model"])
        columns = [dataset.ColumnMeta.from_dict(c) for c in d["columns"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: not a model file ({e})") from None
    return model, columns, d


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, out: Outputs, args) -> None:
    opts = dict(cfg.synth)
    opts.setdefault("seed", cfg.seed)
    scfg = synth.SynthConfig.from_dict(opts)
    records, zones = synth.generate(scfg)
    inc = cfg.incidents or out.root / "incidents.csv"
    zon = cfg.zones or out.root / "zones.csv"
    with out.path(inc) as tmp:
        synth.write_incidents(records, tmp)
    with out.path(zon) as tmp:
        synth.write_zones(zones, tmp)
    log(f"synth: {len(records)} incidents, {len(zones)} zones")


def cmd_summarize(cfg: RunConfig, out: Outputs, args) -> None:
    records = load_joined(cfg)
    if not records:
        raise InputError("no incidents left after loading")
    columns = [args.column] if args.column else cfg.density_columns
    _check_columns(records, columns)
    durations = np.array([r.incident.duration_minutes for r in records])
    summary: dict[str, Any] = {
        "duration": stats.summarize(durations).to_dict(),
        "join": records.report.to_dict(),
        "by_column": {},
    }
    for col in columns:
        labels = dataset.category_labels(records, col)
        groups: dict[str, list[float]] = {}
        for lab, d in zip(labels, durations):
            groups.setdefault(lab, []).append(d)
        summary["by_column"][col] = {g: stats.summarize(groups[g]).to_dict() for g in stats._label_order(groups)}
        table = stats.density_export(durations, labels, bins=cfg.density_bins)
        with out.path(out.root / f"density_{slug(col)}.csv") as tmp:
            table.to_csv(tmp)
    out.write_json("summary.json", summary)
    log(f"summarize: {len(records)} rows")


def cmd_wasserstein(cfg: RunConfig, out: Outputs, args) -> None:
    records = load_joined(cfg)
    columns = [args.column] if args.column else cfg.wasserstein_columns
    _check_columns(records, columns)
    durations = np.array([r.incident.duration_minutes for r in records])
    for col in columns:
        wm = stats.pairwise_wasserstein(durations, dataset.category_labels(records, col), cfg.min_group_size)
        with out.path(out.root / f"wasserstein_{slug(col)}.csv") as tmp:
            wm.to_csv(tmp)
        if wm.excluded:
            log(f"wasserstein {col}: left out small groups {wm.excluded}")


def _write_confusion(out: Outputs, model, spec, test) -> None:
    if spec.task == "classification":
        truth = metrics.classify_durations(test.target, spec.tau)
        cm = metrics.confusion(truth, model.predict_class(test.rows))
        out.write_json("confusion.json", {"tau": spec.tau, "positive_class": "short-term", **cm.to_dict()})


def _holdout(cfg: RunConfig, matrix):
    sp = dataset.split(matrix, cfg.test_fraction, cfg.seed)
    return matrix.subset(sp.train_idx), matrix.subset(sp.test_idx)


def cmd_train(cfg: RunConfig, out: Outputs, args) -> None:
    records = load_joined(cfg)
    matrix = build_matrix(cfg, records)
    spec = cfg.model_spec()
    train, test = _holdout(cfg, matrix)
    model = _fit(spec, train.rows, train.target, cfg.seed, matrix.column_names)
    target = Path(args.model) if args.model else out.root / "model.json"
    out.write_json(target if target.is_absolute() else Path.cwd() / target, model_bundle(model, matrix, spec, cfg))
    result = {
        "task": spec.task,
        "preset": spec.preset,
        "n_train": len(train),
        "n_test": len(test),
        "test": boosting.evaluate_model(model, spec, test.rows, test.target),
    }
    if spec.task == "regression":
        result["baseline_rmse"] = metrics.rmse(test.target, np.full(len(test), train.target.mean()))
    else:
        result["tau"] = spec.tau
    out.write_json("metrics.json", result)
    _write_confusion(out, model, spec, test)


def cmd_evaluate(cfg: RunConfig, out: Outputs, args) -> None:
    records = load_joined(cfg)
    if cfg.cv_folds >= 2 and not args.model:
        matrix = build_matrix(cfg, records)
        spec = cfg.model_spec()
        try:
            cv = boosting.cross_validate(matrix, spec, cfg.cv_folds, cfg.seed, threads=thread_cap())
        except InputError:
            raise
        except (ArithmeticError, ValueError, RuntimeError, MemoryError) as e:
            raise TrainingError(f"cross-validation failed: {type(e).__name__}: {e}") from e
        out.write_json("cv_metrics.json", cv.to_dict())
        return
    model, columns, bundle = load_bundle(Path(args.model) if args.model else out.root / "model.json")
    _check_columns(records, [c.name for c in columns])
    matrix = dataset.encode(records, columns=columns)
    spec = cfg.model_spec(task=bundle["task"], tau=bundle["tau"])
    _, test = _holdout(cfg, matrix)
    out.write_json("eval_metrics.json", {
        "task": spec.task,
        "n_test": len(test),
        "test": boosting.evaluate_model(model, spec, test.rows, test.target),
    })
    _write_confusion(out, model, spec, test)


def cmd_sweep(cfg: RunConfig, out: Outputs, args) -> None:
    records = load_joined(cfg)
    matrix = build_matrix(cfg, records)
    train, test = _holdout(cfg, matrix)
    if cfg.sweep_mode == "threshold":
        spec = cfg.model_spec(task="regression")
        model = _fit(spec, train.rows, train.target, cfg.seed, matrix.column_names)
        pred = model.predict(test.rows)
        predicted = lambda tau: metrics.classify_durations(pred, tau)  # noqa: E731
    else:
        def predicted(tau):
            spec = cfg.model_spec(task="classification", tau=tau)
            model = _fit(spec, train.rows, train.target, cfg.seed, matrix.column_names)
            return model.predict_class(test.rows)
    rep = metrics.threshold_sweep(test.target, predicted, cfg.tau_grid)
    with out.path(out.root / "sweep.csv") as tmp:
        rep.to_csv(tmp)


def cmd_explain(cfg: RunConfig, out: Outputs, args) -> None:
    records = load_joined(cfg)
    model, columns, bundle = load_bundle(Path(args.model) if args.model else out.root / "model.json")
    avail = set(dataset.available_columns(records))
    for c in columns:
        if c.name not in avail:
            raise InputError(f"model column {c.name!r} is not present in the data")
    matrix = dataset.encode(records, columns=columns)
    if matrix.rows.shape[1] != model.n_features:
        raise InputError(f"model expects {model.n_features} features, data has {matrix.rows.shape[1]}")
    _, test = _holdout(cfg, matrix)
    X = test.rows
    if cfg.shap_sample_size is not None and cfg.shap_sample_size < len(X):
        pick = np.sort(rng(cfg.seed, "shap_sample").choice(len(X), cfg.shap_sample_size, replace=False))
        X = X[pick]
    rep = explain.explain(model, X, matrix.column_names)
    for column, name in (("split_count", "importance_splits.csv"), ("total_gain", "importance_gain.csv"),
                         ("mean_abs_shap", "importance_shap.csv")):
        with out.path(out.root / name) as tmp:
            rep.to_csv(tmp, column, cfg.top_k)


COMMANDS = {
    "synth": cmd_synth,
    "summarize": cmd_summarize,
    "wasserstein": cmd_wasserstein,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="incidentlab", description="Traffic incident duration pipeline.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--column", help="restrict summarize/wasserstein to one column")
    p.add_argument("--model", help="model file (train writes it, evaluate/explain read it)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Outputs(cfg, args.command)
        COMMANDS[args.command](cfg, out, args)
        out.finish()
    except InputError as e:
        log(f"error: {e}")
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as e:
        log(f"error: {e.filename or ''}: {e.strerror or e}")
        return 2
    except TrainingError as e:
        log(f"error: {e}")
        return 3
    except (ArithmeticError, RuntimeError, MemoryError, ValueError) as e:
        log(f"error: {type(e).__name__}: {e}")
        return 3
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
