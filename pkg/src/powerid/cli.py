"""Pipeline front-end: simulate | identify | abpi | train | optimize | crossval | evaluate.

Conventions shared by every subcommand:

  * inputs are named in the config's "paths" section; outputs always
    land in --out under fixed file names, so pointing "paths" into the
    same directory chains the stages with a single config file
  * the SHA-256 of the effective (defaults + file + env + flags) config
    is embedded in every JSON artifact and SVG, and a per-command
    manifest records it alongside per-file content hashes; trace CSVs
    keep their fixed schema, so the manifest alone covers them
  * a given config + seed reproduces every output byte for byte;
    wall-clock timing goes to stdout and run.log only, and run.log is
    the single place timestamps are allowed
  * exit codes: 0 ok, 2 bad config or input, 3 numeric failure,
    4 filesystem trouble; failures emit one JSON line on stderr
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import (
    AMBIENT_K,
    DT_S,
    ThermalModel,
    TraceDataset,
    load_model_json,
    load_trace_csv,
    save_model_json,
    save_trace_csv,
    spectral_radius,
    split_chronological,
)
from .cpinn import (
    NetworkConfig,
    TrainedModel,
    estimate_dataset,
    load_checkpoint,
    make_batch,
    predict_dataset,
    save_checkpoint,
    train,
)
from .errors import (
    ConfigError,
    DimensionMismatch,
    DivergenceDetected,
    LengthMismatch,
    MalformedHeader,
    MissingGroundTruth,
    NonFiniteLoss,
    NonFiniteValue,
    NonMonotonicTime,
    RankDeficient,
    SingularB,
    TooFewSamples,
    UnevaluatedIndividual,
    UnstableModel,
)
from .evaluation import bench_inference, cross_validate, metrics, series_metrics
from .nsga2 import SearchSettings, genome_to_config, hypervolume_2d, run_search
from .thermal import MisspecSpec, identify_blind, identify_supervised, schedule_from_dict, simulate, steady_state
from . import plots

# Reference corner for the reported hypervolume; fixed so numbers are
# comparable across runs rather than scaled to each run's own front.
HV_REF = (10.0, 1.0e6)

_DEFAULTS: dict = {
    "seed": 0,
    "paths": {
        "traces": None,       # raw trace CSV (simulate output, identify/abpi input)
        "model": None,        # thermal model JSON (abpi/train/optimize/crossval input)
        "traces_est": None,   # trace with Pest_ columns; falls back to "traces"
        "checkpoint": None,   # trained network (evaluate input)
        "archive": None,      # optimize archive JSON (evaluate, optional)
        "cv_report": None,    # crossval report JSON (evaluate, optional)
    },
    "simulate": {
        "model": None,        # inline model doc; null -> built-in 2-unit demo
        "schedule": None,     # schedule doc; null -> built-in random walk
        "misspec": None,      # e.g. {"leakage_quad_coeff": 2e-3}
    },
    "identify": {
        "mode": "supervised",
        "iters": 50,
    },
    "train": {
        "hidden_widths": [21],
        "activation": "tanh",
        "dropout_rate": 0.0,
        "weight_decay": 0.0,
        "lambda_phys": 0.1,
        "lambda_guide": 0.1,
        "learning_rate": 0.01,
        "batch_size": 64,
        "max_epochs": 200,
        "patience": 200,
        "train_fraction": 0.8,
    },
    "optimize": {
        "pop_size": 20,
        "generations": 30,
        "budget_epochs": 8,
        "holdout_fraction": 0.25,
        "learning_rate": 0.01,
        "batch_size": 64,
        "p_crossover": 0.9,
        "eta_crossover": 15.0,
        "eta_mutation": 20.0,
        "final_epochs": None,  # null -> train.max_epochs for the final retrain
    },
    "crossval": {
        "k": 10,
    },
    "evaluate": {
        "bench_iters": 1000,   # 0 disables the latency benchmark
        "train_fraction": None,  # null -> the fraction recorded in the checkpoint
    },
}

_ENV_PREFIX = "POWERID_"


# ---- config assembly ----


def _merge(base, override, where: str):
    """Defaults-guided deep merge; unknown keys are config errors."""
    if isinstance(base, dict) and isinstance(override, dict):
        out = dict(base)
        for key, val in override.items():
            if key not in base:
                raise ConfigError(f"unknown config key {where}{key}")
            out[key] = _merge(base[key], val, f"{where}{key}.")
        return out
    if isinstance(base, dict) and base and not isinstance(override, dict):
        raise ConfigError(f"config section {where[:-1]} must be an object")
    return override


def _apply_env(cfg: dict, environ) -> None:
    """POWERID_TRAIN__MAX_EPOCHS=50 sets cfg["train"]["max_epochs"].

    Values are parsed as JSON where possible, kept as strings
    otherwise. Only the leading section name is typo-checked; nested
    tables (schedule docs etc.) are free-form by design.
    """
    for key in sorted(environ):
        if not key.startswith(_ENV_PREFIX):
            continue
        parts = key[len(_ENV_PREFIX):].lower().split("__")
        if parts[0] not in _DEFAULTS:
            raise ConfigError(f"unknown config section in env var {key}")
        raw = environ[key]
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        for part in parts[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[parts[-1]] = val


def effective_config(config_path: str | None, seed_flag: int | None,
                     environ=os.environ) -> dict:
    cfg = _DEFAULTS
    if config_path is not None:
        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(_DEFAULTS, doc, "")
    cfg = json.loads(json.dumps(cfg))  # deep copy, also rejects non-JSON values
    _apply_env(cfg, environ)
    if seed_flag is not None:
        cfg["seed"] = seed_flag
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError(f"seed must be an integer, got {cfg['seed']!r}")
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _json_safe(x):
    """Coerce numpy containers and non-finite floats for strict JSON."""
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.ndarray):
        return _json_safe(x.tolist())
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return int(x)
    return x


# ---- artifact plumbing ----


class _RunLog:
    """Timestamped sidecar; the only output allowed to differ between
    reruns of an identical config."""

    def __init__(self):
        self.lines: list[str] = []

    def say(self, msg: str) -> None:
        ts = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
        self.lines.append(f"{ts} {msg}")

    def flush(self, out_dir: Path) -> None:
        try:
            with open(out_dir / "run.log", "a", encoding="utf-8") as fh:
                for line in self.lines:
                    fh.write(line + "\n")
        except OSError:
            pass  # losing the log must not mask the command's outcome
        self.lines = []


class _Artifacts:
    """Writes command outputs and accumulates their content hashes."""

    def __init__(self, out_dir: Path, cfg_hash: str):
        self.dir = out_dir
        self.cfg_hash = cfg_hash
        self.records: dict[str, str] = {}

    def _register(self, name: str) -> None:
        digest = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
        self.records[name] = digest

    def write_json(self, name: str, payload: dict) -> None:
        doc = {"config_sha256": self.cfg_hash}
        doc.update(payload)
        text = json.dumps(_json_safe(doc), indent=2, sort_keys=True, allow_nan=False)
        (self.dir / name).write_text(text + "\n", encoding="utf-8")
        self._register(name)

    def write_text(self, name: str, text: str) -> None:
        (self.dir / name).write_text(text, encoding="utf-8")
        self._register(name)

    def write_svg(self, name: str, svg: str) -> None:
        self.write_text(name, svg)

    def add_file(self, name: str) -> None:
        """Adopt a file already written under the fixed-name scheme."""
        self._register(name)

    def finish(self, command: str, seed: int) -> None:
        manifest = {
            "command": command,
            "config_sha256": self.cfg_hash,
            "seed": seed,
            "artifacts": dict(sorted(self.records.items())),
        }
        text = json.dumps(manifest, indent=2, sort_keys=True)
        (self.dir / f"manifest_{command}.json").write_text(text + "\n", encoding="utf-8")

    def meta(self) -> str:
        return f"config_sha256={self.cfg_hash}"


def _fmt17(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def _write_csv(art: _Artifacts, name: str, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(cell if isinstance(cell, str) else _fmt17(cell)
                              for cell in row))
    art.write_text(name, "\n".join(lines) + "\n")


# ---- input resolution ----


def _require_input(path: str | None, what: str) -> str:
    if not path:
        raise ConfigError(f"paths.{what} is not set in the config")
    if not os.path.exists(path):
        raise ConfigError(f"{what} file not found: {path}")
    return path


def _load_model(cfg: dict) -> ThermalModel:
    return load_model_json(_require_input(cfg["paths"]["model"], "model"))


def _load_traces(cfg: dict, hint: ThermalModel | None = None,
                 prefer_estimated: bool = False) -> TraceDataset:
    paths = cfg["paths"]
    key = "traces"
    if prefer_estimated and paths.get("traces_est"):
        key = "traces_est"
    return load_trace_csv(_require_input(paths[key], key), model_hint=hint)


def _ensure_estimates(d: TraceDataset, model: ThermalModel, log: _RunLog) -> TraceDataset:
    if any(s.p_est_W is not None for s in d.samples):
        return d
    log.say("trace has no Pest_ columns; filling physics estimates in memory")
    return estimate_dataset(model, d)


def _model_from_doc(doc: dict) -> ThermalModel:
    missing = {"unit_names", "A", "B"} - set(doc)
    if missing:
        raise ConfigError(f"simulate.model is missing keys: {sorted(missing)}")
    return ThermalModel(
        unit_names=tuple(doc["unit_names"]),
        A=np.asarray(doc["A"], dtype=np.float64),
        B=np.asarray(doc["B"], dtype=np.float64),
        ambient_K=float(doc.get("ambient_K", AMBIENT_K)),
        dt_s=float(doc.get("dt_s", DT_S)),
    )


def _demo_model() -> ThermalModel:
    return ThermalModel(
        unit_names=("cpu", "gpu"),
        A=np.array([[0.9, 0.02], [0.02, 0.9]]),
        B=np.array([[1.0, 0.1], [0.05, 0.9]]),
    )


def _net_config(section: dict, n_units: int) -> NetworkConfig:
    return NetworkConfig(
        n_units=n_units,
        hidden_widths=tuple(int(w) for w in section["hidden_widths"]),
        activation=section["activation"],
        dropout_rate=float(section["dropout_rate"]),
        weight_decay=float(section["weight_decay"]),
        lambda_phys=float(section["lambda_phys"]),
        lambda_guide=float(section["lambda_guide"]),
        learning_rate=float(section["learning_rate"]),
        batch_size=int(section["batch_size"]),
        max_epochs=int(section["max_epochs"]),
        patience=int(section["patience"]),
    )


def _holdout_mae(model: TrainedModel, test_ds: TraceDataset) -> dict:
    pred, _, _ = predict_dataset(model, test_ds)
    batch, _ = make_batch(test_ds, model.ambient_K, require_truth=True)
    per_unit = np.mean(np.abs(pred - batch.p_true), axis=0)
    return {
        "per_unit_mae_W": {u: float(m) for u, m in zip(model.unit_names, per_unit)},
        "pooled_mae_W": float(np.mean(np.abs(pred - batch.p_true))),
        "n_pairs": int(batch.p_true.shape[0]),
    }


def _train_to_checkpoint(net_cfg: NetworkConfig, dataset: TraceDataset,
                         init_model: ThermalModel, seed: int, train_fraction: float,
                         art: _Artifacts, name: str, log: _RunLog) -> TrainedModel:
    train_ds, test_ds = split_chronological(dataset, train_fraction)
    log.say(f"training on {len(train_ds)} samples, holding out {len(test_ds)}")
    model = train(net_cfg, init_model, train_ds, seed=seed)
    holdout = _holdout_mae(model, test_ds)
    holdout["train_fraction"] = train_fraction
    model.provenance["holdout"] = holdout
    model.provenance["config_sha256"] = art.cfg_hash
    save_checkpoint(model, art.dir / name)
    art.add_file(name)
    return model


# ---- subcommands ----


def cmd_simulate(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    sec = cfg["simulate"]
    model = _demo_model() if sec["model"] is None else _model_from_doc(sec["model"])
    n = model.n_units
    sched_doc = sec["schedule"]
    if sched_doc is None:
        sched_doc = {
            "kind": "random_walk",
            "duration_samples": 2000,
            "levels": np.linspace(1.0, 1.5, n).tolist(),
            "walk_sd_W": 0.15,
            "p_max_W": 3.0,
        }
    if not isinstance(sched_doc, dict):
        raise ConfigError("simulate.schedule must be an object")
    try:
        schedule = schedule_from_dict(sched_doc)
    except TypeError as e:
        raise ConfigError(f"bad schedule document: {e}") from None
    misspec = None
    if sec["misspec"] is not None:
        doc = sec["misspec"]
        unknown = set(doc) - {"leakage_quad_coeff", "coupling_noise_sd"}
        if unknown:
            raise ConfigError(f"unknown misspec keys: {sorted(unknown)}")
        misspec = MisspecSpec(
            leakage_quad_coeff=float(doc.get("leakage_quad_coeff", 0.0)),
            coupling_noise_sd=float(doc.get("coupling_noise_sd", 0.0)),
        )

    dataset = simulate(model, schedule, misspec=misspec, seed=cfg["seed"])
    save_trace_csv(dataset, art.dir / "traces.csv")
    art.add_file("traces.csv")
    save_model_json(model, art.dir / "model_true.json")
    art.add_file("model_true.json")

    mean_p = np.mean(dataset.p_true_W(), axis=0)
    t_ss = steady_state(model, mean_p)
    ss_ok = bool(np.all(np.isfinite(t_ss)) and model.is_stable)
    log.say(f"simulated {len(dataset)} samples over {n} units")
    print(f"simulate: {len(dataset)} samples, {n} units "
          f"({', '.join(model.unit_names)})")
    print(f"  spectral radius of A: {spectral_radius(model.A):.4f}")
    print(f"  steady-state check: {'ok' if ss_ok else 'FAILED'} "
          f"(T at mean power: {np.array2string(t_ss, precision=2)} K)")
    print(f"  wrote {art.dir / 'traces.csv'} and {art.dir / 'model_true.json'}")


def cmd_identify(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    sec = cfg["identify"]
    if sec["mode"] not in ("supervised", "blind"):
        raise ConfigError(f"identify.mode must be supervised or blind, got {sec['mode']!r}")
    dataset = _load_traces(cfg)
    if sec["mode"] == "supervised":
        model = identify_supervised(dataset)
        report = {
            "mode": "supervised",
            "n_pairs": model.meta.get("n_pairs"),
            "residual_rms_K": model.meta.get("residual_rms_K"),
            "condition_number": model.meta.get("condition_number"),
            "spectral_radius": spectral_radius(model.A),
        }
        print(f"identify: supervised fit over {report['n_pairs']} pairs")
        print(f"  residual rms {report['residual_rms_K']:.3e} K, "
              f"condition number {report['condition_number']:.3e}")
    else:
        result = identify_blind(dataset, iters=int(sec["iters"]))
        model = result.model
        save_trace_csv(result.dataset, art.dir / "traces_blind_est.csv")
        art.add_file("traces_blind_est.csv")
        report = {
            "mode": "blind",
            "iters": int(sec["iters"]),
            "objective_curve": list(result.objectives),
            "final_objective": result.objectives[-1] if result.objectives else None,
            "spectral_radius": spectral_radius(model.A),
        }
        print(f"identify: blind alternating fit, {len(result.objectives)} recorded "
              f"objective values")
        if result.objectives:
            print(f"  objective {result.objectives[0]:.4e} -> {result.objectives[-1]:.4e}")
    save_model_json(model, art.dir / "model_identified.json")
    art.add_file("model_identified.json")
    art.write_json("identify_report.json", report)
    print(f"  wrote {art.dir / 'model_identified.json'}")


def cmd_abpi(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    model = _load_model(cfg)
    dataset = _load_traces(cfg, hint=model)
    est = estimate_dataset(model, dataset)
    save_trace_csv(est, art.dir / "traces_est.csv")
    art.add_file("traces_est.csv")

    report: dict = {"n_samples": len(est), "has_ground_truth": est.has_ground_truth}
    print(f"abpi: physics estimates over {len(est)} samples")
    if est.has_ground_truth:
        batch, curr = make_batch(est, model.ambient_K, require_truth=True)
        rows = metrics(batch.p_est, batch.p_true, est.unit_names)
        pooled = series_metrics(batch.p_est.ravel(), batch.p_true.ravel(), "all_units")
        report["physics_metrics"] = [m.to_dict() for m in rows] + [pooled.to_dict()]
        for m in rows:
            print(f"  {m.component}: MAE {m.mae_W:.4e} W")
        print(f"  all units: MAE {pooled.mae_W:.4e} W")
    art.write_json("abpi_metrics.json", report)
    print(f"  wrote {art.dir / 'traces_est.csv'}")


def cmd_train(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    model = _load_model(cfg)
    dataset = _ensure_estimates(_load_traces(cfg, hint=model, prefer_estimated=True),
                                model, log)
    net_cfg = _net_config(cfg["train"], model.n_units)
    trained = _train_to_checkpoint(net_cfg, dataset, model, cfg["seed"],
                                   float(cfg["train"]["train_fraction"]),
                                   art, "checkpoint.json", log)
    hist = trained.history
    epochs = len(hist["train_total"])
    _write_csv(art, "history.csv",
               ["epoch", "train_total", "train_data", "train_phys", "train_guide",
                "val_total"],
               ([e, hist["train_total"][e], hist["train_data"][e],
                 hist["train_phys"][e], hist["train_guide"][e], hist["val_total"][e]]
                for e in range(epochs)))
    holdout = trained.provenance["holdout"]
    print(f"train: {epochs} epochs, best epoch {hist['best_epoch']}")
    print(f"  final val loss {hist['val_total'][-1]:.6e}")
    for unit, mae in holdout["per_unit_mae_W"].items():
        print(f"  holdout MAE {unit}: {mae:.4e} W")
    print(f"  holdout MAE pooled: {holdout['pooled_mae_W']:.4e} W")
    print(f"  wrote {art.dir / 'checkpoint.json'}")


def cmd_optimize(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    model = _load_model(cfg)
    dataset = _ensure_estimates(_load_traces(cfg, hint=model, prefer_estimated=True),
                                model, log)
    sec = cfg["optimize"]
    settings = SearchSettings(
        budget_epochs=int(sec["budget_epochs"]),
        learning_rate=float(sec["learning_rate"]),
        batch_size=int(sec["batch_size"]),
        holdout_fraction=float(sec["holdout_fraction"]),
        p_crossover=float(sec["p_crossover"]),
        eta_crossover=float(sec["eta_crossover"]),
        eta_mutation=float(sec["eta_mutation"]),
    )
    result = run_search(dataset, model, pop_size=int(sec["pop_size"]),
                        generations=int(sec["generations"]), seed=cfg["seed"],
                        settings=settings, jobs=jobs)

    records = [r for gen in result.archive for r in gen]
    art.write_json("archive.json", {
        "seed": result.seed,
        "settings": dataclasses.asdict(result.settings),
        "hv_ref": list(HV_REF),
        "records": records,
    })
    genome_cols = ["widths", "activation", "dropout_rate", "weight_decay",
                   "lambda_phys", "lambda_guide"]

    def genome_row(doc: dict) -> list:
        return ["|".join(str(w) for w in doc["widths"]), doc["activation"],
                doc["dropout_rate"], doc["weight_decay"],
                doc["lambda_phys"], doc["lambda_guide"]]

    _write_csv(art, "archive.csv",
               ["generation", "index", "f1_mae_W", "f2_macs"] + genome_cols,
               ([r["generation"], r["index"],
                 None if not math.isfinite(r["f1_mae_W"]) else r["f1_mae_W"],
                 None if not math.isfinite(r["f2_macs"]) else r["f2_macs"]]
                + genome_row(r["genome"]) for r in records))

    front = sorted(result.front.individuals, key=lambda i: i.require_objectives())
    front_pts = [i.require_objectives() for i in front]
    hv = hypervolume_2d(front_pts, HV_REF)
    art.write_json("pareto.json", {
        "hypervolume": hv,
        "hv_ref": list(HV_REF),
        "individuals": [{"genome": i.genome.to_dict(),
                         "f1_mae_W": i.objectives[0],
                         "f2_macs": i.objectives[1]} for i in front],
    })
    _write_csv(art, "pareto.csv", ["f1_mae_W", "f2_macs"] + genome_cols,
               ([None if not math.isfinite(i.objectives[0]) else i.objectives[0],
                 None if not math.isfinite(i.objectives[1]) else i.objectives[1]]
                + genome_row(i.genome.to_dict()) for i in front))

    print(f"optimize: {len(result.archive)} generations archived, "
          f"front size {len(front)}, hypervolume {hv:.4f}")
    for i in front[:5]:
        widths = "x".join(str(w) for w in i.genome.widths) or "linear"
        print(f"  f1 {i.objectives[0]:.4e} W, f2 {i.objectives[1]:.0f} MACs "
              f"({widths}, {i.genome.activation})")

    finite = [i for i in front if math.isfinite(i.objectives[0])]
    if not finite:
        log.say("no finite-objective individual on the front; skipping final retrain")
        print("  no finite-objective front member; skipped final retrain")
        return
    pick = min(finite, key=lambda i: i.require_objectives())
    final_epochs = sec["final_epochs"]
    if final_epochs is None:
        final_epochs = cfg["train"]["max_epochs"]
    final_cfg = dataclasses.replace(
        genome_to_config(pick.genome, model.n_units, settings,
                         budget_epochs=int(final_epochs)),
        patience=int(cfg["train"]["patience"]),
    )
    trained = _train_to_checkpoint(final_cfg, dataset, model, cfg["seed"],
                                   float(cfg["train"]["train_fraction"]),
                                   art, "checkpoint_best.json", log)
    holdout = trained.provenance["holdout"]
    print(f"  retrained pick at {final_epochs} epochs: "
          f"holdout MAE pooled {holdout['pooled_mae_W']:.4e} W")
    print(f"  wrote {art.dir / 'checkpoint_best.json'}")


def cmd_crossval(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    model = _load_model(cfg)
    dataset = _ensure_estimates(_load_traces(cfg, hint=model, prefer_estimated=True),
                                model, log)
    net_cfg = _net_config(cfg["train"], model.n_units)
    k = int(cfg["crossval"]["k"])
    report = cross_validate(net_cfg, model, dataset, k=k, seed=cfg["seed"])
    art.write_json("cv_report.json", report.to_dict())
    epochs = len(report.mean_train_curve)
    _write_csv(art, "cv_curves.csv", ["epoch", "mean_train_loss", "mean_val_loss"],
               ([e, report.mean_train_curve[e], report.mean_val_curve[e]]
                for e in range(epochs)))
    print(f"crossval: k={k}, {epochs} averaged epochs")
    for unit in report.unit_names:
        agg = report.aggregate[unit]["mae_W"]
        print(f"  {unit}: MAE {agg['mean']:.4e} +/- {agg['std']:.4e} W "
              f"over {agg['n_folds']} folds")
    print(f"  wrote {art.dir / 'cv_report.json'}")


def cmd_evaluate(cfg: dict, art: _Artifacts, jobs: int, log: _RunLog) -> None:
    paths = cfg["paths"]
    trained = load_checkpoint(_require_input(paths["checkpoint"], "checkpoint"))
    if paths["model"]:
        hint = load_model_json(_require_input(paths["model"], "model"))
    else:
        # the checkpoint's refined matrices stand in as the loader hint
        hint = ThermalModel(unit_names=trained.unit_names, A=trained.A_prime,
                            B=trained.B_prime, ambient_K=trained.ambient_K,
                            dt_s=trained.dt_s, meta={"origin": "checkpoint"})
        log.say("no paths.model; using checkpoint matrices as the trace hint")
    dataset = _ensure_estimates(_load_traces(cfg, hint=hint, prefer_estimated=True),
                                hint, log)

    p_final, p_phys, curr = predict_dataset(trained, dataset)
    times = dataset.times()[curr]
    names = dataset.unit_names
    truth = dataset.p_true_W()[curr] if dataset.has_ground_truth else None

    header = ["time_s"]
    if truth is not None:
        header += [f"truth_{u}" for u in names]
    header += [f"physics_{u}" for u in names] + [f"network_{u}" for u in names]

    def pred_rows():
        for r in range(len(times)):
            row = [times[r]]
            if truth is not None:
                row += list(truth[r])
            row += list(p_phys[r]) + list(p_final[r])
            yield row

    _write_csv(art, "predictions.csv", header, pred_rows())

    report: dict = {"n_pairs": int(len(times)),
                    "checkpoint_best_epoch": trained.history.get("best_epoch")}
    print(f"evaluate: {len(times)} prediction pairs over {len(names)} units")
    if truth is not None:
        net_rows = metrics(p_final, truth, names)
        phys_rows = metrics(p_phys, truth, names)
        net_pooled = series_metrics(p_final.ravel(), truth.ravel(), "all_units")
        phys_pooled = series_metrics(p_phys.ravel(), truth.ravel(), "all_units")
        report["network_metrics"] = [m.to_dict() for m in net_rows] + [net_pooled.to_dict()]
        report["physics_metrics"] = [m.to_dict() for m in phys_rows] + [phys_pooled.to_dict()]
        for nm, pm in zip(net_rows, phys_rows):
            print(f"  {nm.component}: network MAE {nm.mae_W:.4e} W, "
                  f"physics MAE {pm.mae_W:.4e} W")
        print(f"  all units: network MAE {net_pooled.mae_W:.4e} W, "
              f"physics MAE {phys_pooled.mae_W:.4e} W")

    # holdout reproduction: retracing the training-time split on the
    # same trace must land on the checkpointed value exactly
    check = None
    frac = cfg["evaluate"]["train_fraction"]
    recorded = trained.provenance.get("holdout")
    if frac is None and isinstance(recorded, dict):
        frac = recorded.get("train_fraction")
    if frac is not None and truth is not None:
        _, test_ds = split_chronological(dataset, float(frac))
        redo = _holdout_mae(trained, test_ds)
        check = {"train_fraction": float(frac),
                 "recomputed_pooled_mae_W": redo["pooled_mae_W"]}
        if isinstance(recorded, dict) and "pooled_mae_W" in recorded:
            check["checkpoint_pooled_mae_W"] = recorded["pooled_mae_W"]
            check["abs_diff_W"] = abs(redo["pooled_mae_W"] - recorded["pooled_mae_W"])
            print(f"  holdout reproduction: recomputed {redo['pooled_mae_W']:.6e} W, "
                  f"checkpointed {recorded['pooled_mae_W']:.6e} W, "
                  f"diff {check['abs_diff_W']:.3e} W")
    report["holdout_check"] = check
    art.write_json("metrics.json", report)

    series = []
    if truth is not None:
        series += [(f"{u} truth", truth[:, i]) for i, u in enumerate(names)]
    series += [(f"{u} network", p_final[:, i]) for i, u in enumerate(names)]
    art.write_svg("predictions.svg", plots.line_chart(
        times, series, "Per-unit power: truth vs network", "time (s)", "power (W)",
        meta=art.meta()))

    hist = trained.history
    if hist.get("train_total"):
        xs = list(range(len(hist["train_total"])))
        art.write_svg("training_loss.svg", plots.line_chart(
            xs, [("train", hist["train_total"]), ("validation", hist["val_total"])],
            "Training and validation loss", "epoch", "loss", meta=art.meta()))

    if paths["archive"] and os.path.exists(paths["archive"]):
        with open(paths["archive"], "r", encoding="utf-8") as fh:
            archive_doc = json.load(fh)
        pts = [(r["f2_macs"], r["f1_mae_W"]) for r in archive_doc.get("records", [])
               if r.get("f1_mae_W") is not None and r.get("f2_macs") is not None]
        if pts:
            # overall non-dominated subset across every archived generation
            front = [p for p in pts
                     if not any(q[0] <= p[0] and q[1] <= p[1] and q != p for q in pts)]
            rest = [p for p in pts if p not in front]
            sets = []
            if rest:
                sets.append(("archive", [p[0] for p in rest], [p[1] for p in rest]))
            sets.append(("front", [p[0] for p in front], [p[1] for p in front]))
            art.write_svg("pareto_scatter.svg", plots.scatter_chart(
                sets, "Accuracy vs multiply-accumulate cost", "MACs per inference",
                "holdout MAE (W)", logx=True, meta=art.meta()))
            log.say(f"pareto scatter from {paths['archive']}: {len(pts)} points")
    elif paths["archive"]:
        log.say(f"archive not found at {paths['archive']}; skipping pareto scatter")

    if paths["cv_report"] and os.path.exists(paths["cv_report"]):
        with open(paths["cv_report"], "r", encoding="utf-8") as fh:
            cv_doc = json.load(fh)
        curve_t = cv_doc.get("mean_train_curve", [])
        curve_v = cv_doc.get("mean_val_curve", [])
        if curve_t:
            art.write_svg("cv_loss_curves.svg", plots.line_chart(
                list(range(len(curve_t))),
                [("mean train", curve_t), ("mean validation", curve_v)],
                "Cross-validation loss curves", "epoch", "loss", meta=art.meta()))
            log.say(f"cv loss curves from {paths['cv_report']}")
    elif paths["cv_report"]:
        log.say(f"cv report not found at {paths['cv_report']}; skipping loss curves")

    iters = int(cfg["evaluate"]["bench_iters"])
    if iters >= 100:
        bench = bench_inference(trained, n_iters=iters, seed=cfg["seed"])
        # timing is measurement, not derived output: stdout + log only,
        # so artifact bytes stay identical across reruns
        msg = (f"latency cached mean {bench.cached.mean_us:.1f} us "
               f"(p99 {bench.cached.p99_us:.1f}), uncached mean "
               f"{bench.uncached.mean_us:.1f} us over {iters} iters")
        print(f"  {msg}")
        log.say(msg)
    print(f"  wrote {art.dir / 'metrics.json'}")


_COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "abpi": cmd_abpi,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "crossval": cmd_crossval,
    "evaluate": cmd_evaluate,
}

_CONFIG_ERRORS = (ConfigError, MalformedHeader, NonMonotonicTime, NonFiniteValue,
                  DimensionMismatch, TooFewSamples, MissingGroundTruth,
                  LengthMismatch, json.JSONDecodeError)
_NUMERIC_ERRORS = (UnstableModel, SingularB, RankDeficient, DivergenceDetected,
                   NonFiniteLoss, UnevaluatedIndividual, np.linalg.LinAlgError,
                   FloatingPointError, OverflowError, ZeroDivisionError)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="powerid",
        description="Per-unit power estimation from temperature traces: "
                    "thermal simulation, model identification, physics "
                    "inversion, residual-network training, architecture "
                    "search, cross-validation and reporting.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker processes for optimize")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = _RunLog()
    out_dir = Path(args.out)
    code = 0
    failure: BaseException | None = None
    try:
        cfg = effective_config(args.config, args.seed)
        out_dir.mkdir(parents=True, exist_ok=True)
        art = _Artifacts(out_dir, config_hash(cfg))
        log.say(f"{args.command} start, config_sha256={art.cfg_hash}, "
                f"seed={cfg['seed']}, jobs={args.jobs}")
        _COMMANDS[args.command](cfg, art, max(1, args.jobs), log)
        art.finish(args.command, cfg["seed"])
        log.say(f"{args.command} ok")
    except _CONFIG_ERRORS as e:
        code, failure = 2, e
    except _NUMERIC_ERRORS as e:
        code, failure = 3, e
    except OSError as e:
        code, failure = 4, e
    if failure is not None:
        log.say(f"{args.command} failed: {type(failure).__name__}: {failure}")
        print(json.dumps({"command": args.command,
                          "error": type(failure).__name__,
                          "message": str(failure),
                          "exit_code": code}, sort_keys=True), file=sys.stderr)
    if out_dir.is_dir():
        log.flush(out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
