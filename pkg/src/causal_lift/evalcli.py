"""Experiment orchestration, scoring, and the command-line interface.

``run_experiment`` executes seeded trials: simulate ground truth for a
training and a disjoint validation signal, build one dataset per method,
fit the lifted linear model, roll it out over the validation inputs from
the measured initial lifted vector, and score the sum of squared error
over the original state components.  Failed trials (divergence anywhere in
the pipeline) count as +inf SSE and are reported separately instead of
aborting the batch.  Everything is deterministic given the config.

CLI::

    causal-lift analyze <model> [--json]
    causal-lift simulate <model> --signal square:amplitude=1,period=2 \
        --t-final 10 --dt 0.01 --out traj.csv
    causal-lift run <config.toml> [--seed N] [--trials N] [--out DIR]
        [--method NAME ...] [--workers N]

Exit codes: 0 success, 2 configuration error, 3 batch finished with failures.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import datetime
import json
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .causality import (
    apply_al2,
    apply_il2,
    assign_causality,
    classify_observables,
    default_augmentation,
    describe_plan,
    plan_summary,
    AugmentationParams,
)
from .errors import CausalLiftError, ConfigError, SchemaMismatchError
from .lifting import (
    Basis,
    NoiseSpec,
    augmented_measurement_view,
    build_dataset,
    fit_feedthrough,
    raw_matrix,
)
from .netmodel import parse_model
from .simulate import (
    InputSignal,
    Trajectory,
    derive_ode,
    export_trajectory_csv,
    generate_signal,
    integrate,
    refine_dt,
)
from .sysid import Prediction, fit_ols, fit_tls, rollout
from . import models as _builtin_models

METHOD_NAMES = ("dfl-filtered", "ksos", "omq", "al2", "il2")


# --- scoring -----------------------------------------------------------------------


def sse(pred: Prediction, truth: Trajectory, state_labels=None) -> float:
    """Sum over time and original state components of squared prediction error.

    Lifted and auxiliary components are excluded; the grids must agree.
    """
    if pred.times.shape != truth.times.shape or abs(pred.times[-1] - truth.times[-1]) > 1e-9:
        raise SchemaMismatchError("prediction and truth grids differ")
    labels = tuple(state_labels) if state_labels else truth.state_labels
    total = 0.0
    for label in labels:
        err = pred.column(label) - truth.X[:, truth.state_labels.index(label)]
        total += float(np.dot(err, err))
    return total


# --- configuration ------------------------------------------------------------------


@dataclass(frozen=True)
class MethodSpec:
    name: str
    basis: str = "monomial"  # ksos/omq basis family: 'monomial' | 'fourier'
    degree: int = 8
    resistor: str | None = None  # al2 target; default: first anticausal
    value: float | None = None  # al2 element size; default: breakpoint heuristic
    data: str = "measured"  # al2 data source: 'measured' | 'augmented'
    fit: str | None = None  # per-method fit override

    def __post_init__(self):
        if self.name not in METHOD_NAMES:
            raise ConfigError(f"unknown method {self.name!r}")
        if self.basis not in ("monomial", "fourier"):
            raise ConfigError(f"unknown basis family {self.basis!r}")
        if self.data not in ("measured", "augmented"):
            raise ConfigError(f"unknown al2 data mode {self.data!r}")

    @property
    def key(self):
        if self.name in ("ksos", "omq"):
            return f"{self.name}-{self.basis}-{self.degree}"
        return self.name


@dataclass(frozen=True)
class ExperimentConfig:
    model: str  # builtin name or file path
    model_text: str
    methods: tuple
    signal: dict
    name: str = "experiment"
    laws: dict = field(default_factory=dict)
    trials: int = 1
    seeds: tuple = (0,)
    dt: float = 1e-2
    t_train: float = 10.0
    t_val: float = 10.0
    train_trajectories: int = 1
    noise_sigma: float = 0.0
    noise_mode: str = "measured"
    noise_on: str = "both"  # 'none' | 'train' | 'validation' | 'both'
    x0_perturb: float = 0.2
    ridge: float = 1e-10
    fit: str = "ols"
    out: str | None = None

    def __post_init__(self):
        if not self.methods:
            raise ConfigError("config needs at least one method")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if len(self.seeds) != self.trials:
            raise ConfigError("need exactly one seed per trial")
        if self.fit not in ("ols", "tls"):
            raise ConfigError(f"unknown fit method {self.fit!r}")
        if self.noise_on not in ("none", "train", "validation", "both"):
            raise ConfigError(f"bad noise_on {self.noise_on!r}")
        keys = [m.key for m in self.methods]
        if len(set(keys)) != len(keys):
            raise ConfigError(f"duplicate method keys: {keys}")


def resolve_model_text(name_or_path: str) -> str:
    path = Path(name_or_path)
    if path.exists():
        return path.read_text(encoding="utf-8")
    try:
        return _builtin_models.builtin_model_text(name_or_path)
    except FileNotFoundError:
        raise ConfigError(
            f"model {name_or_path!r} is neither a file nor a builtin "
            f"({', '.join(_builtin_models.builtin_model_names())})"
        ) from None


def load_config(path, overrides=None) -> ExperimentConfig:
    """Parse a TOML experiment config; CLI overrides may replace seed/trials/
    out/methods."""
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path!r} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path!r}: {exc}") from exc
    return config_from_dict(raw, overrides=overrides)


def config_from_dict(raw: dict, overrides=None) -> ExperimentConfig:
    overrides = overrides or {}
    exp = dict(raw.get("experiment", {}))
    signal = dict(raw.get("signal", {}))
    noise = dict(raw.get("noise", {}))
    laws = {k: dict(v) for k, v in raw.get("laws", {}).items()}
    methods_raw = raw.get("methods", [])
    if "methods" in overrides:
        methods_raw = [m for m in methods_raw if MethodSpec(**m).key in overrides["methods"]]
        missing = set(overrides["methods"]) - {MethodSpec(**m).key for m in methods_raw}
        if missing:
            raise ConfigError(f"--method {sorted(missing)} not present in config")
    try:
        methods = tuple(MethodSpec(**m) for m in methods_raw)
    except TypeError as exc:
        raise ConfigError(f"bad method spec: {exc}") from exc

    if "trials" in overrides:
        exp["trials"] = overrides["trials"]
    if "seed" in overrides:
        exp["seed"] = overrides["seed"]
        exp.pop("seeds", None)
    if "out" in overrides:
        exp["out"] = overrides["out"]

    model = exp.get("model")
    if not model:
        raise ConfigError("config [experiment] needs model = <name or path>")
    trials = int(exp.get("trials", 1))
    if "seeds" in exp:
        seeds = tuple(int(s) for s in exp["seeds"])
        trials = len(seeds) if "trials" not in exp else trials
    else:
        base = int(exp.get("seed", 0))
        seeds = tuple(base + i for i in range(trials))
    if not signal:
        raise ConfigError("config needs a [signal] section")

    try:
        return ExperimentConfig(
            model=model,
            model_text=resolve_model_text(model),
            methods=methods,
            signal=signal,
            name=exp.get("name", "experiment"),
            laws=laws,
            trials=trials,
            seeds=seeds,
            dt=float(exp.get("dt", 1e-2)),
            t_train=float(exp.get("t_train", 10.0)),
            t_val=float(exp.get("t_val", 10.0)),
            train_trajectories=int(exp.get("train_trajectories", 1)),
            noise_sigma=float(noise.get("sigma", 0.0)),
            noise_mode=noise.get("mode", "measured"),
            noise_on=noise.get("on", "both"),
            x0_perturb=float(exp.get("x0_perturb", 0.2)),
            ridge=float(exp.get("ridge", 1e-10)),
            fit=exp.get("fit", "ols"),
            out=exp.get("out"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


# --- per-trial pipeline -----------------------------------------------------------------


def _derived_seed(*parts):
    return int(np.random.default_rng(list(parts)).integers(2**31 - 1))


def _trial_signals(config, seed):
    """Training and validation signals: random kinds get fresh seeds, and
    deterministic kinds get a quarter-period phase shift for validation."""
    base = dict(config.signal)
    kind = base.get("kind")
    train = generate_signal(base, seed=_derived_seed(seed, 201))
    val_spec = dict(base)
    if kind in ("square", "sine"):
        val_spec["phase"] = float(val_spec.get("phase", 0.0)) + float(
            val_spec.get("period", InputSignal.period)
        ) / 4.0
    train_spec = dict(base)
    val = generate_signal(val_spec, seed=_derived_seed(seed, 202))
    return generate_signal(train_spec, seed=_derived_seed(seed, 201)), val


def _perturbed_x0(model, seed, tag, scale):
    rng = np.random.default_rng([seed, tag])
    return rng.uniform(-scale, scale, len(model.state_order))


class _TrialContext:
    """Shared per-trial artifacts: parsed model, plans, truth trajectories."""

    def __init__(self, config, model, trial_index, seed):
        self.config = config
        self.model = model
        self.trial = trial_index
        self.seed = seed
        self.assignment = assign_causality(model)
        self.plan = classify_observables(model, self.assignment)
        self.ode = derive_ode(model, self.assignment)
        train_sig, val_sig = _trial_signals(config, seed)
        self.train_signals = [
            replace(train_sig, seed=_derived_seed(seed, 201, j), channels=max(model.n_inputs, 1))
            for j in range(config.train_trajectories)
        ]
        self.val_signal = replace(val_sig, channels=max(model.n_inputs, 1))
        self.train_trajs = [
            integrate(
                self.ode,
                _perturbed_x0(model, seed, 101 + j, config.x0_perturb),
                sig,
                config.t_train,
                config.dt,
            )
            for j, sig in enumerate(self.train_signals)
        ]
        self.val_x0 = _perturbed_x0(model, seed, 102, config.x0_perturb)
        self.val_traj = integrate(self.ode, self.val_x0, self.val_signal,
                                  config.t_val, config.dt)
        self.train_noise = NoiseSpec(
            sigma=config.noise_sigma if config.noise_on in ("train", "both") else 0.0,
            seed=_derived_seed(seed, 301),
            mode=config.noise_mode,
        )
        self.val_noise = NoiseSpec(
            sigma=config.noise_sigma if config.noise_on in ("validation", "both") else 0.0,
            seed=_derived_seed(seed, 302),
            mode=config.noise_mode,
        )
        self._aug_cache = {}

    def noisy_val(self, noise):
        from .lifting import apply_noise

        return apply_noise([self.val_traj], noise)[0]

    def fit(self, dataset, spec):
        method = spec.fit or self.config.fit
        if method == "tls":
            return fit_tls(dataset)
        return fit_ols(dataset, ridge=self.config.ridge)

    def augmentation(self, spec):
        resistor = spec.resistor
        if resistor is None:
            if not self.plan.anticausal:
                raise CausalLiftError("al2: model has no anticausal observable to treat")
            resistor = self.plan.anticausal[0]
        key = (resistor, spec.value)
        if key not in self._aug_cache:
            if spec.value is None:
                params = default_augmentation(self.model, resistor)
            else:
                junction_id, _ = self.model.element_junction[resistor]
                kind = (
                    "inertial"
                    if self.model.junctions[junction_id].kind == "loop"
                    else "capacitive"
                )
                params = AugmentationParams(kind=kind, value=spec.value, junction=junction_id)
            aug_model = apply_al2(self.model, resistor, params)
            aug_plan = classify_observables(aug_model, assign_causality(aug_model))
            self._aug_cache[key] = (resistor, params, aug_model, aug_plan)
        return self._aug_cache[key]


def _predict_and_score(ctx, dataset, plan, include_anticausal, val_view=None):
    model = ctx.fit(dataset, _predict_and_score.spec)
    val_traj = val_view if val_view is not None else ctx.noisy_val(ctx.val_noise)
    raw, _, _ = raw_matrix(val_traj, plan, include_anticausal)
    phi0 = dataset.lift(raw[0], val_traj.U[0])[0]
    pred = rollout(model, phi0, ctx.val_traj.U[:-1])
    return model, pred, sse(pred, ctx.val_traj, ctx.model.state_order)


def run_method(ctx: _TrialContext, spec: MethodSpec):
    """One method on one trial: (fitted model, prediction, sse)."""
    _predict_and_score.spec = spec
    config = ctx.config
    if spec.name == "il2":
        plan = apply_il2(ctx.model, ctx.plan)
        dataset = build_dataset(ctx.train_trajs, Basis.dfl_aux(), plan, ctx.train_noise)
        return _predict_and_score(ctx, dataset, plan, True)
    if spec.name == "dfl-filtered":
        dataset = build_dataset(
            ctx.train_trajs, Basis.dfl_aux(), ctx.plan, ctx.train_noise,
            include_anticausal=True,
        )
        dataset = dataset.with_feedthrough(fit_feedthrough(dataset))
        return _predict_and_score(ctx, dataset, ctx.plan, True)
    if spec.name == "omq":
        basis = Basis(kind=spec.basis, degree=spec.degree, target="state-and-aux")
        dataset = build_dataset(
            ctx.train_trajs, basis, ctx.plan, ctx.train_noise, include_anticausal=True
        )
        return _predict_and_score(ctx, dataset, ctx.plan, True)
    if spec.name == "ksos":
        basis = Basis(kind=spec.basis, degree=spec.degree, target="state-only")
        dataset = build_dataset(
            ctx.train_trajs, basis, ctx.plan, ctx.train_noise, include_anticausal=False
        )
        return _predict_and_score(ctx, dataset, ctx.plan, False)
    # al2
    resistor, params, aug_model, aug_plan = ctx.augmentation(spec)
    if spec.data == "measured":
        views = [
            augmented_measurement_view(t, resistor, params, aug_plan)
            for t in ctx.train_trajs
        ]
        dataset = build_dataset(views, Basis.dfl_aux(), aug_plan, ctx.train_noise,
                                include_anticausal=False)
        val_view = augmented_measurement_view(
            ctx.noisy_val(ctx.val_noise), resistor, params, aug_plan
        )
        return _predict_and_score(ctx, dataset, aug_plan, False, val_view=val_view)
    # simulate the augmented model on a refined grid, subsample back to dt
    aug_ode = derive_ode(aug_model)
    dt_fine = refine_dt(aug_model, config.dt)
    stride = int(round(config.dt / dt_fine))
    aug_trajs = [
        _subsample(
            integrate(
                aug_ode,
                np.concatenate([t_x0, [0.0]]),
                sig,
                config.t_train,
                dt_fine,
            ),
            stride,
        )
        for t_x0, sig in zip(
            [
                _perturbed_x0(ctx.model, ctx.seed, 101 + j, config.x0_perturb)
                for j in range(config.train_trajectories)
            ],
            ctx.train_signals,
        )
    ]
    dataset = build_dataset(aug_trajs, Basis.dfl_aux(), aug_plan, ctx.train_noise,
                            include_anticausal=False)
    val_aug = _subsample(
        integrate(
            aug_ode,
            np.concatenate([ctx.val_x0, [0.0]]),
            ctx.val_signal,
            config.t_val,
            dt_fine,
        ),
        stride,
    )
    from .lifting import apply_noise

    val_view = apply_noise([val_aug], ctx.val_noise)[0]
    return _predict_and_score(ctx, dataset, aug_plan, False, val_view=val_view)


def _subsample(traj: Trajectory, stride: int) -> Trajectory:
    if stride <= 1:
        return traj
    sl = slice(None, None, stride)
    return traj.with_arrays(
        times=traj.times[sl], X=traj.X[sl], H=traj.H[sl], U=traj.U[sl],
        Q=traj.Q[sl], EIN=traj.EIN[sl], dt=traj.dt * stride,
    )


def _run_trial(config: ExperimentConfig, trial_index: int):
    """All methods for one trial; returns per-method records and optional
    first-trial trajectories."""
    seed = config.seeds[trial_index]
    started = time.perf_counter()
    records = {}
    capture = {}
    try:
        model = parse_model(config.model_text, name=config.model).with_laws(config.laws)
        ctx = _TrialContext(config, model, trial_index, seed)
    except (CausalLiftError, FloatingPointError, np.linalg.LinAlgError) as exc:
        for spec in config.methods:
            records[spec.key] = {"sse": float("inf"), "error": f"{type(exc).__name__}: {exc}"}
        return {
            "trial": trial_index, "seed": seed, "methods": records,
            "runtime_s": time.perf_counter() - started, "capture": capture,
        }
    for spec in config.methods:
        try:
            _, pred, score = run_method(ctx, spec)
            records[spec.key] = {"sse": float(score), "error": None}
            if trial_index == 0:
                capture[spec.key] = pred.state_block(ctx.model.state_order)
        except (CausalLiftError, FloatingPointError, OverflowError,
                np.linalg.LinAlgError) as exc:
            records[spec.key] = {"sse": float("inf"), "error": f"{type(exc).__name__}: {exc}"}
    if trial_index == 0:
        capture["__truth__"] = np.column_stack(
            [ctx.val_traj.times]
            + [ctx.val_traj.X[:, i] for i in range(len(ctx.model.state_order))]
        )
        capture["__state_labels__"] = list(ctx.model.state_order)
    return {
        "trial": trial_index, "seed": seed, "methods": records,
        "runtime_s": time.perf_counter() - started, "capture": capture,
    }


# --- report ----------------------------------------------------------------------------


@dataclass
class Report:
    config: dict
    method_keys: tuple
    trials: list
    summaries: dict
    runtime_s: float
    timestamp: str
    first_trial: dict = field(default_factory=dict)

    def sses(self, key):
        return [t["methods"][key]["sse"] for t in self.trials]

    @property
    def n_failed(self):
        return sum(
            1
            for t in self.trials
            for key in self.method_keys
            if t["methods"][key]["error"] is not None
        )

    def to_dict(self):
        return {
            "config": self.config,
            "methods": list(self.method_keys),
            "trials": self.trials,
            "summaries": self.summaries,
            "n_failed": self.n_failed,
            "runtime_s": self.runtime_s,
            "timestamp": self.timestamp,
        }


def _summary(values):
    values = np.asarray(values, dtype=float)
    n = values.size
    finite = np.isfinite(values)
    mean = float(values.mean()) if n else float("nan")
    if n > 1 and np.all(finite):
        stderr = float(values.std(ddof=1) / np.sqrt(n))
    elif n > 1:
        stderr = float("inf")
    else:
        stderr = 0.0
    return {
        "mean": mean,
        "stderr": stderr,
        "median": float(np.median(values)) if n else float("nan"),
        "p90": float(np.percentile(values, 90)) if n else float("nan"),
        "n": int(n),
        "n_failed": int(n - finite.sum()),
    }


def _config_echo(config: ExperimentConfig) -> dict:
    return {
        "name": config.name,
        "model": config.model,
        "methods": [
            {
                "name": m.name, "key": m.key, "basis": m.basis, "degree": m.degree,
                "resistor": m.resistor, "value": m.value, "data": m.data, "fit": m.fit,
            }
            for m in config.methods
        ],
        "signal": config.signal,
        "laws": config.laws,
        "trials": config.trials,
        "seeds": list(config.seeds),
        "dt": config.dt,
        "t_train": config.t_train,
        "t_val": config.t_val,
        "train_trajectories": config.train_trajectories,
        "noise": {
            "sigma": config.noise_sigma,
            "mode": config.noise_mode,
            "on": config.noise_on,
        },
        "x0_perturb": config.x0_perturb,
        "ridge": config.ridge,
        "fit": config.fit,
    }


def run_experiment(config: ExperimentConfig, workers: int = 1) -> Report:
    """Run every (trial, method) cell; deterministic given config and seeds."""
    started = time.perf_counter()
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_worker, [(config, i) for i in range(config.trials)]))
    else:
        results = [_run_trial(config, i) for i in range(config.trials)]
    results.sort(key=lambda rec: rec["trial"])
    capture = results[0].pop("capture", {}) if results else {}
    for rec in results[1:]:
        rec.pop("capture", None)
    method_keys = tuple(m.key for m in config.methods)
    summaries = {
        key: _summary([rec["methods"][key]["sse"] for rec in results])
        for key in method_keys
    }
    return Report(
        config=_config_echo(config),
        method_keys=method_keys,
        trials=results,
        summaries=summaries,
        runtime_s=time.perf_counter() - started,
        timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        first_trial=capture,
    )


def _trial_worker(args):
    config, index = args
    return _run_trial(config, index)


def emit_outputs(report: Report, directory) -> list:
    """Write report.json, sse.csv, cdf.csv, and first-trial trajectory CSVs.

    File names are stable; reruns of the same config are byte-identical
    apart from the timestamp and runtime fields of report.json.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []

    path = directory / "report.json"
    payload = report.to_dict()
    for rec in payload["trials"]:
        rec = dict(rec)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    written.append(path)

    path = directory / "sse.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,trial,sse\n")
        for key in report.method_keys:
            for rec in report.trials:
                fh.write(f"{key},{rec['trial']},{_fmt_float(rec['methods'][key]['sse'])}\n")
    written.append(path)

    path = directory / "cdf.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,sse,cdf\n")
        for key in report.method_keys:
            values = sorted(report.sses(key))
            for i, v in enumerate(values):
                fh.write(f"{key},{_fmt_float(v)},{_fmt_float((i + 1) / len(values))}\n")
    written.append(path)

    truth = report.first_trial.get("__truth__")
    labels = report.first_trial.get("__state_labels__", [])
    if truth is not None:
        traj_dir = directory / "trajectories"
        traj_dir.mkdir(exist_ok=True)
        for key in report.method_keys:
            pred = report.first_trial.get(key)
            if pred is None:
                continue
            path = traj_dir / f"trial0_{key}.csv"
            header = ["t"] + [f"true_{s}" for s in labels] + [f"pred_{s}" for s in labels]
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(",".join(header) + "\n")
                for row_t, row_p in zip(truth, pred):
                    cells = [_fmt_float(v) for v in row_t] + [_fmt_float(v) for v in row_p]
                    fh.write(",".join(cells) + "\n")
            written.append(path)
    return written


def _fmt_float(v):
    v = float(v)
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


# --- CLI --------------------------------------------------------------------------------


def _parse_signal_arg(text) -> dict:
    if ":" in text:
        kind, _, rest = text.partition(":")
    else:
        kind, rest = text, ""
    spec = {"kind": kind}
    for item in filter(None, rest.split(",")):
        key, _, value = item.partition("=")
        if not _:
            raise ConfigError(f"bad signal parameter {item!r} (expected key=value)")
        try:
            spec[key] = float(value) if key != "kind" else value
        except ValueError:
            raise ConfigError(f"bad signal parameter value {item!r}") from None
    for int_key in ("seed", "channels"):
        if int_key in spec:
            spec[int_key] = int(spec[int_key])
    return spec


def _cmd_analyze(args) -> int:
    model = parse_model(resolve_model_text(args.model), name=Path(args.model).stem)
    assignment = assign_causality(model)
    plan = classify_observables(model, assignment)
    if args.json:
        print(json.dumps(plan_summary(plan), indent=2, sort_keys=True))
    else:
        print(describe_plan(plan))
    return 0


def _cmd_simulate(args) -> int:
    model = parse_model(resolve_model_text(args.model), name=Path(args.model).stem)
    spec = _parse_signal_arg(args.signal)
    spec.setdefault("channels", max(model.n_inputs, 1))
    signal = generate_signal(spec, seed=args.seed)
    ode = derive_ode(model)
    if args.x0:
        x0 = [float(v) for v in args.x0.split(",")]
    else:
        x0 = np.zeros(len(model.state_order))
    traj = integrate(ode, x0, signal, args.t_final, refine_dt(model, args.dt))
    export_trajectory_csv(traj, args.out)
    print(f"wrote {traj.n_rows} rows to {args.out}")
    return 0


def _cmd_run(args) -> int:
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.method:
        overrides["methods"] = args.method
    config = load_config(args.config, overrides=overrides)
    report = run_experiment(config, workers=args.workers)
    out_dir = config.out or f"results/{config.name}"
    written = emit_outputs(report, out_dir)
    for key in report.method_keys:
        summary = report.summaries[key]
        print(
            f"{key}: mean={summary['mean']:.6g} median={summary['median']:.6g} "
            f"p90={summary['p90']:.6g} failed={summary['n_failed']}/{summary['n']}"
        )
    print(f"wrote {len(written)} files under {out_dir}")
    if report.n_failed:
        print(f"{report.n_failed} trial-method cells failed (scored as inf)")
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causal-lift",
        description="Causality-aware lifting linearization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="print a causality report for a model")
    p.add_argument("model", help="model file path or builtin model name")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("simulate", help="integrate a model and export CSV")
    p.add_argument("model")
    p.add_argument("--signal", required=True,
                   help="kind:key=value,... e.g. square:amplitude=1,period=2")
    p.add_argument("--t-final", type=float, default=10.0)
    p.add_argument("--dt", type=float, default=1e-2)
    p.add_argument("--x0", default=None, help="comma-separated initial state")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None, help="base seed override")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--method", action="append", default=None,
                   help="restrict to a method key (repeatable)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CausalLiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
