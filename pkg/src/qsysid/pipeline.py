"""Configuration-driven experiment: simulate, identify, validate, tabulate.

Every stage communicates through files in the output directory, so the
stages can be run separately (see :mod:`qsysid.cli`) and independent
units of work can run in parallel processes.

Layout of the output directory::

    records/<quad>_w<omega>_s<seed>.csv (+ .json sidecar)
    models/<stem>_n<n>_classical.json
    models/<stem>_n<n>_<solver>.json (+ .meta.json sidecar)
    metrics/<stem>_n<n>_<solver>.json, _autocorr.csv, _prediction.csv
    table_<quad>.md, table_<quad>.csv
"""

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingArtifacts, QSysIdError, UnstableEstimate
from .model import (CavityParams, build_cavity, load_model, model_hash,
                    quadrature_select, save_model)
from .projection import bisection_identify, reduced_projection, to_canonical
from .simulate import generate_prbs, load_record, save_record, simulate_homodyne, split_record
from .subspace import HankelConfig, n4sid_estimate, relative_energy
from .validation import autocorr, cross_corr, fit_percent, fpe, fraction_inside, predict

logger = logging.getLogger(__name__)

SOLVERS = ("lifted", "reduced", "both")


@dataclass
class PipelineConfig:
    """Experiment settings.

    ``omegas`` are input amplitudes in units of ``1 / sqrt(Ts)`` when
    ``omega_units == "per_sqrt_Ts"`` and absolute otherwise. ``gamma0``
    of ``None`` starts the search at twice the reduced solver's loss.
    """

    model: dict = field(default_factory=lambda: {"cavity": {"detuning": 10.0,
                                                            "kappas": [5.0, 3.0, 2.0]}})
    quadratures: list = field(default_factory=lambda: ["q", "p"])
    Ts: float = 0.01
    duration: float = 80.0
    durations: dict = field(default_factory=lambda: {"burn": 20.0, "est": 30.0, "val": 30.0})
    omegas: list = field(default_factory=lambda: [10.0, 50.0, 100.0])
    omega_units: str = "per_sqrt_Ts"
    orders: list = field(default_factory=lambda: [1, 2, 3])
    seeds: list = field(default_factory=lambda: [1])
    solver: str = "lifted"
    gamma0: float = None
    rounds: int = 25
    epsilon: float = 1e-3
    conditioning: object = "balance"
    block_rows: int = 10
    weighting: str = "moesp"
    max_lag: int = 50
    out: str = "results"
    workers: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(msg):
            raise ConfigError(msg)

        if not isinstance(self.model, dict) or not ({"cavity", "path"} & set(self.model)):
            bad("model must be {'cavity': {...}} or {'path': ...}")
        if not self.quadratures or not set(self.quadratures) <= {"q", "p"}:
            bad("quadratures must be a nonempty subset of ['q', 'p']")
        if not self.Ts > 0:
            bad("Ts must be positive")
        for key in ("burn", "est", "val"):
            if key not in self.durations:
                bad(f"durations.{key} is missing")
            if not self.durations[key] > 0:
                bad(f"durations.{key} must be positive")
        if self.duration < sum(self.durations[k] for k in ("burn", "est", "val")) - 1e-12:
            bad("duration is shorter than burn + est + val")
        if not self.omegas or any(not w > 0 for w in self.omegas):
            bad("omegas must be positive")
        if self.omega_units not in ("per_sqrt_Ts", "absolute"):
            bad("omega_units must be 'per_sqrt_Ts' or 'absolute'")
        if not self.orders or any(int(n) != n or n < 1 for n in self.orders):
            bad("orders must be integers >= 1")
        if not self.seeds or any(int(s) != s or s < 0 for s in self.seeds):
            bad("seeds must be nonnegative integers")
        if self.solver not in SOLVERS:
            bad(f"solver must be one of {SOLVERS}")
        if self.gamma0 is not None and not self.gamma0 > 0:
            bad("gamma0 must be positive")
        if not self.epsilon > 0:
            bad("epsilon must be positive")
        if self.weighting not in ("cva", "moesp", "n4sid"):
            bad("weighting must be cva, moesp or n4sid")
        if self.max_lag < 1 or self.rounds < 0 or self.block_rows < 2 or self.workers < 1:
            bad("max_lag, block_rows and workers must be positive, rounds nonnegative")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)

    def amplitude(self, omega):
        return omega / math.sqrt(self.Ts) if self.omega_units == "per_sqrt_Ts" else omega

    def system(self):
        if "cavity" in self.model:
            c = self.model["cavity"]
            return build_cavity(CavityParams(c["detuning"], c["kappas"]))
        return load_model(self.model["path"])

    def hankel(self):
        return HankelConfig(block_rows=self.block_rows, weighting=self.weighting)


def load_config(path=None, overrides=None):
    """Read a JSON config (defaults when ``path`` is None) and apply overrides."""
    doc = {}
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return PipelineConfig.from_dict(doc)


def _label(omega):
    return f"{omega:g}".replace(".", "p")


def record_stem(quad, omega, seed):
    return f"{quad}_w{_label(omega)}_s{seed}"


def _dump(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _dirs(cfg):
    out = Path(cfg.out)
    for sub in ("records", "models", "metrics"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    return out


# -- stages -------------------------------------------------------------------

def simulate_one(cfg, quad, omega, seed):
    """Simulate one record and write it; returns the CSV path."""
    out = _dirs(cfg)
    sys_ = cfg.system()
    inp = generate_prbs(sys_.B.shape[1], cfg.Ts, cfg.duration, cfg.amplitude(omega), seed)
    rec = simulate_homodyne(sys_, quad, inp, seed)
    path = out / "records" / (record_stem(quad, omega, seed) + ".csv")
    save_record(rec, path, model=sys_)
    return path


def cmd_simulate(cfg, quadratures=None, seeds=None):
    """One record (CSV + sidecar) per (quadrature, amplitude, seed)."""
    jobs = [(q, w, s) for q in (quadratures or cfg.quadratures) for w in cfg.omegas
            for s in (seeds or cfg.seeds)]
    return _fan_out(simulate_one, cfg, jobs)


def _solvers(cfg):
    return ["lifted", "reduced"] if cfg.solver == "both" else [cfg.solver]


def _sidecar(res, ce, n):
    return {
        "solver": res.solver,
        "gamma_final": res.gamma_final,
        "loss": res.loss,
        "iterations": res.iterations,
        "residuals": res.residuals,
        "conditioning_scale": res.scale,
        "relative_energy": relative_energy(ce.sing_values).tolist(),
        "order": n,
    }


def identify_record(cfg, record_path, solver=None):
    """Classical estimate and realizable models for every configured order.

    Returns ``{(n, solver): path}`` of written quantum models. Orders
    whose classical estimate is unstable or whose projection fails get a
    ``*.error.json`` diagnostic instead; the first such error is re-raised
    after all orders were attempted.
    """
    out = _dirs(cfg)
    rec = load_record(record_path)
    stem = Path(record_path).stem
    sys_ = cfg.system()
    D = quadrature_select(sys_, rec.quadrature).D_meas
    d = cfg.durations
    est, _ = split_record(rec, d["burn"], d["est"], d["val"])
    written, first_error = {}, None
    solvers = [solver] if solver else _solvers(cfg)
    for n in cfg.orders:
        base = out / "models" / f"{stem}_n{n}"
        try:
            ce = n4sid_estimate(est, n, D, cfg.hankel(), strict=True)
            save_model(ce, f"{base}_classical.json")
            results = {}
            for name in solvers:
                if name == "lifted":
                    res = bisection_identify(ce, D, gamma0=cfg.gamma0, rounds=cfg.rounds,
                                             epsilon=cfg.epsilon, conditioning=cfg.conditioning,
                                             amplitude=rec.inputs.amplitude,
                                             quadrature=rec.quadrature)
                else:
                    res = reduced_projection(ce, D, quadrature=rec.quadrature)
                results[name] = res
                canon = to_canonical(res)
                path = Path(f"{base}_{name}.json")
                save_model(canon, path)
                meta = _sidecar(res, ce, n)
                meta["model_hash"] = model_hash(canon)
                meta["record"] = Path(record_path).name
                _dump(meta, f"{base}_{name}.meta.json")
                written[(n, name)] = path
            if len(results) == 2:
                _dump({"lifted_loss": results["lifted"].loss,
                       "reduced_loss": results["reduced"].loss,
                       "lifted_gamma": results["lifted"].gamma_final},
                      f"{base}_crosscheck.json")
        except QSysIdError as exc:
            diag = {"error": type(exc).__name__, "message": str(exc), "order": n,
                    "record": Path(record_path).name}
            if isinstance(exc, UnstableEstimate) and exc.estimate is not None:
                diag["eigenvalues"] = [[z.real, z.imag] for z in
                                       np.linalg.eigvals(exc.estimate.A_hat)]
            _dump(diag, f"{base}.error.json")
            logger.warning("%s n=%d: %s", stem, n, exc)
            first_error = first_error or exc
    if first_error is not None and not written:
        raise first_error
    return written


def validate_model(cfg, model_path, record_path, tag=None):
    """Metrics JSON plus autocorrelation and prediction CSVs.

    The validation slice of the record is predicted with the model's
    Kalman predictor, its initial state fitted by least squares.
    """
    out = _dirs(cfg)
    model = load_model(model_path)
    rec = load_record(record_path)
    d = cfg.durations
    _, val = split_record(rec, d["burn"], d["est"], d["val"])
    res = predict(model, val, x0="estimate")
    fits = fit_percent(res, val)
    rho, bound = autocorr(res, cfg.max_lag)
    xc, lags, xbound = cross_corr(res, val.inputs, cfg.max_lag)
    tag = tag or Path(model_path).stem
    metrics = {
        "fpe": fpe(res),
        "fit": fits.tolist(),
        "N": res.N,
        "d": res.d,
        "bound": bound,
        "autocorr_inside": fraction_inside(rho[:, 1:], bound).tolist(),
        "crosscorr_inside": fraction_inside(xc.reshape(xc.shape[0], -1), xbound).tolist(),
        "model": Path(model_path).name,
        "record": Path(record_path).name,
    }
    meta_path = Path(str(model_path).replace(".json", ".meta.json"))
    if meta_path.exists():
        with open(meta_path) as fh:
            meta = json.load(fh)
        metrics.update(gamma=meta["gamma_final"], loss=meta["loss"],
                       relative_energy=meta["relative_energy"], order=meta["order"],
                       solver=meta["solver"])
    base = out / "metrics" / tag
    _dump(metrics, f"{base}.json")
    m = rho.shape[0]
    with open(f"{base}_autocorr.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag"] + [f"rho{l + 1}" for l in range(m)] + ["bound"])
        for tau in range(rho.shape[1]):
            w.writerow([tau] + [repr(float(x)) for x in rho[:, tau]] + [repr(bound)])
    with open(f"{base}_prediction.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"ydot{l + 1}" for l in range(m)] + [f"pred{l + 1}" for l in range(m)])
        for k in range(res.N):
            w.writerow([repr(float(val.t[k]))] + [repr(float(x)) for x in val.ydot[k]]
                       + [repr(float(x)) for x in res.predictions[k]])
    return Path(f"{base}.json")


def _table_rows(cfg, quad, solver):
    out = Path(cfg.out)
    rows = []
    for omega in cfg.omegas:
        for n in cfg.orders:
            found = []
            for seed in cfg.seeds:
                p = out / "metrics" / f"{record_stem(quad, omega, seed)}_n{n}_{solver}.json"
                if p.exists():
                    with open(p) as fh:
                        found.append(json.load(fh))
            if found:
                rows.append((omega, n, found))
    return rows


def _summary(values):
    v = np.asarray(values, dtype=float)
    med = float(np.median(v))
    if v.size == 1:
        return med, None
    q1, q3 = np.percentile(v, [25, 75])
    return med, float(q3 - q1)


def cmd_table(cfg, solver=None):
    """Tables of relative energy, gamma, FPE and fits per quadrature.

    With several seeds each cell is the median, followed by the
    interquartile range in brackets.
    """
    out = Path(cfg.out)
    solver = solver or ("lifted" if cfg.solver == "both" else cfg.solver)
    written = []
    for quad in cfg.quadratures:
        rows = _table_rows(cfg, quad, solver)
        if not rows:
            continue
        m = len(rows[0][2][0]["fit"])
        head = ["Omega", "n", "relative energy", "gamma", "FPE (x1e6)"] + \
            [f"Fit_{l + 1} (%)" for l in range(m)]
        lines, records = [], []
        for omega, n, found in rows:
            cols = [
                [r["relative_energy"][n - 1] if len(r["relative_energy"]) >= n else np.nan
                 for r in found],
                [r["gamma"] for r in found],
                [r["fpe"] / 1e6 for r in found],
            ] + [[r["fit"][l] for r in found] for l in range(m)]
            cells, raw = [], []
            for vals, fmt in zip(cols, ["{:.2f}", "{:.3g}", "{:.3g}"] + ["{:.1f}"] * m):
                med, iqr = _summary(vals)
                cells.append(fmt.format(med) + ("" if iqr is None else f" [{fmt.format(iqr)}]"))
                raw.append(med)
            label = f"{omega:g}/sqrt(Ts)" if cfg.omega_units == "per_sqrt_Ts" else f"{omega:g}"
            lines.append([label, str(n)] + cells)
            records.append([omega, n] + raw)
        md = out / f"table_{quad}.md"
        with open(md, "w") as fh:
            fh.write(f"Quadrature {quad}, solver {solver}, seeds {list(cfg.seeds)}\n\n")
            fh.write("| " + " | ".join(head) + " |\n")
            fh.write("|" + "---|" * len(head) + "\n")
            for line in lines:
                fh.write("| " + " | ".join(line) + " |\n")
        with open(out / f"table_{quad}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            w.writerows(records)
        written.append(md)
    if not written:
        raise MissingArtifacts(f"no metrics found under {out / 'metrics'}")
    return written


# -- orchestration -----------------------------------------------------------

def _unit(cfg, quad, omega, seed):
    # simulate -> identify -> validate for one record
    rec_path = simulate_one(cfg, quad, omega, seed)
    failures = []
    try:
        models = identify_record(cfg, rec_path)
    except QSysIdError as exc:
        return [f"{rec_path.name}: {type(exc).__name__}: {exc}"]
    for (n, name), path in sorted(models.items()):
        try:
            validate_model(cfg, path, rec_path)
        except QSysIdError as exc:
            failures.append(f"{path.name}: {type(exc).__name__}: {exc}")
    errors = sorted(Path(cfg.out, "models").glob(f"{rec_path.stem}_n*.error.json"))
    failures += [p.name for p in errors]
    return failures


def _fan_out(fn, cfg, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(fn, cfg, *job) for job in jobs]
            return [f.result() for f in futures]
    return [fn(cfg, *job) for job in jobs]


def run_pipeline(cfg):
    """Full experiment. Returns the list of failed units (empty on success)."""
    _dirs(cfg)
    _dump(cfg.to_dict(), Path(cfg.out) / "config.json")
    jobs = [(q, w, s) for q in cfg.quadratures for w in cfg.omegas for s in cfg.seeds]
    failures = [f for unit in _fan_out(_unit, cfg, jobs) for f in unit]
    cmd_table(cfg)
    return failures


def default_workers():
    return max(1, min(4, os.cpu_count() or 1))
