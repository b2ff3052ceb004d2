"""Simulation studies: replicate loop, per-replicate CSV and JSON summary.

Every replicate ``rid`` draws its observed data from the streams
``data``/``dp`` at index ``(rid,)``, its estimation ensemble from
``ens`` at ``(rid,)``, its pivot ensemble from ``pivot`` at ``(rid,)`` and
bootstrap releases from ``boot`` at ``(rid, b)``.  The same indices are used
in every setting of a study (common random numbers across settings), and
none of them depends on the number of workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import repeat
from pathlib import Path

import numpy as np

from .bootstrap import (
    BASELINES,
    IndirectEstimator,
    NaiveEstimator,
    PivotSigma,
    baseline_ci,
    baseline_draws,
    bootstrap_statistics,
    parametric_bootstrap,
    pb_ci,
    pb_ht,
    p_value,
)
from .config import StudyConfig, dump_config
from .indirect import ADI, IND, EstimatorOptions, SynthEnsemble, default_R
from .models import (
    GaussianShiftModel,
    LinRegConfig,
    LinRegModel,
    LocScaleConfig,
    LocScaleModel,
    LogisticConfig,
    LogisticModel,
    linreg_F,
)
from .seedbank import SeedBank

WORKERS_ENV = "DPINDIRECT_WORKERS"
RESULT_COLUMNS = ("ci_lo", "ci_hi", "covered", "width", "p_value", "reject",
                  "runtime_ms", "failed", "boundary_hit")


@dataclass
class Setting:
    label: str
    model: object
    truth: np.ndarray


@dataclass
class SummaryRow:
    study: str
    method: str
    replicates: int
    failures: int
    rate: float  # coverage for intervals, rejection rate for tests
    mc_se: float
    mean_width: float
    mean_runtime_ms: float
    boundary_hits: int
    kind: str = "coverage"

    def as_dict(self):
        return {"study": self.study, "method": self.method, "replicates": self.replicates,
                "failures": self.failures, self.kind: self.rate, "mc_se": self.mc_se,
                "mean_width": self.mean_width, "mean_runtime_ms": self.mean_runtime_ms,
                "boundary_hits": self.boundary_hits}


def resolve_workers(requested: int = 0) -> int:
    if requested and requested > 0:
        return int(requested)
    env = os.environ.get(WORKERS_ENV, "")
    return max(1, int(env)) if env.strip() else 1


def _label(study, **kw):
    inner = ";".join(f"{k}={_fmt_label(v)}" for k, v in kw.items())
    return f"{study}[{inner}]"


def _fmt_label(v):
    return f"{v:g}" if isinstance(v, float) else str(v)


def build_settings(cfg: StudyConfig, extra_label: dict | None = None) -> list[Setting]:
    extra = extra_label or {}
    out = []
    if cfg.study == "locscale_ci":
        for n in cfg.n:
            m = LocScaleModel(LocScaleConfig(n=n, eps=cfg.eps, L=cfg.L, U=cfg.U, clamp=cfg.clamp))
            out.append(Setting(_label(cfg.study, n=n, **extra), m, np.array([cfg.mu_true, cfg.sigma_true])))
    elif cfg.study == "linreg_ht":
        for n in cfg.n:
            m = LinRegModel(LinRegConfig(n=n, mu=cfg.mu, Delta=cfg.Delta))
            for b1 in cfg.beta1:
                truth = np.array([b1, cfg.beta0, cfg.mu_x, cfg.sigma_x, cfg.sigma_e])
                out.append(Setting(_label(cfg.study, beta1=float(b1), n=n, **extra), m, truth))
    elif cfg.study == "logistic_ci":
        for n in cfg.n:
            m = LogisticModel(LogisticConfig(n=n, eps=cfg.eps, y_channel=cfg.y_channel))
            for b1 in cfg.beta1:
                truth = np.array([cfg.beta0, b1, cfg.a, cfg.b])
                out.append(Setting(_label(cfg.study, beta1=float(b1), n=n, **extra), m, truth))
    elif cfg.study == "toy_oracle":
        q = len(cfg.theta_true)
        for n in cfg.n:
            m = GaussianShiftModel(np.eye(q), n=n, sigma=cfg.sigma)
            out.append(Setting(_label(cfg.study, n=n, **extra), m, np.array(cfg.theta_true)))
    return out


def _options(cfg: StudyConfig) -> EstimatorOptions:
    return EstimatorOptions(solver=cfg.solver, fd_step=cfg.fd_step, zero_tol=cfg.zero_tol,
                            ridge_scale=cfg.ridge_scale)


def _empty_row(setting, method, rid):
    row = {"study": setting.label, "method": method, "replicate_id": rid}
    for name in setting.model.param_names:
        row[f"estimate_{name}"] = math.nan
    row.update(ci_lo=math.nan, ci_hi=math.nan, covered=math.nan, width=math.nan, p_value=math.nan,
               reject=math.nan, runtime_ms=0.0, failed=0, boundary_hit=0)
    return row


def _fill_estimate(row, model, fit):
    for name, v in zip(model.param_names, fit.theta_hat):
        row[f"estimate_{name}"] = float(v)
    row["boundary_hit"] = int(bool(np.any(fit.at_boundary)))


def _interval_row(row, iv, truth_value):
    row.update(ci_lo=iv.lo, ci_hi=iv.hi, width=iv.hi - iv.lo, covered=int(iv.lo <= truth_value <= iv.hi))


def _failed_rows(setting, methods, rid):
    rows = []
    for m in methods:
        r = _empty_row(setting, m, rid)
        r["failed"] = 1
        rows.append(r)
    return rows


def _targets(setting, cfg):
    names = setting.model.param_names
    if cfg.study == "locscale_ci":
        return [(0, names[0]), (1, names[1])]
    if cfg.study == "logistic_ci":
        return [(1, names[1])]
    if cfg.study == "toy_oracle":
        return list(enumerate(names))
    return [(0, names[0])]


def run_replicate(cfg: StudyConfig, setting_index: int, rid: int) -> list[dict]:
    """All methods of one replicate in one setting."""
    setting = build_settings(cfg)[setting_index]
    model, truth = setting.model, setting.truth
    bank = SeedBank(cfg.master_seed)
    key = (rid,)
    s = model.sample_statistic(truth, bank.stream("data", key), bank.stream("dp", key))
    R = cfg.R or default_R(model)
    opts = _options(cfg)
    rows: list[dict] = []
    targets = _targets(setting, cfg)
    ensemble = None

    def get_ensemble():
        nonlocal ensemble
        if ensemble is None:
            ensemble = SynthEnsemble.from_bank(model, bank, R, key)
        return ensemble

    def timed(fn):
        t0 = time.perf_counter()
        out = fn()
        return out, (time.perf_counter() - t0) * 1e3 if cfg.timing else 0.0

    if cfg.study in ("locscale_ci", "logistic_ci", "toy_oracle"):
        shared_draws = None
        for method in cfg.methods:
            tags = [f"{method}:{name}" for _, name in targets]
            try:
                if method in ("adi", "ind"):
                    est = IndirectEstimator(model, get_ensemble(), ADI if method == "adi" else IND, opts)

                    def work(est=est):
                        boot = parametric_bootstrap(s, model, est, cfg.B, bank, key=key)
                        return boot, [pb_ci(s, model, est, cfg.B, cfg.alpha, bank, target=i, boot=boot)
                                      for i, _ in targets]
                    (boot, ivs), ms = timed(work)
                    fit = boot.fit
                elif method == "naive":
                    est = NaiveEstimator(model)

                    def work(est=est):
                        boot = parametric_bootstrap(s, model, est, cfg.B, bank, key=key)
                        return boot, [pb_ci(s, model, est, cfg.B, cfg.alpha, bank, target=i, boot=boot,
                                            method="naive") for i, _ in targets]
                    (boot, ivs), ms = timed(work)
                    fit = boot.fit
                elif method in BASELINES:
                    def work(method=method):
                        nonlocal shared_draws
                        if shared_draws is None:
                            shared_draws = baseline_draws(s, model, cfg.B, bank, key)
                        return [baseline_ci(s, model, method, cfg.B, cfg.alpha, bank, i, draws=shared_draws)
                                for i, _ in targets]
                    ivs, ms = timed(work)
                    fit = NaiveEstimator(model)(s)
                else:
                    raise ValueError(f"method {method!r} not defined for {cfg.study}")
            except Exception:  # noqa: BLE001 - recorded per row, not fatal
                rows.extend(_failed_rows(setting, tags, rid))
                continue
            for (i, _), tag, iv in zip(targets, tags, ivs):
                row = _empty_row(setting, tag, rid)
                _fill_estimate(row, model, fit)
                _interval_row(row, iv, truth[i])
                row["runtime_ms"] = ms
                rows.append(row)
        return rows

    # linreg_ht
    boot = None
    for method in cfg.methods:
        try:
            if method in ("adi_pivot", "adi_const"):
                def work(method=method):
                    nonlocal boot
                    est = IndirectEstimator(model, get_ensemble(), ADI, opts)
                    if boot is None:
                        boot = parametric_bootstrap(s, model, est, cfg.B, bank, key=key)
                    if method == "adi_pivot":
                        pivot = SynthEnsemble.from_bank(model, bank, cfg.R_big, key, tag="pivot")
                        sigma = PivotSigma(model, pivot, target=0, delta=cfg.delta)
                    else:
                        sigma = None
                    return pb_ht(s, model, est, cfg.B, cfg.alpha, bank, null=0.0, target=0,
                                 sigma_hat=sigma, boot=boot)
                res, ms = timed(work)
                fit = boot.fit
            elif method == "naive_f":
                def work():
                    return naive_f_test(s, model, cfg.B, cfg.alpha, bank, key)
                (res, fit), ms = timed(work)
            else:
                raise ValueError(f"method {method!r} not defined for {cfg.study}")
        except Exception:  # noqa: BLE001
            rows.extend(_failed_rows(setting, [method], rid))
            continue
        row = _empty_row(setting, method, rid)
        _fill_estimate(row, model, fit)
        row.update(p_value=res.p_value, reject=int(res.reject), runtime_ms=ms)
        rows.append(row)
    return rows


@dataclass
class _FTest:
    statistic: float
    p_value: float
    reject: bool
    failures: int = 0


def naive_f_test(s, model, B, alpha, bank, key):
    """Bootstrap F test of zero slope from the null-restricted plug-in fit.

    An invalid F (negative implied variance) counts as zero evidence.
    """
    naive = NaiveEstimator(model)
    fit = naive(s)

    def f_or_zero(stat):
        F, ok = linreg_F(stat, model.n)
        return F if ok else 0.0

    T = f_or_zero(s)
    stats_b = bootstrap_statistics(model, fit.theta_hat, B, bank, key)
    T_b = np.array([f_or_zero(sb) for sb in stats_b])
    p = p_value(T, T_b)
    return _FTest(T, p, p <= alpha), fit


def _run_task(cfg, task):
    si, rid = task
    return si, rid, run_replicate(cfg, si, rid)


def execute(cfg: StudyConfig, settings: list[Setting]) -> list[dict]:
    tasks = [(si, rid) for si in range(len(settings)) for rid in range(cfg.replicates)]
    workers = resolve_workers(cfg.workers)
    if workers <= 1:
        results = [_run_task(cfg, t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_task, repeat(cfg), tasks, chunksize=1))
    results.sort(key=lambda r: (r[0], r[1]))
    return [row for _, _, rows in results for row in rows]


def summarize(rows: list[dict], kind_by_study: str) -> list[SummaryRow]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["study"], r["method"]), []).append(r)
    out = []
    for (study, method), rs in groups.items():
        ok = [r for r in rs if not r["failed"] or _has_result(r)]
        fails = sum(int(r["failed"]) for r in rs)
        if kind_by_study == "rejection_rate":
            vals = [r["reject"] for r in ok if not _isnan(r["reject"])]
        else:
            vals = [r["covered"] for r in ok if not _isnan(r["covered"])]
        k = len(vals)
        rate = float(np.mean(vals)) if k else math.nan
        se = math.sqrt(rate * (1 - rate) / k) if k else math.nan
        widths = [r["width"] for r in ok if not _isnan(r["width"])]
        out.append(SummaryRow(study, method, len(rs), fails, rate, se,
                              float(np.mean(widths)) if widths else math.nan,
                              float(np.mean([r["runtime_ms"] for r in rs])),
                              sum(int(r["boundary_hit"]) for r in rs), kind_by_study))
    return out


def _has_result(r):
    return not (_isnan(r["covered"]) and _isnan(r["reject"]))


def _isnan(v):
    return isinstance(v, float) and math.isnan(v)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def columns_for(settings: list[Setting]) -> list[str]:
    names = []
    for st in settings:
        for p in st.model.param_names:
            if p not in names:
                names.append(p)
    return ["study", "method", "replicate_id", *[f"estimate_{p}" for p in names], *RESULT_COLUMNS]


def render_csv(cfg: StudyConfig, settings: list[Setting], rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(f"# master_seed={cfg.master_seed}\n")
    buf.write(f"# config={json.dumps(dump_config(_nonvolatile(cfg)), sort_keys=True)}\n")
    for st in settings:
        buf.write(f"# setting {st.label} {json.dumps(_jsonable(st.model.constants()), sort_keys=True)}\n")
    cols = columns_for(settings)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c, math.nan)) for c in cols])
    return buf.getvalue()


def _nonvolatile(cfg):
    # worker count and output path do not affect results
    return replace(cfg, workers=0, output="")


def _jsonable(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, float)):
            out[k] = float(v)
        elif isinstance(v, (np.integer, int)):
            out[k] = int(v)
        else:
            out[k] = str(v) if not isinstance(v, (str, bool)) else v
    return out


def study_kind(cfg: StudyConfig) -> str:
    return "rejection_rate" if cfg.study == "linreg_ht" else "coverage"


def run_study(cfg: StudyConfig, extra_label: dict | None = None):
    """Run all replicates; returns ``(rows, summary)`` and writes files if configured.

    With ``cfg.output`` set, the per-replicate CSV goes to that path and the
    summary JSON next to it with suffix ``.summary.json``.
    """
    settings = build_settings(cfg, extra_label)
    if extra_label:
        # labels with the sweep value must also reach the workers
        rows = execute(cfg, settings)
        relabel = {s0.label: s1.label for s0, s1 in zip(build_settings(cfg), settings)}
        for r in rows:
            r["study"] = relabel[r["study"]]
    else:
        rows = execute(cfg, settings)
    summary = {
        "config": dump_config(_nonvolatile(cfg)),
        "settings": {st.label: _jsonable(st.model.constants()) for st in settings},
        "summary": [s.as_dict() for s in summarize(rows, study_kind(cfg))],
    }
    if cfg.output:
        path = Path(cfg.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(render_csv(cfg, settings, rows))
        path.with_suffix(".summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True,
                                                                default=float) + "\n")
    return rows, summary


SWEEP_AXES = ("R", "eps_or_mu", "clamp_bound", "n")


def sweep_field(cfg: StudyConfig, axis: str) -> str:
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    if axis == "R":
        return "R"
    if axis == "n":
        return "n"
    if axis == "eps_or_mu":
        return "mu" if cfg.study == "linreg_ht" else "eps"
    if cfg.study == "locscale_ci":
        return "U"
    if cfg.study == "linreg_ht":
        return "Delta"
    raise ValueError(f"clamp_bound sweep is not defined for {cfg.study}")


def run_sweep(cfg: StudyConfig, axis: str, values):
    """One study per value of ``axis``; returns the combined summary rows.

    With ``cfg.output`` set, the summary rows are written there as CSV.
    """
    name = sweep_field(cfg, axis)
    all_rows = []
    for v in values:
        if name == "n":
            sub = replace(cfg, n=(int(v),), output="")
        elif name == "R":
            sub = replace(cfg, R=int(v), output="")
        else:
            sub = replace(cfg, output="", **{name: float(v)})
        _, summary = run_study(sub, extra_label={name: v})
        for row in summary["summary"]:
            all_rows.append({"axis": axis, "value": v, **row})
    if cfg.output:
        path = Path(cfg.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        cols = list(all_rows[0].keys()) if all_rows else []
        buf = io.StringIO()
        buf.write(f"# master_seed={cfg.master_seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in all_rows:
            w.writerow([_fmt(r[c]) for c in cols])
        path.write_text(buf.getvalue())
    return all_rows
