"""Config-driven experiments with deterministic, hash-stamped outputs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..couplings import CouplingLaw, RegimeParams, sample_matrix, structure_diagnostics
from ..errors import ConfigError, InputError, StructuralError
from .config import ExperimentConfig, workers
from .stats import StatReport, ks_exponential, mean_se

log = logging.getLogger(__name__)

RESULT_FORMAT = "levyglass.result"


@dataclass
class ExperimentResult:
    reports: list
    out_dir: str
    files: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(r.passed for r in self.reports)


# building blocks ---------------------------------------------------------

def build_law(cfg):
    law = cfg["law"]
    alpha, n = law["alpha"], law["n"]
    if law["variant"] == "pareto":
        return CouplingLaw.pareto(alpha, n)
    if law["variant"] == "general":
        return CouplingLaw.general(alpha, n, law["survival_t"], law["survival_p"])
    edges = {(int(i), int(j)): float(v) for i, j, v in law.get("planted", [])}
    base = CouplingLaw.pareto(alpha, n) if law.get("base", "none") == "pareto" else None
    return CouplingLaw.planted_law(n, edges, base=base, base_scale=law.get("base_scale", 1.0),
                                   alpha=alpha)


def build_regime(cfg, n=None):
    r, law = cfg["regime"], cfg["law"]
    n = law["n"] if n is None else n
    kw = dict(gamma=r.get("gamma", 1.0), alpha=law["alpha"], rho=r.get("rho"))
    if "log_t" in r:
        return RegimeParams.from_log_time(r["beta"], r["log_t"], n, **kw)
    if "a" not in r:
        raise ConfigError("regime needs a or log_t")
    return RegimeParams(beta=r["beta"], a=r["a"], n=n, **kw)


def _set_threads():
    try:
        import numba
        numba.set_num_threads(min(workers(), numba.config.NUMBA_NUM_THREADS))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _decomp(J, regime):
    from ..wells import WellDecomposition
    return WellDecomposition(J, regime)


def _first_well(decomp):
    from ..wells import WellLabel
    return WellLabel(tuple([1] * decomp.K))


# per-kind runners --------------------------------------------------------
# each returns (reports, data, tables); tables map name -> (header, rows)

def _run_sample(cfg, ctx):
    J = ctx["J"]
    reports = [StatReport("max_abs_coupling", float(J.abs_sorted[0]) if J.n > 1 else 0.0,
                          n=J.n, seed=cfg["seeds"]["matrix"])]
    iu, ju = np.triu_indices(J.n, 1)
    order = {(int(i), int(j)): r + 1 for r, (i, j) in enumerate(J.rank_index)}
    rows = [(int(i), int(j), float(J.values[i, j]), order[(int(i), int(j))])
            for i, j in zip(iu, ju)]
    return reports, {"coupling": json.loads(J.to_json())}, {
        "coupling": (["i", "j", "J_ij", "rank"], rows)}


def _run_diagnostics(cfg, ctx):
    law0 = cfg["law"]
    sizes = cfg["samples"]["sizes"] if law0["variant"] == "pareto" else [law0["n"]]
    n_seeds = cfg["samples"]["n_seeds"]
    base_seed = cfg["seeds"]["matrix"]
    rows, reports = [], []
    freq = {}
    for N in sizes:
        regime = build_regime(cfg, N)
        law = CouplingLaw.pareto(law0["alpha"], N) if law0["variant"] == "pareto" \
            else build_law(cfg)
        acc = None
        for k in range(n_seeds):
            rep = structure_diagnostics(sample_matrix(law, base_seed + k), regime)
            flags = dict(rep.lemma_passes(), all=all(rep.lemma_passes().values()),
                         disjoint_top_edges=rep.passes["disjoint_top_edges"])
            acc = {f: 0 for f in flags} if acc is None else acc
            for f, v in flags.items():
                acc[f] += int(v)
        for f, c in acc.items():
            rows.append((N, f, c / n_seeds, n_seeds))
            freq.setdefault(f, []).append(c / n_seeds)
    for f, vals in freq.items():
        mono = bool(np.all(np.diff(vals) >= 0))
        reports.append(StatReport(f"pass_rate_{f}", vals[-1], n=n_seeds, seed=base_seed,
                                  passed=mono, extra={"sizes": list(sizes), "rates": vals}))
    return reports, {"sizes": list(sizes)}, {
        "pass_rates": (["N", "event", "frequency", "n_seeds"], rows)}


def _run_simulate(cfg, ctx):
    from ..dynamics import EngineKind, run, uniform_starts
    J = ctx["J"]
    dur = cfg["samples"]["duration"]
    x0 = uniform_starts(J.n, 1, cfg["seeds"]["run"])[0]
    traj = run(J, cfg["regime"]["beta"], x0, dur, EngineKind.parse(cfg["engine"]),
               seed=cfg["seeds"]["run"])
    rows = [(float(t), int(v), int(s)) for t, v, s in
            zip(traj.times, traj.vertices, traj.new_spins)]
    return [StatReport("n_events", float(len(traj.times)), n=1, seed=cfg["seeds"]["run"])], \
        {"summary": traj.summary()}, {"trajectory": (["time", "vertex", "new_spin"], rows)}


def _run_escape(cfg, ctx):
    from ..dynamics import escape_times, sample_in_well
    from ..exact import DENSE_CAP, verify_well_separation
    from ..wells import two_state_rates
    J, beta = ctx["J"], cfg["regime"]["beta"]
    decomp = _decomp(J, ctx["regime"])
    if decomp.K == 0:
        raise InputError("escape needs at least one relevant edge")
    well = _first_well(decomp)
    n_paths, seed = cfg["samples"]["n_paths"], cfg["seeds"]["run"]
    x0 = sample_in_well(J, beta, decomp, well, n_paths, seed)
    horizon = cfg["samples"].get("horizon", math.inf)
    es = escape_times(J, beta, decomp, well, x0, horizon=horizon, seed=seed)
    obs = es.observed
    if J.n <= DENSE_CAP:
        ref_mean = verify_well_separation(J, beta, decomp, well).mean_exit
        source = "exact-linear-solve"
    else:
        ch = two_state_rates(J, beta, decomp, 1)
        ref_mean = 2.0 / (ch.rate_plus + ch.rate_minus)
        source = "two-state-rate"
    stat, p = ks_exponential(obs, 1.0 / ref_mean) if len(obs) > 1 else (math.nan, math.nan)
    m, se = mean_se(obs)
    reports = [
        StatReport("escape_mean", m, se=se, n=len(obs), seed=seed,
                   extra={"reference_mean": ref_mean, "reference": source,
                          "censor_fraction": es.censor_fraction}),
        StatReport("escape_ks", stat, statistic=stat, p_value=p, threshold=0.01,
                   passed=bool(p >= 0.01), n=len(obs), seed=seed),
    ]
    rows = [(float(t), int(c)) for t, c in zip(es.times, es.censored)]
    return reports, {"escape": json.loads(es.to_json())}, {
        "escape_times": (["time", "censored"], rows)}


def _run_autocorr(cfg, ctx):
    from ..dynamics import autocorrelation_distribution
    J, beta = ctx["J"], cfg["regime"]["beta"]
    decomp = _decomp(J, ctx["regime"])
    smp, seed = cfg["samples"], cfg["seeds"]["run"]
    law = autocorrelation_distribution(J, beta, decomp, smp["s"], smp["n_paths"], seed,
                                       log_t_scale=ctx["regime"].log_t_scale,
                                       surrogate=smp["surrogate"])
    d = law.to_dict()
    reports = [StatReport("overlap_tv_binned", d["tv_binned"], n=smp["n_paths"], seed=seed,
                          extra=d)]
    return reports, d, {
        "overlaps_dynamic": (["q"], [(float(q),) for q in law.dynamic]),
        "overlaps_replica": (["q"], [(float(q),) for q in law.replica]),
    }


def _run_wells(cfg, ctx):
    from ..wells import timescale_index, two_state_rates
    J, beta = ctx["J"], cfg["regime"]["beta"]
    decomp = _decomp(J, ctx["regime"])
    lt, ld = ctx["regime"].log_t_scale, cfg["regime"].get("log_delta", -10.0)
    rows, reports = [], []
    for s in cfg["samples"]["times_s"]:
        if s <= 0:
            continue
        try:
            ti = timescale_index(decomp, log_time=lt + math.log(s), log_delta=ld)
            rows.append((float(s), ti.L, ti.case))
        except StructuralError as exc:
            rows.append((float(s), -1, -1))
            log.warning("timescale index at s=%s: %s", s, exc)
    for L in range(1, decomp.K + 1):
        ch = two_state_rates(J, beta, decomp, L, context=tuple([1] * (L - 1)))
        reports.append(StatReport(f"two_state_rate_{L}", ch.rate_plus, se=ch.se_plus,
                                  n=1, seed=None, extra={"rate_minus": ch.rate_minus}))
    return reports, {"decomposition": decomp.to_dict()}, {
        "timescale_index": (["s", "L", "case"], rows)}


def _run_yproc(cfg, ctx):
    from ..wells import WellLabel
    from ..yprocess import (RateTable, detailed_balance_residual, stationary_Y,
                            y_generator)
    J, beta = ctx["J"], cfg["regime"]["beta"]
    decomp = _decomp(J, ctx["regime"])
    rates = RateTable(J, beta, decomp, log_t_scale=ctx["regime"].log_t_scale)
    stat = stationary_Y(J, beta, decomp, rates=rates)
    res = detailed_balance_residual(stat, y_generator(rates))
    rows = []
    for code in range(1 << decomp.K):
        y = WellLabel.from_code(code, decomp.K)
        for l, lr in enumerate(rates.log_rates(y.spins), start=1):
            rows.append((str(y), l, float(lr), float(stat.probs[code])))
    return [StatReport("detailed_balance_residual", res, threshold=1e-10,
                       passed=bool(res <= 1e-10), n=1 << decomp.K, seed=None)], \
        {"stationary": stat.probs.tolist()}, {
        "y_rates": (["well", "l", "log_rate", "stationary_prob"], rows)}


def _run_compare(cfg, ctx):
    from ..yprocess import compare_skeleton
    J, beta = ctx["J"], cfg["regime"]["beta"]
    decomp = _decomp(J, ctx["regime"])
    smp, seed = cfg["samples"], cfg["seeds"]["run"]
    rep = compare_skeleton(J, beta, decomp, smp["times_s"], smp["n_paths"], seed,
                           log_t_scale=ctx["regime"].log_t_scale,
                           n_bootstrap=smp["n_bootstrap"])
    d = json.loads(rep.to_json())
    reports = [StatReport(f"tv_s={s}", t["estimate"], ci=tuple(t["ci"]), n=smp["n_paths"],
                          seed=seed, extra={"bias": t["bias"], "null_mean": t["null_mean"]})
               for s, t in zip(smp["times_s"], d["tv_single"])]
    rows = [(float(s), float(t["estimate"]), float(f))
            for s, t, f in zip(smp["times_s"], d["tv_single"], d["transit_fraction"])]
    return reports, d, {"tv_by_time": (["s", "tv", "transit_fraction"], rows)}


def _run_exact(cfg, ctx):
    from ..exact import build_generator, mixing_time, spectral_gap, verify_well_separation
    J, beta = ctx["J"], cfg["regime"]["beta"]
    G = build_generator(J, beta)
    gap = spectral_gap(G)
    tmix = mixing_time(G)
    reports = [
        StatReport("detailed_balance_error", G.detailed_balance_error(), threshold=1e-10,
                   passed=bool(G.detailed_balance_error() <= 1e-10), n=G.size, seed=None),
        StatReport("spectral_gap", gap.gap, n=G.size, seed=None),
        StatReport("mixing_time", tmix, n=G.size, seed=None),
    ]
    data = {"gap": gap.gap, "t_mix": tmix}
    if "a" in cfg["regime"] or "log_t" in cfg["regime"]:
        decomp = _decomp(J, ctx["regime"])
        if decomp.K:
            sep = verify_well_separation(J, beta, decomp, _first_well(decomp))
            reports.append(StatReport("separation_ratio", sep.ratio, threshold=1e-3,
                                      passed=bool(sep.ratio < 1e-3), n=sep.interior_size,
                                      seed=None, extra=sep.to_dict()))
            data["separation"] = sep.to_dict()
    rows = [(float(t), float(v)) for t, v in
            zip(*_tv_rows(G, max(tmix, 1e-3)))]
    return reports, data, {"tv_curve": (["t", "worst_tv"], rows)}


def _tv_rows(G, tmix):
    from ..exact import worst_tv
    ts = np.linspace(0.0, 3.0 * tmix, 31)
    return ts, [worst_tv(G, t) for t in ts]


def _run_fk(cfg, ctx):
    from ..fk import beta0, correlation_identity_all, mean_bond_prob, uniformity_check
    J, beta = ctx["J"], cfg["regime"]["beta"]
    alpha = cfg["law"]["alpha"]
    reports, rows = [], []
    b0 = beta0(alpha) if 0 < alpha < 1 else math.nan
    data = {"beta0": b0}
    if J.n <= 6:
        worst = 0.0
        for (i, j), r in correlation_identity_all(J, beta).items():
            worst = max(worst, r.difference)
            rows.append((i, j, r.spin_side, r.rc_side))
        reports.append(StatReport("correlation_identity_max_diff", worst, threshold=1e-12,
                                  passed=bool(worst <= 1e-12), n=len(rows), seed=None))
    if not math.isnan(b0):
        mbp = mean_bond_prob(alpha, beta, J.n)
        reports.append(StatReport("mean_bond_prob", mbp, n=J.n, seed=None,
                                  extra={"beta_over_beta0": beta / b0}))
    L = cfg["samples"]["L"]
    if "a" in cfg["regime"] or "log_t" in cfg["regime"]:
        decomp = _decomp(J, ctx["regime"])
        if decomp.K > L:
            u = uniformity_check(J, beta, decomp, L, tuple([1] * L),
                                 cfg["samples"]["n_paths"], cfg["seeds"]["run"])
            reports.append(StatReport("skeleton_uniformity_tv", u.tv, ci=u.ci,
                                      n=u.n_samples, seed=cfg["seeds"]["run"],
                                      extra={"null_mean": u.null_mean}))
    return reports, data, {"correlations": (["i", "j", "spin_side", "rc_side"], rows)}


RUNNERS = {
    "sample": _run_sample, "diagnostics": _run_diagnostics, "simulate": _run_simulate,
    "escape": _run_escape, "autocorrelation": _run_autocorr, "wells": _run_wells,
    "yproc": _run_yproc, "compare-skeleton": _run_compare, "exact-report": _run_exact,
    "fk-report": _run_fk,
}


# persistence -------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _csv_bytes(header, rows, stamp, xy):
    buf = io.StringIO()
    buf.write(f"# config_hash={stamp['config_hash']} seed={stamp['seed']} "
              f"x={xy[0]} y={xy[1]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue().encode()


def run_experiment(config, out_dir=None):
    """Run one configured experiment and write its artifacts.

    ``result.json`` and the CSV tables are deterministic functions of the
    config; ``manifest.json`` adds a timestamp and file digests.
    """
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig(config)
    _set_threads()
    h = cfg.hash()
    out_dir = out_dir or os.path.join(cfg.output_dir(),
                                      f"{cfg['output']['prefix']}{cfg.kind}-{h}")
    ctx = {}
    if cfg.kind != "diagnostics":
        ctx["J"] = sample_matrix(build_law(cfg), cfg["seeds"]["matrix"])
        if "a" in cfg["regime"] or "log_t" in cfg["regime"]:
            ctx["regime"] = build_regime(cfg)
        elif cfg.kind in ("escape", "autocorrelation", "wells", "yproc", "compare-skeleton"):
            raise ConfigError(f"{cfg.kind} needs regime.a or regime.log_t")
    reports, data, tables = RUNNERS[cfg.kind](cfg, ctx)
    os.makedirs(out_dir, exist_ok=True)
    seed = dict(cfg["seeds"])
    stamp = {"config_hash": h, "seed": json.dumps(seed, sort_keys=True).replace(" ", "")}
    files = {}
    for name, (header, rows) in sorted(tables.items()):
        path = os.path.join(out_dir, f"{name}.csv")
        with open(path, "wb") as fh:
            fh.write(_csv_bytes(header, rows, stamp, (header[0], header[-1])))
        files[f"{name}.csv"] = path
    result = {"format": RESULT_FORMAT, "version": 1, "config_hash": h, "seeds": seed,
              "kind": cfg.kind,
              "config": {k: v for k, v in cfg.to_dict().items() if k != "output"},
              "reports": [_jsonable(r.to_dict()) for r in reports], "data": _jsonable(data)}
    rpath = os.path.join(out_dir, "result.json")
    with open(rpath, "w") as fh:
        json.dump(result, fh, sort_keys=True, indent=1)
        fh.write("\n")
    files["result.json"] = rpath
    manifest = {"format": "levyglass.manifest", "version": 1, "config_hash": h, "seeds": seed,
                "config": cfg.to_dict(), "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                "software": _versions(), "workers": workers(),
                "files": {k: _sha256(v) for k, v in sorted(files.items())}}
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    files["manifest.json"] = mpath
    return ExperimentResult(reports, out_dir, files, data)


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _versions():
    import numba
    import scipy
    return {"levyglass": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__}


def load_result(path, config=None):
    """Load a result directory or ``result.json``; refuses hash mismatches."""
    rpath = os.path.join(path, "result.json") if os.path.isdir(path) else path
    with open(rpath) as fh:
        res = json.load(fh)
    if res.get("format") != RESULT_FORMAT:
        raise ConfigError(f"{rpath} is not a result file")
    own = ExperimentConfig(res["config"]).hash()
    if own != res["config_hash"]:
        raise ConfigError("result file config does not match its recorded hash")
    if config is not None:
        cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig(config)
        if cfg.hash() != res["config_hash"]:
            raise ConfigError(f"config hash {cfg.hash()} does not match result "
                              f"{res['config_hash']}")
    mpath = os.path.join(os.path.dirname(rpath), "manifest.json")
    if os.path.exists(mpath):
        with open(mpath) as fh:
            man = json.load(fh)
        if man.get("config_hash") != res["config_hash"]:
            raise ConfigError("manifest and result hashes differ")
    return res


def replay(manifest_path, out_dir):
    """Re-run a manifest's config into ``out_dir`` and compare file digests."""
    mpath = os.path.join(manifest_path, "manifest.json") if os.path.isdir(manifest_path) \
        else manifest_path
    with open(mpath) as fh:
        man = json.load(fh)
    cfg = ExperimentConfig(man["config"])
    if cfg.hash() != man["config_hash"]:
        raise ConfigError("manifest config does not match its recorded hash")
    res = run_experiment(cfg, out_dir=out_dir)
    mismatched = [k for k, d in man["files"].items()
                  if k in res.files and _sha256(res.files[k]) != d]
    return res, mismatched
