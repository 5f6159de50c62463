"""Command-line driver: ``aqia <cmd> [options]``.

Every artifact is a CSV (or JSON) file with a header and a ``.meta.json``
sidecar holding the fully resolved configuration, so any output can be
regenerated from its sidecar alone.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, diagnostics, io
from .ensemble import PRESETS, RegimePreset, get_preset, run_ensemble, sweep_grid
from .meanfield import LoopConfig, spectral_radius
from .ensemble import sample_realization, realization_seed, community_structure
from .scaling import (FssDataset, NoCrossingError, binder_crossing_fit, bootstrap_fit,
                      collapse_fit, fss_scan, hysteresis_sweep, peak_scaling_fit)

log = logging.getLogger("aqia")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_WARN = 0, 1, 2, 3
COMMANDS = ("run", "sweep", "hysteresis", "fss", "bootstrap", "diagnose")


class ConfigError(ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# Flat config keys mapped onto RegimePreset fields.
PRESET_KEYS = {"n_agents": "N", "n_qubits": "n", "mean_j": "meanJ", "sigma_j": "sigmaJ",
               "mean_h": "meanH", "sigma_h": "sigmaH", "gamma": "gamma",
               "edge_density": "edge_density", "realizations": "R", "topology": "topology"}
LOOP_KEYS = {"tol": "tol", "max_iters": "max_iters", "mixing": "mixing",
             "epsilon": "epsilon", "centered_u": "centered_u", "feedback": "feedback"}


@dataclass
class RunConfig:
    command: str = "run"
    preset: RegimePreset = PRESETS["critical"]
    loop: LoopConfig = LoopConfig()
    seed: int = 0
    out: str = "aqia-out"
    threads: int = 1
    grid_j: Optional[list] = None
    grid_gamma: Optional[list] = None
    ratios: Optional[list] = None
    iters_per_step: int = 1
    hysteresis_start: str = "bare"
    resamples: int = 500
    bins: int = 20
    sizes: list = field(default_factory=lambda: [20, 30, 40, 50])
    fss_gammas: list = field(default_factory=lambda: np.linspace(0.5, 1.5, 11).tolist())
    run_dir: Optional[str] = None
    jacobian: bool = True
    binder_pooled: bool = False

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["preset"] = dataclasses.asdict(self.preset)
        d["loop"] = dataclasses.asdict(self.loop)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["preset"] = RegimePreset(**d["preset"])
        d["loop"] = LoopConfig(**d["loop"])
        return cls(**d)


def parse_axis(value, key):
    """``"a:b:k"`` (k points, inclusive) or comma list or a list."""
    if value is None:
        return None
    try:
        if isinstance(value, (list, tuple)):
            return [float(v) for v in value]
        value = str(value)
        if ":" in value:
            a, b, k = value.split(":")
            return np.linspace(float(a), float(b), int(k)).tolist()
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(key, f"cannot parse axis {value!r}") from None


SCALAR_KEYS = {
    "command": str, "preset": None, "seed": int, "out": str, "threads": int,
    "grid_j": "axis", "grid_gamma": "axis", "ratios": "axis", "iters_per_step": int,
    "hysteresis_start": str,
    "resamples": int, "bins": int, "sizes": "axis", "fss_gammas": "axis",
    "run_dir": str, "jacobian": bool, "binder_pooled": bool,
    **{k: None for k in PRESET_KEYS}, **{k: None for k in LOOP_KEYS},
}


def _coerce(key, value, kind):
    try:
        if kind == "axis":
            return parse_axis(value, key)
        if kind is bool and isinstance(value, str):
            return value.lower() in ("1", "true", "yes")
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(key, f"invalid value {value!r}") from None


def parse_config(path=None, flags: Optional[dict] = None) -> RunConfig:
    """Resolve a run configuration from a JSON file and flag overrides.

    Flags win over file values; unknown keys and out-of-range values raise
    :class:`ConfigError` naming the key.
    """
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError("config", f"file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"malformed JSON in {p}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be an object")
        values.update(loaded)
    values.update({k: v for k, v in (flags or {}).items() if v is not None})
    for key in values:
        if key not in SCALAR_KEYS:
            raise ConfigError(key, "unknown configuration key")

    preset_value = values.get("preset", "critical")
    if isinstance(preset_value, dict):
        inline = dict(preset_value)
        unknown = set(inline) - set(PRESET_KEYS) - {"name"}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown preset key")
        base = get_preset(inline.pop("name", "critical"))
        overrides = inline
    else:
        try:
            base = get_preset(str(preset_value))
        except ValueError as exc:
            raise ConfigError("preset", str(exc)) from None
        overrides = {}
    overrides.update({k: values[k] for k in PRESET_KEYS if k in values})
    kinds = {"N": int, "n": int, "R": int, "topology": str}
    changes = {}
    for key, v in overrides.items():
        name = PRESET_KEYS[key]
        changes[name] = _coerce(key, v, kinds.get(name, float))
    try:
        preset = base.with_(**changes)
    except ValueError as exc:
        raise ConfigError(_guess_key(str(exc), overrides), str(exc)) from None
    if not 1 <= preset.n <= 14:
        raise ConfigError("n_qubits", "must lie in [1, 14]")

    loop_kw = {}
    for key, name in LOOP_KEYS.items():
        if key in values:
            kind = bool if key in ("centered_u", "feedback") else (int if key == "max_iters" else float)
            loop_kw[name] = _coerce(key, values[key], kind)
    try:
        loop = LoopConfig(**loop_kw)
    except ValueError as exc:
        raise ConfigError(_guess_key(str(exc), loop_kw), str(exc)) from None

    kw = {}
    for key, kind in SCALAR_KEYS.items():
        if key in values and key not in PRESET_KEYS and key not in LOOP_KEYS and key != "preset":
            kw[key] = _coerce(key, values[key], kind)
    if "sizes" in kw:
        kw["sizes"] = [int(v) for v in kw["sizes"]]
    cfg = RunConfig(preset=preset, loop=loop, **kw)
    if cfg.command not in COMMANDS:
        raise ConfigError("command", f"unknown command {cfg.command!r}")
    if cfg.threads < 1:
        raise ConfigError("threads", "must be >= 1")
    if cfg.hysteresis_start not in ("bare", "converged"):
        raise ConfigError("hysteresis_start", "must be 'bare' or 'converged'")
    if cfg.iters_per_step < 1:
        raise ConfigError("iters_per_step", "must be >= 1")
    if cfg.resamples < 1:
        raise ConfigError("resamples", "must be >= 1")
    if cfg.bins < 5:
        raise ConfigError("bins", "must be >= 5")
    return cfg


def _guess_key(message, candidates):
    for key in candidates:
        if key.split("_")[-1].lower() in message.lower():
            return key
    return next(iter(candidates), "config")


# -- commands -----------------------------------------------------------------

def _meta(cfg: RunConfig, artifact: str, **extra) -> dict:
    return {"artifact": artifact, "version": __version__, "config": cfg.as_dict(), **extra}


def cmd_run(cfg: RunConfig, out: Path) -> int:
    rec = run_ensemble(cfg.preset, cfg.seed, cfg.loop, cfg.threads)
    meta = _meta(cfg, "run")
    io.write_csv(out / "summaries.csv", ["realization", "agent", "S", "B", "U"],
                 ([res.index, i, *row] for res in rec.results
                  for i, row in enumerate(res.summaries)), meta)
    io.write_csv(out / "energy_trace.csv", ["realization", "iteration", "energy"],
                 ([res.index, k, e] for res in rec.results
                  for k, e in enumerate(res.trace.energies)), meta)
    io.write_csv(out / "network_edges.csv", ["realization", "i", "j", "weight"],
                 ([res.index, i, j, res.aggregate[i, j]] for res in rec.results
                  for i, j in zip(*np.nonzero(np.triu(res.mask, 1)))), meta)
    stats = {"aggregates": rec.as_dict(), "failures": rec.failures,
             "per_realization": [
                 {"index": res.index, "seed": list(res.seed), "qEA": res.qEA,
                  "absS": res.mean_absS, "meanS": res.mean_S, "Q": res.Q,
                  "labels": res.labels, "converged": res.fixed_point.converged,
                  "iterations": res.fixed_point.iterations, "energy": res.fixed_point.energy,
                  "retries": res.trace.retries}
                 for res in rec.results]}
    if cfg.jacobian:
        first = next((res for res in rec.results if res.fixed_point.converged), None)
        if first is not None:
            agents, mask = sample_realization(cfg.preset, realization_seed(cfg.seed, first.index))
            stats["jacobian"] = {"realization": first.index,
                                 "spectral_radius": spectral_radius(agents, mask, cfg.loop,
                                                                    first.fixed_point)}
    io.write_json(out / "stats.json", stats, meta)
    return EXIT_WARN if rec.n_failed else EXIT_OK


def cmd_sweep(cfg: RunConfig, out: Path) -> int:
    Js = cfg.grid_j or [cfg.preset.meanJ]
    gs = cfg.grid_gamma or [cfg.preset.gamma]
    grid = sweep_grid(cfg.preset, Js, gs, cfg.seed, cfg.loop, cfg.threads)
    rows = []
    for a, J in enumerate(grid.J_values):
        for b, g in enumerate(grid.gamma_values):
            rec = grid.records[a][b]
            sem = (rec.absS_sem, rec.qEA_sem, rec.Q_sem, rec.cv_qEA) if rec else (np.nan,) * 4
            rows.append([J, g, grid.absS[a, b], sem[0], grid.qEA[a, b], sem[1],
                         grid.chi[a, b], grid.Q[a, b], sem[2], sem[3], grid.status[a, b]])
    io.write_csv(out / "grid.csv", ["J", "gamma", "absS", "absS_sem", "qEA", "qEA_sem", "chi",
                                    "Q", "Q_sem", "cv_qEA", "status"], rows, _meta(cfg, "sweep"))
    return EXIT_OK if all(s == "ok" for s in grid.status.ravel()) else EXIT_WARN


def cmd_hysteresis(cfg: RunConfig, out: Path) -> int:
    ratios = cfg.ratios or np.linspace(0.5, 1.5, 11).tolist()
    sw = hysteresis_sweep(cfg.preset, ratios, cfg.iters_per_step, cfg.seed, cfg.loop,
                          threads=cfg.threads, start=cfg.hysteresis_start)
    io.write_csv(out / "hysteresis.csv", ["ratio", "forward", "backward"],
                 zip(sw.ratios, sw.forward, sw.backward),
                 _meta(cfg, "hysteresis", loop_area=sw.loop_area,
                       realizations=sw.realizations))
    return EXIT_OK


FSS_RAW_HEADER = ["N", "gamma", "absS", "absS_sem", "chi", "chi_err", "U4", "U4_err", "count"]
FSS_REAL_HEADER = ["N", "gamma_index", "gamma", "realization", "absS", "meanS", "S2", "S4",
                   "converged"]


def write_fss(data: FssDataset, out: Path, meta) -> None:
    io.write_csv(out / "fss_raw.csv", FSS_RAW_HEADER, data.rows(), meta)
    rows = []
    for (N, b), s in sorted(data.samples.items()):
        for r in range(len(s["absS"])):
            rows.append([N, b, data.gammas[b], r, s["absS"][r], s["meanS"][r], s["S2"][r],
                         s["S4"][r], bool(s["converged"][r])])
    io.write_csv(out / "fss_realizations.csv", FSS_REAL_HEADER, rows, meta)


def read_fss(run_dir) -> FssDataset:
    """Dataset from ``fss_realizations.csv`` if present, else ``fss_raw.csv``."""
    run_dir = Path(run_dir)
    real = run_dir / "fss_realizations.csv"
    if real.exists():
        c = io.read_columns(real)
        sizes = sorted({int(v) for v in c["N"]})
        nb = int(c["gamma_index"].max()) + 1
        gammas = np.empty(nb)
        samples = {}
        for N in sizes:
            for b in range(nb):
                sel = (c["N"] == N) & (c["gamma_index"] == b)
                order = np.argsort(c["realization"][sel], kind="stable")
                gammas[b] = c["gamma"][sel][0]
                samples[(N, b)] = {k: c[k][sel][order] for k in ("absS", "meanS", "S2", "S4")}
                samples[(N, b)]["converged"] = c["converged"][sel][order].astype(bool)
        return FssDataset.from_samples(sizes, gammas, samples)
    c = io.read_columns(run_dir / "fss_raw.csv")
    sizes = np.unique(c["N"]).astype(int)
    gammas = np.unique(c["gamma"])
    table = {k: np.full((sizes.size, gammas.size), np.nan) for k in ("absS", "absS_sem", "U4", "count")}
    for i in range(c["N"].size):
        a = np.searchsorted(sizes, int(c["N"][i]))
        b = np.searchsorted(gammas, c["gamma"][i])
        for k in table:
            table[k][a, b] = c[k][i]
    return FssDataset.from_table(sizes, gammas, table["absS"], table["absS_sem"], table["U4"],
                                 table["count"])


def fit_all(data: FssDataset, bins: int) -> dict:
    fits = {}
    for name, fn in (("collapse", lambda: collapse_fit(data, bins=bins)),
                     ("binder-crossing", lambda: binder_crossing_fit(data, bins=bins)),
                     ("peak-scaling", lambda: peak_scaling_fit(data))):
        try:
            fits[name] = fn().as_dict()
        except (ValueError, NoCrossingError, RuntimeError) as exc:
            fits[name] = {"method": name, "error": str(exc)}
    return fits


def cmd_fss(cfg: RunConfig, out: Path) -> int:
    data = fss_scan(cfg.preset, cfg.sizes, cfg.fss_gammas, cfg.preset.R, cfg.seed, cfg.loop,
                    cfg.threads, pooled_binder=cfg.binder_pooled)
    meta = _meta(cfg, "fss")
    write_fss(data, out, meta)
    fits = fit_all(data, cfg.bins)
    io.write_json(out / "fss_fit.json", fits, meta)
    return EXIT_WARN if any("error" in f for f in fits.values()) else EXIT_OK


def cmd_bootstrap(cfg: RunConfig, out: Path) -> int:
    if cfg.run_dir:
        data = read_fss(cfg.run_dir)
    else:
        data = fss_scan(cfg.preset, cfg.sizes, cfg.fss_gammas, cfg.preset.R, cfg.seed,
                        cfg.loop, cfg.threads)
        write_fss(data, out, _meta(cfg, "fss"))
    bs = bootstrap_fit(data, cfg.resamples, cfg.seed, cfg.bins, threads=cfg.threads)
    meta = _meta(cfg, "bootstrap")
    io.write_csv(out / "bootstrap_dist.csv",
                 ["resample", "gamma_c", "nu", "beta_over_nu", "collapse_variance"],
                 ([k, *row] for k, row in enumerate(bs.distribution)), meta)
    io.write_json(out / "bootstrap.json", {"median": bs.fit.as_dict(),
                                           "full_data": bs.full_data.as_dict(),
                                           "failures": bs.failures}, meta)
    return EXIT_WARN if bs.failures else EXIT_OK


def load_run(run_dir):
    """Summaries and masks stored by ``run``, keyed by realization index."""
    run_dir = Path(run_dir)
    c = io.read_columns(run_dir / "summaries.csv")
    meta = io.read_sidecar(run_dir / "summaries.csv")
    cfg = RunConfig.from_dict(meta["config"])
    summaries = {}
    for r in np.unique(c["realization"]).astype(int):
        sel = c["realization"] == r
        order = np.argsort(c["agent"][sel])
        summaries[r] = np.column_stack([c["S"][sel][order], c["B"][sel][order],
                                        c["U"][sel][order]])
    e = io.read_columns(run_dir / "network_edges.csv")
    masks = {}
    for r, s in summaries.items():
        N = s.shape[0]
        mask = np.zeros((N, N), dtype=bool)
        sel = e["realization"] == r
        i, j = e["i"][sel].astype(int), e["j"][sel].astype(int)
        mask[i, j] = True
        mask[j, i] = True
        masks[r] = mask
    return cfg, summaries, masks


def cmd_diagnose(cfg: RunConfig, out: Path) -> int:
    if not cfg.run_dir:
        raise ConfigError("run_dir", "diagnose needs --run-dir pointing at a run output")
    run_cfg, summaries, masks = load_run(cfg.run_dir)
    stats_path = Path(cfg.run_dir) / "stats.json"
    original = json.loads(stats_path.read_text()) if stats_path.exists() else None
    per = []
    for r, m in summaries.items():
        agg, comm = community_structure(m, masks[r], run_cfg.loop)
        ns = diagnostics.network_stats(agg)
        per.append({"index": r, "Q": comm.Q, "labels": comm.labels,
                    "mean_clustering": float(ns.clustering.mean()),
                    "mean_strength": float(ns.strengths.mean())})
    arrays = [summaries[r] for r in sorted(summaries)]
    C1, meta1 = diagnostics.correlation_matrix(arrays, "per-realization", sort=True)
    C2, meta2 = diagnostics.correlation_matrix(arrays, "ensemble")
    meta = _meta(cfg, "diagnose", source=str(cfg.run_dir))
    for name, C, cm in (("correlation_realization0.csv", C1, meta1),
                        ("correlation_ensemble.csv", C2, meta2)):
        io.write_csv(out / name, [f"c{j}" for j in range(C.shape[1])], C.tolist(),
                     {**meta, "correlation": cm})
    result = {"per_realization": per}
    if original is not None:
        orig = {p["index"]: p for p in original["per_realization"]}
        result["matches_original"] = all(
            orig[p["index"]]["Q"] == p["Q"] and list(orig[p["index"]]["labels"]) == list(p["labels"])
            for p in per if p["index"] in orig)
    io.write_json(out / "diagnose.json", result, meta)
    return EXIT_OK if result.get("matches_original", True) else EXIT_WARN


HANDLERS = {"run": cmd_run, "sweep": cmd_sweep, "hysteresis": cmd_hysteresis, "fss": cmd_fss,
            "bootstrap": cmd_bootstrap, "diagnose": cmd_diagnose}


def run_command(cmd: str, cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[cmd](cfg, out)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aqia", description="Adaptive quantum Ising agent ensembles.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--mean-j", type=float)
    p.add_argument("--sigma-j", type=float)
    p.add_argument("--mean-h", type=float)
    p.add_argument("--sigma-h", type=float)
    p.add_argument("--n-agents", type=int)
    p.add_argument("--n-qubits", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--edge-density", type=float)
    p.add_argument("--topology", choices=["chain", "ring", "complete"])
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--mixing", type=float)
    p.add_argument("--grid-j", help="a:b:k or comma list")
    p.add_argument("--grid-gamma", help="a:b:k or comma list")
    p.add_argument("--ratios", help="a:b:k or comma list")
    p.add_argument("--iters-per-step", type=int)
    p.add_argument("--hysteresis-start", choices=["bare", "converged"])
    p.add_argument("--resamples", type=int)
    p.add_argument("--bins", type=int)
    p.add_argument("--sizes", help="comma list of agent counts for fss")
    p.add_argument("--fss-gammas", help="a:b:k or comma list")
    p.add_argument("--run-dir")
    p.add_argument("--no-jacobian", dest="jacobian", action="store_const", const=False)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose")}
    if flags.get("threads") is None and os.environ.get("AQIA_THREADS"):
        flags["threads"] = os.environ["AQIA_THREADS"]
    try:
        cfg = parse_config(args.config, flags)
    except ConfigError as exc:
        print(f"aqia: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run_command(cfg.command, cfg)
    except ConfigError as exc:
        print(f"aqia: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level exit-code boundary
        log.exception("run failed")
        print(f"aqia: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
