"""Hysteresis sweeps and finite-size-scaling analysis."""
from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from . import diagnostics
from .agent import AgentBatch, AgentParams
from .ensemble import RegimePreset, realization_seed, sample_realization
from .meanfield import LoopConfig, apply_map, bare_summaries, run_to_convergence

log = logging.getLogger(__name__)

DEFAULT_BINS = 20
DEFAULT_STARTS = tuple(itertools.product((0.8, 1.0, 1.2), (0.5, 1.0, 1.5), (0.1, 0.3, 0.5)))
NU_BOUNDS = (0.2, 5.0)
BETA_NU_BOUNDS = (0.0, 2.0)


class NoCrossingError(ValueError):
    pass


def _pool_map(func, tasks, threads):
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [func(t) for t in tasks]


# -- hysteresis ---------------------------------------------------------------

@dataclass
class SweepResult:
    ratios: np.ndarray
    forward: np.ndarray
    backward: np.ndarray
    loop_area: float
    iters_per_step: int
    realizations: int


def _shift_coupling(agents: Sequence[AgentParams], base_mean: float, new_mean: float):
    return [AgentParams(a.n, a.bonds, a.h, a.J + (new_mean - base_mean), a.gamma) for a in agents]


def _hysteresis_task(args):
    preset, ratios, iters_per_step, master_seed, r, config, start = args
    agents, mask = sample_realization(preset, realization_seed(master_seed, r))
    batches = [AgentBatch.from_agents(_shift_coupling(agents, preset.meanJ, rho * preset.gamma))
               for rho in ratios]
    if start == "converged":
        m = run_to_convergence(batches[0], mask, config)[0].summaries
    else:
        m = bare_summaries(batches[0])
    forward = np.empty(len(ratios))
    backward = np.empty(len(ratios))
    for k, batch in enumerate(batches):
        for _ in range(iters_per_step):
            m = apply_map(batch, m, mask, config)[0]
        forward[k] = m[:, 0].mean()
    for k in reversed(range(len(batches))):
        for _ in range(iters_per_step):
            m = apply_map(batches[k], m, mask, config)[0]
        backward[k] = m[:, 0].mean()
    return forward, backward


def hysteresis_sweep(base: RegimePreset, ratios, iters_per_step: int, master_seed: int,
                     config: LoopConfig = LoopConfig(), realizations: Optional[int] = None,
                     threads: int = 1, start: str = "bare") -> SweepResult:
    """Sweep mean J / gamma up and back down with a fixed map budget per step.

    Each realization keeps its disorder; bond couplings are shifted so their
    mean follows ``ratio * gamma``.  The state is carried from step to step
    and receives exactly ``iters_per_step`` map applications at each ratio.
    Branches are averaged over realizations; ``loop_area`` is the absolute
    trapezoidal integral of ``forward - backward`` over the schedule.

    ``start="bare"`` begins from the zero-field summaries at the first
    ratio, ``start="converged"`` from the fixed point there.
    """
    if start not in ("bare", "converged"):
        raise ValueError(f"unknown start {start!r}")
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size < 2:
        raise ValueError("need at least two ratios")
    d = np.diff(ratios)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("ratio schedule must be strictly monotonic")
    if iters_per_step < 1:
        raise ValueError("iters_per_step must be >= 1")
    R = base.R if realizations is None else int(realizations)
    tasks = [(base, ratios, int(iters_per_step), master_seed, r, config, start)
             for r in range(R)]
    out = _pool_map(_hysteresis_task, tasks, threads)
    forward = np.mean([f for f, _ in out], axis=0)
    backward = np.mean([b for _, b in out], axis=0)
    area = abs(float(np.trapezoid(forward - backward, ratios)))
    return SweepResult(ratios, forward, backward, area, int(iters_per_step), R)


# -- finite-size-scaling data -------------------------------------------------

@dataclass
class FssDataset:
    """Order-parameter table over system sizes and transverse fields.

    Table arrays have shape ``(len(sizes), len(gammas))``.  ``samples`` maps
    ``(N, gamma_index)`` to per-realization arrays with keys ``absS``,
    ``meanS``, ``S2`` and ``S4`` (agent-level moments) when raw data exist.
    """

    sizes: np.ndarray
    gammas: np.ndarray
    absS: np.ndarray
    sem: np.ndarray
    chi: np.ndarray
    chi_err: np.ndarray
    U4: np.ndarray
    U4_err: np.ndarray
    counts: np.ndarray
    samples: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, sizes, gammas, samples, pooled_binder: bool = False):
        sizes = np.asarray(sizes, dtype=int)
        gammas = np.asarray(gammas, dtype=float)
        shape = (sizes.size, gammas.size)
        absS, sem, U4, U4_err = (np.full(shape, np.nan) for _ in range(4))
        counts = np.zeros(shape, dtype=int)
        for a, N in enumerate(sizes):
            for b in range(gammas.size):
                s = samples[(int(N), b)]
                x = np.asarray(s["absS"], dtype=float)
                counts[a, b] = x.size
                absS[a, b] = x.mean()
                sem[a, b] = x.std(ddof=1) / math.sqrt(x.size) if x.size > 1 else 0.0
                if pooled_binder:
                    S2, S4 = np.asarray(s["S2"]), np.asarray(s["S4"])
                    U4[a, b] = (1.0 - S4.mean() / (3.0 * S2.mean() ** 2)
                                if S2.mean() > 0 else np.nan)
                    U4_err[a, b] = np.nan
                else:
                    mS = np.asarray(s["meanS"], dtype=float)
                    if mS.size >= 2:
                        U4[a, b] = diagnostics.binder_cumulant(mS)
                    if mS.size >= 3:
                        U4_err[a, b] = diagnostics.jackknife_error(
                            mS, diagnostics.binder_cumulant)
        chi, chi_err = _chi_table(gammas, absS, sem)
        return cls(sizes, gammas, absS, sem, chi, chi_err, U4, U4_err, counts, dict(samples))

    @classmethod
    def from_table(cls, sizes, gammas, absS, sem=None, U4=None, counts=None):
        """Dataset from tabulated means only (no per-realization samples)."""
        sizes = np.asarray(sizes, dtype=int)
        gammas = np.asarray(gammas, dtype=float)
        absS = np.asarray(absS, dtype=float)
        shape = absS.shape
        sem = np.zeros(shape) if sem is None else np.asarray(sem, dtype=float)
        U4 = np.full(shape, np.nan) if U4 is None else np.asarray(U4, dtype=float)
        counts = np.zeros(shape, dtype=int) if counts is None else np.asarray(counts, dtype=int)
        chi, chi_err = _chi_table(gammas, absS, sem)
        return cls(sizes, gammas, absS, sem, chi, chi_err, U4, np.full(shape, np.nan), counts)

    def flat(self):
        """Arrays ``(N, gamma, absS)`` over all finite table points."""
        NN, GG = np.meshgrid(self.sizes, self.gammas, indexing="ij")
        ok = np.isfinite(self.absS)
        return NN[ok].astype(float), GG[ok], self.absS[ok]

    def rows(self):
        for a, N in enumerate(self.sizes):
            for b, g in enumerate(self.gammas):
                yield {"N": int(N), "gamma": float(g), "absS": self.absS[a, b],
                       "absS_sem": self.sem[a, b], "chi": self.chi[a, b],
                       "chi_err": self.chi_err[a, b], "U4": self.U4[a, b],
                       "U4_err": self.U4_err[a, b], "count": int(self.counts[a, b])}

    def resampled(self, rng: np.random.Generator) -> "FssDataset":
        """Same table rebuilt from realizations drawn with replacement per point."""
        if not self.samples:
            raise ValueError("dataset has no per-realization samples to resample")
        new = {}
        for key, s in self.samples.items():
            n = len(s["absS"])
            idx = rng.integers(0, n, n)
            new[key] = {k: np.asarray(v)[idx] for k, v in s.items()}
        return FssDataset.from_samples(self.sizes, self.gammas, new)


def _chi_table(gammas, absS, sem):
    chi = np.full(absS.shape, np.nan)
    chi_err = np.full(absS.shape, np.nan)
    if gammas.size >= 3:
        for a in range(absS.shape[0]):
            if np.all(np.isfinite(absS[a])):
                chi[a] = diagnostics.susceptibility(gammas, absS[a])
                chi_err[a] = diagnostics.susceptibility_error(gammas, sem[a])
    return chi, chi_err


def _fss_task(args):
    preset, master_seed, r, config, key = args
    agents, mask = sample_realization(preset, realization_seed(master_seed, r))
    fp, _ = run_to_convergence(AgentBatch.from_agents(agents), mask, config)
    S = fp.summaries[:, 0]
    return key, r, (float(np.mean(np.abs(S))), float(np.mean(S)), float(np.mean(S ** 2)),
                    float(np.mean(S ** 4)), bool(fp.converged))


def fss_scan(base: RegimePreset, sizes, gammas, realizations: int, master_seed: int,
             config: LoopConfig = LoopConfig(), threads: int = 1,
             pooled_binder: bool = False) -> FssDataset:
    """Simulate every (N, gamma) point and tabulate the order parameter."""
    sizes = [int(N) for N in sizes]
    gammas = np.asarray(gammas, dtype=float)
    tasks = []
    for N in sizes:
        for b, g in enumerate(gammas):
            preset = base.with_(N=N, gamma=float(g), R=int(realizations))
            tasks.extend((preset, master_seed, r, config, (N, b)) for r in range(realizations))
    raw = {}
    for key, r, vals in _pool_map(_fss_task, tasks, threads):
        raw.setdefault(key, []).append((r, vals))
    samples = {}
    for key, items in raw.items():
        items.sort()
        arr = np.array([v for _, v in items], dtype=float)
        samples[key] = {"absS": arr[:, 0], "meanS": arr[:, 1], "S2": arr[:, 2],
                        "S4": arr[:, 3], "converged": arr[:, 4].astype(bool)}
    return FssDataset.from_samples(sizes, gammas, samples, pooled_binder=pooled_binder)


# -- collapse objective and fits ---------------------------------------------

@dataclass
class ScalingFit:
    gamma_c: float
    nu: float
    beta_over_nu: float
    collapse_variance: float
    method: str
    ci95: Optional[dict] = None
    success: bool = True
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"method": self.method, "gamma_c": self.gamma_c, "nu": self.nu,
                "beta_over_nu": self.beta_over_nu,
                "collapse_variance": self.collapse_variance, "success": self.success,
                "ci95": self.ci95, **self.extras}


def collapse_variance(params, N, gamma, absS, bins: int = DEFAULT_BINS) -> float:
    """Mean squared deviation of rescaled data from its binned master curve.

    ``x = (gamma - gamma_c) N^(1/nu)``, ``y = absS N^(beta/nu)``; the master
    curve linearly interpolates bin-averaged ``(x, y)`` over ``bins`` equal
    bins spanning the x range.
    """
    gamma_c, nu, beta_nu = params
    x = (gamma - gamma_c) * N ** (1.0 / nu)
    y = absS * N ** beta_nu
    lo, hi = x.min(), x.max()
    if not hi > lo:
        return float(np.var(y))
    idx = np.minimum(((x - lo) / (hi - lo) * bins).astype(int), bins - 1)
    cnt = np.bincount(idx, minlength=bins)
    nz = cnt > 0
    xb = np.bincount(idx, x, minlength=bins)[nz] / cnt[nz]
    yb = np.bincount(idx, y, minlength=bins)[nz] / cnt[nz]
    return float(np.mean((y - np.interp(x, xb, yb)) ** 2))


def _simplex(objective, x0, bounds):
    return optimize.minimize(objective, x0, method="Nelder-Mead", bounds=bounds,
                             options={"xatol": 1e-7, "fatol": 1e-14, "maxiter": 1500})


def _fit_arrays(data):
    if isinstance(data, FssDataset):
        return data.flat()
    N, g, s = (np.asarray(a, dtype=float) for a in data)
    return N, g, s


def collapse_fit(data, initial_guesses=None, bins: int = DEFAULT_BINS,
                 gamma_c: Optional[float] = None, method: str = "collapse") -> ScalingFit:
    """Minimize the collapse variance with multi-start Nelder-Mead.

    ``data`` is an :class:`FssDataset` or a tuple of flat ``(N, gamma, absS)``
    arrays.  Passing ``gamma_c`` freezes the critical field and fits only the
    two exponents.  Parameters are bounded (``nu`` in [0.2, 5], ``beta/nu``
    in [0, 2], ``gamma_c`` inside the sampled field range) to exclude the
    degenerate collapse ``y -> 0``.
    """
    if bins < 5:
        raise ValueError("bins must be >= 5")
    N, g, s = _fit_arrays(data)
    if np.unique(N).size < 3:
        raise ValueError("collapse fitting needs at least 3 system sizes")
    starts = DEFAULT_STARTS if initial_guesses is None else [tuple(p) for p in initial_guesses]
    g_bounds = (float(g.min()), float(g.max()))
    if gamma_c is None:
        bounds = [g_bounds, NU_BOUNDS, BETA_NU_BOUNDS]
        objective = lambda p: collapse_variance(p, N, g, s, bins)
        x0s = sorted({tuple(np.clip(p, *zip(*bounds))) for p in starts})
    else:
        bounds = [NU_BOUNDS, BETA_NU_BOUNDS]
        objective = lambda p: collapse_variance((gamma_c, *p), N, g, s, bins)
        x0s = sorted({tuple(np.clip(p[-2:], *zip(*bounds))) for p in starts})
    best = None
    improved = False
    for x0 in x0s:
        f0 = objective(x0)
        res = _simplex(objective, x0, bounds)
        improved |= res.fun < f0
        if best is None or res.fun < best.fun:
            best = res
    # The binned objective is only piecewise smooth; one restart from the
    # winner escapes most premature simplex collapses.
    polished = _simplex(objective, best.x, bounds)
    if polished.fun < best.fun:
        best = polished
    p = best.x if gamma_c is None else np.array([gamma_c, *best.x])
    if not improved:
        log.warning("collapse fit did not improve on any starting point")
    return ScalingFit(float(p[0]), float(p[1]), float(p[2]), float(best.fun), method,
                      success=bool(improved), extras={"starts": len(x0s)})


@dataclass
class BootstrapResult:
    fit: ScalingFit
    full_data: ScalingFit
    distribution: np.ndarray   # (resamples, 4): gamma_c, nu, beta_over_nu, variance
    failures: int


def _bootstrap_task(args):
    data, seed, b, bins, starts = args
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(int(b),)))
    try:
        fit = collapse_fit(data.resampled(rng), starts, bins)
    except (ValueError, FloatingPointError) as exc:
        return b, None, str(exc)
    return b, (fit.gamma_c, fit.nu, fit.beta_over_nu, fit.collapse_variance), None


def bootstrap_fit(data: FssDataset, resamples: int = 500, seed: int = 0,
                  bins: int = DEFAULT_BINS, initial_guesses=None,
                  threads: int = 1) -> BootstrapResult:
    """Collapse fits over realization-level resamples of the dataset.

    The returned fit carries bootstrap medians as point values and 2.5/97.5
    percentile intervals in ``ci95``; the fit of the unresampled data is
    kept in ``full_data``.
    """
    if resamples < 1:
        raise ValueError("resamples must be positive")
    if not data.samples:
        raise ValueError("bootstrap needs per-realization samples")
    full = collapse_fit(data, initial_guesses, bins)
    tasks = [(data, seed, b, bins, initial_guesses) for b in range(resamples)]
    rows, failures = [], 0
    for b, vals, err in sorted(_pool_map(_bootstrap_task, tasks, threads), key=lambda t: t[0]):
        if vals is None:
            failures += 1
            log.warning("bootstrap resample %d failed: %s", b, err)
        else:
            rows.append(vals)
    if not rows:
        raise RuntimeError("every bootstrap resample failed")
    dist = np.array(rows)
    med = np.median(dist, axis=0)
    lo, hi = np.percentile(dist, [2.5, 97.5], axis=0)
    names = ("gamma_c", "nu", "beta_over_nu")
    ci = {k: (float(lo[i]), float(hi[i])) for i, k in enumerate(names)}
    fit = ScalingFit(float(med[0]), float(med[1]), float(med[2]), float(med[3]),
                     "collapse", ci95=ci, success=full.success,
                     extras={"resamples": len(rows), "failed": failures})
    return BootstrapResult(fit, full, dist, failures)


def _crossing(x, d):
    """First linear-interpolated zero of ``d`` over grid ``x``, or None."""
    for k in range(len(x) - 1):
        a, b = d[k], d[k + 1]
        if not (np.isfinite(a) and np.isfinite(b)):
            continue
        if a == 0:
            return float(x[k])
        if a * b < 0:
            return float(x[k] - a * (x[k + 1] - x[k]) / (b - a))
    if np.isfinite(d[-1]) and d[-1] == 0:
        return float(x[-1])
    return None


def binder_crossing(data: FssDataset) -> tuple[float, list]:
    """Mean of pairwise Binder-curve crossing fields."""
    crossings = []
    for a, b in itertools.combinations(range(data.sizes.size), 2):
        c = _crossing(data.gammas, data.U4[a] - data.U4[b])
        if c is not None:
            crossings.append(c)
    if not crossings:
        raise NoCrossingError("no Binder-cumulant crossing inside the sampled range")
    return float(np.mean(crossings)), crossings


def binder_crossing_fit(data: FssDataset, bins: int = DEFAULT_BINS) -> ScalingFit:
    """Critical field from Binder crossings, then a two-exponent collapse."""
    if data.sizes.size < 2:
        raise ValueError("need Binder curves for at least 2 sizes")
    gc, crossings = binder_crossing(data)
    fit = collapse_fit(data, bins=bins, gamma_c=gc, method="binder-crossing")
    fit.extras.update({"crossings": crossings,
                       "gamma_c_spread": float(np.std(crossings))})
    return fit


def _parabola_vertex(x, y):
    c2, c1, c0 = np.polyfit(x, y, 2)
    if c2 >= 0:
        k = int(np.argmax(y))
        return float(x[k]), float(y[k])
    xv = -c1 / (2.0 * c2)
    return float(xv), float(c0 - c1 * c1 / (4.0 * c2))


def susceptibility_peaks(gammas, chi_table, sizes):
    """Interpolated peak position and height per size; boundary peaks dropped."""
    kept, pos, height = [], [], []
    for N, chi in zip(sizes, chi_table):
        if not np.all(np.isfinite(chi)):
            continue
        k = int(np.argmax(chi))
        if k == 0 or k == len(chi) - 1:
            warnings.warn(f"susceptibility peak of N={N} on the grid boundary; size excluded",
                          stacklevel=2)
            continue
        xv, yv = _parabola_vertex(gammas[k - 1:k + 2], chi[k - 1:k + 2])
        kept.append(int(N))
        pos.append(xv)
        height.append(yv)
    return np.array(kept, dtype=float), np.array(pos), np.array(height)


def peak_scaling_fit(data: FssDataset) -> ScalingFit:
    """Exponents from susceptibility peak drift and the order parameter at criticality.

    Fits ``gamma*(N) = gamma_c + a N^(-1/nu)``, then ``beta/nu`` from the
    log-log slope of ``absS`` at ``gamma_c`` and the peak-height exponent from
    that of ``chi_max``.
    """
    sizes, pos, height = susceptibility_peaks(data.gammas, data.chi, data.sizes)
    if sizes.size < 3:
        raise ValueError(f"peak scaling needs interior peaks for >= 3 sizes, got {sizes.size}")
    model = lambda N, gc, a, nu: gc + a * N ** (-1.0 / nu)
    p0 = (pos[np.argmax(sizes)], (pos[0] - pos[-1]) * sizes[0], 1.0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            (gc, a, nu), _ = optimize.curve_fit(model, sizes, pos, p0=p0, maxfev=20000)
        ok = bool(np.isfinite(gc) and np.isfinite(nu) and nu > 0)
    except RuntimeError:
        gc, a, nu, ok = np.nan, np.nan, np.nan, False
    beta_nu = np.nan
    if ok:
        all_N = data.sizes.astype(float)
        s_c = np.array([np.interp(gc, data.gammas, row) for row in data.absS])
        good = s_c > 0
        if good.sum() >= 2:
            beta_nu = -np.polyfit(np.log(all_N[good]), np.log(s_c[good]), 1)[0]
    height_exp = np.nan
    if np.all(height > 0):
        height_exp = float(np.polyfit(np.log(sizes), np.log(height), 1)[0])
    variance = np.nan
    if ok and np.isfinite(beta_nu):
        variance = collapse_variance((gc, nu, beta_nu), *data.flat())
    return ScalingFit(float(gc), float(nu), float(beta_nu), float(variance), "peak-scaling",
                      success=ok, extras={"peak_sizes": sizes.tolist(),
                                          "peak_positions": pos.tolist(),
                                          "peak_heights": height.tolist(),
                                          "amplitude": float(a),
                                          "peak_height_exponent": height_exp})
