"""Monte-Carlo convergence harness.

For each grid size n the mean-field equation is solved once on the tree;
M coupled (Brownian, walk) pairs then measure the squared gap between the
exact solution read at the Brownian value and the tree solution read at
the walk's node (looked up by integer displacement, never by float
matching).  A log-log regression of the mean squared gap against n gives
the empirical convergence slope.
"""
from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import coupling
from ._util import atomic_write_text, format_float
from .analytic import ExactSolution, case1_exact, case2_exact, zero_case_exact
from .driver import builtin_by_name
from .errors import NumericError, ParameterError
from .law import dirac, make_law
from .solver import MeanFieldSolution, SolveConfig, solve_meanfield, solve_subtree

log = logging.getLogger("mfbsde")

DEFAULT_N_LIST = (8, 16, 32, 64, 128, 256)


@dataclass(frozen=True)
class ExperimentConfig:
    """What to run: benchmark case, grid list, trial count, seeds."""

    case: str = "case1"
    T: float = 1.0
    K: float = 5.0
    t_eval: float = 0.3
    n_list: tuple = DEFAULT_N_LIST
    M: int = 20000
    seed: int = 0
    fine_factor: int = 64
    threads: int = 1
    stderr_exclude: float = 0.25
    scheme: str = "explicit"

    def __post_init__(self):
        if not 0.0 <= self.t_eval < self.T:
            raise ParameterError("need 0 <= t_eval < T")
        n_list = tuple(int(v) for v in self.n_list)
        if len(n_list) == 0 or any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ParameterError("n_list must be strictly increasing")
        if any(v < 1 for v in n_list):
            raise ParameterError("grid sizes must be >= 1")
        object.__setattr__(self, "n_list", n_list)
        if self.M < 100:
            raise ParameterError("M must be >= 100")
        if self.fine_factor < 8:
            raise ParameterError("fine_factor must be >= 8")
        if self.seed < 0:
            raise ParameterError("seed must be nonnegative")
        if self.threads < 1:
            raise ParameterError("threads must be >= 1")


@dataclass
class PointEstimate:
    n: int
    e_y: float
    stderr: float
    excluded: bool = False


@dataclass
class ExperimentResult:
    points: list[PointEstimate]
    slope: float
    intercept: float
    r_squared: float
    runtime_s: float
    config: ExperimentConfig


def case_setup(cfg: ExperimentConfig):
    """Driver, terminal and exact solution for a benchmark case."""
    driver, terminal = builtin_by_name(cfg.case, cfg.K)
    if cfg.case == "case1":
        exact = case1_exact(cfg.T)
    elif cfg.case == "case2":
        exact = case2_exact(cfg.T, cfg.K)
    else:
        exact = zero_case_exact(cfg.T)
    return driver, terminal, exact


def _solve_for(cfg: ExperimentConfig, n: int) -> MeanFieldSolution:
    driver, terminal, _ = case_setup(cfg)
    solve_cfg = SolveConfig(n=n, T=cfg.T, scheme=cfg.scheme)
    return solve_meanfield(terminal, driver, solve_cfg, dirac(0.0))


def _eval_grid(cfg: ExperimentConfig, n: int):
    """Snap t_eval onto the fine grid: (fine_index, coarse_step, t_used)."""
    m = cfg.fine_factor
    ratio = cfg.t_eval * n * m / cfg.T
    fine_index = int(math.floor(ratio + 1e-9))
    if abs(ratio - round(ratio)) > 1e-9:
        t_used = fine_index * cfg.T / (n * m)
        log.warning(
            "t_eval=%g not on the fine grid for n=%d, m=%d; snapped to %g",
            cfg.t_eval, n, m, t_used,
        )
    fine_index = min(fine_index, n * m)
    k_step = fine_index // m
    t_used = fine_index * cfg.T / (n * m)
    return fine_index, k_step, t_used


def estimate_error(cfg: ExperimentConfig, n: int,
                   solution: Optional[MeanFieldSolution] = None):
    """Monte-Carlo estimate of E|Y_t - Y^n_t|^2 with its standard error.

    The tree solution is computed once (or passed in) and shared read-only
    across trials.  Trials are processed in fixed-size batches with
    counter-based per-batch streams; partial sums are reduced in batch
    order, so the result is independent of the thread schedule.
    """
    if solution is None:
        solution = _solve_for(cfg, n)
    _, _, exact = case_setup(cfg)
    surface = solution.surfaces[0]
    fine_index, k_step, t_used = _eval_grid(cfg, n)
    y_col = surface.y_column(k_step)

    n_batches = -(-cfg.M // coupling.BATCH_TRIALS)

    def one_batch(b: int):
        disp, b_vals = coupling.walk_and_brownian_at(
            n, cfg.T, cfg.fine_factor, k_step, fine_index, cfg.M,
            cfg.seed, batch_range=[b],
        )
        nodes = (k_step - disp) // 2
        y_tree = y_col[nodes]
        y_ref = exact.y(t_used, b_vals)
        gap2 = np.square(y_tree - y_ref)
        return float(np.sum(gap2)), float(np.sum(np.square(gap2)))

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(one_batch, range(n_batches)))
    else:
        parts = [one_batch(b) for b in range(n_batches)]

    s2 = sum(p[0] for p in parts)
    s4 = sum(p[1] for p in parts)
    m_trials = cfg.M
    e_y = s2 / m_trials
    var = max(s4 / m_trials - e_y * e_y, 0.0) * m_trials / max(m_trials - 1, 1)
    stderr = math.sqrt(var / m_trials)
    if not math.isfinite(e_y):
        raise NumericError(f"non-finite error estimate for n={n}")
    return e_y, stderr


def fit_loglog(ns, errors):
    """OLS fit of log(error) against log(n): (slope, intercept, r_squared)."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if ns.size < 3:
        raise ParameterError("need at least 3 points for a regression")
    if np.any(errors <= 0.0):
        raise ParameterError("errors must be positive for a log-log fit")
    x = np.log(ns)
    y = np.log(errors)
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(slope), float(intercept), float(r2)


def run_convergence_study(cfg: ExperimentConfig,
                          outdir: Optional[str] = None) -> ExperimentResult:
    """Estimate the error on every grid in n_list and fit the slope.

    Points whose relative standard error exceeds ``stderr_exclude`` are
    flagged and left out of the regression.  When ``outdir`` is given,
    writes convergence.csv, convergence.svg and manifest.txt (atomically).
    """
    started = time.perf_counter()
    points = []
    for n in cfg.n_list:
        e_y, stderr = estimate_error(cfg, n)
        excluded = e_y <= 0.0 or (stderr / e_y) > cfg.stderr_exclude
        if excluded:
            log.warning("n=%d excluded from fit: stderr/E_Y=%.2f", n,
                        stderr / e_y if e_y > 0 else float("inf"))
        points.append(PointEstimate(n=n, e_y=e_y, stderr=stderr, excluded=excluded))
    kept = [p for p in points if not p.excluded]
    slope, intercept, r2 = fit_loglog(
        [p.n for p in kept], [p.e_y for p in kept]
    )
    result = ExperimentResult(
        points=points, slope=slope, intercept=intercept, r_squared=r2,
        runtime_s=time.perf_counter() - started, config=cfg,
    )
    if outdir is not None:
        write_artifacts(result, outdir)
    return result


def convergence_csv_text(result: ExperimentResult) -> str:
    lines = ["n,E_Y,stderr,M,seed"]
    for p in result.points:
        lines.append(
            f"{p.n},{format_float(p.e_y)},{format_float(p.stderr)},"
            f"{result.config.M},{result.config.seed}"
        )
    return "\n".join(lines) + "\n"


def manifest_text(cfg: ExperimentConfig, extra: Optional[dict] = None) -> str:
    entries = {
        "case": cfg.case, "T": cfg.T, "K": cfg.K, "t_eval": cfg.t_eval,
        "n_list": ",".join(str(v) for v in cfg.n_list), "M": cfg.M,
        "seed": cfg.seed, "fine_factor": cfg.fine_factor,
        "threads": cfg.threads, "stderr_exclude": cfg.stderr_exclude,
        "scheme": cfg.scheme,
    }
    if extra:
        entries.update(extra)
    return "\n".join(f"{k} = {entries[k]}" for k in sorted(entries)) + "\n"


def write_artifacts(result: ExperimentResult, outdir) -> None:
    os.makedirs(outdir, exist_ok=True)
    atomic_write_text(os.path.join(outdir, "convergence.csv"),
                      convergence_csv_text(result))
    atomic_write_text(os.path.join(outdir, "convergence.svg"),
                      convergence_svg(result))
    atomic_write_text(os.path.join(outdir, "manifest.txt"),
                      manifest_text(result.config))


def convergence_svg(result: ExperimentResult, width=640, height=440) -> str:
    """Self-contained log-log scatter with the fitted line and slope label."""
    pts = [(math.log10(p.n), math.log10(p.e_y)) for p in result.points
           if p.e_y > 0]
    if not pts:
        raise ParameterError("nothing to plot")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    pad = 0.15
    x_lo, x_hi = min(xs) - pad, max(xs) + pad
    y_lo, y_hi = min(ys) - pad, max(ys) + pad
    margin, mtop = 60, 24

    def sx(x):
        return margin + (x - x_lo) / (x_hi - x_lo) * (width - margin - 20)

    def sy(y):
        return height - 44 - (y - y_lo) / (y_hi - y_lo) * (height - 44 - mtop)

    ln10 = math.log(10.0)
    line = [
        (sx(x_lo), sy((result.slope * (x_lo * ln10) + result.intercept) / ln10)),
        (sx(x_hi), sy((result.slope * (x_hi * ln10) + result.intercept) / ln10)),
    ]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - 44}" x2="{width - 20}" '
        f'y2="{height - 44}" stroke="black"/>',
        f'<line x1="{margin}" y1="{mtop}" x2="{margin}" y2="{height - 44}" '
        f'stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 10}" text-anchor="middle" '
        f'font-size="13">log10(n)</text>',
        f'<text x="16" y="{height // 2}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {height // 2})">log10(E_Y)</text>',
        f'<line x1="{line[0][0]:.2f}" y1="{line[0][1]:.2f}" '
        f'x2="{line[1][0]:.2f}" y2="{line[1][1]:.2f}" stroke="#d62728" '
        f'stroke-width="1.5"/>',
    ]
    for (x, y), p in zip(pts, [p for p in result.points if p.e_y > 0]):
        fill = "#7f7f7f" if p.excluded else "#1f77b4"
        parts.append(
            f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" fill="{fill}"/>'
        )
        parts.append(
            f'<text x="{sx(x) + 6:.2f}" y="{sy(y) - 6:.2f}" font-size="11">'
            f"n={p.n}</text>"
        )
    parts.append(
        f'<text x="{width - 24}" y="{mtop + 14}" text-anchor="end" '
        f'font-size="13">slope = {result.slope:.3f} '
        f"(r2 = {result.r_squared:.3f})</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


@dataclass
class ErrorDecomposition:
    """Three split terms plus the total and the triangle slack."""

    freezing_term: float
    self_consistency_term: float
    perturbation_term: float
    total: float

    @property
    def triangle_ok(self) -> bool:
        return self.total <= (
            self.freezing_term + self.self_consistency_term
            + self.perturbation_term + 1e-9
        )


def decompose_error(cfg: ExperimentConfig, n: int,
                    delta: float = 0.0) -> ErrorDecomposition:
    """Empirical three-way split of the tree-solution error at the root.

    (i) mean-field solve vs frozen solve with the exact continuous laws
    sampled on the tree marginals; (ii) mean-field solve vs frozen solve
    with its own discrete laws (zero up to roundoff); (iii) shift of the
    frozen solve when the Z laws move by a known Wasserstein amount delta.
    Only cases with known continuous laws support term (i).
    """
    if cfg.case != "case1":
        raise ParameterError(
            "error decomposition needs the closed-form laws of case1"
        )
    from .driver import freeze  # local import to avoid cycle in doc builds

    driver, terminal, exact = case_setup(cfg)
    solve_cfg = SolveConfig(n=n, T=cfg.T, scheme=cfg.scheme)
    sol = solve_meanfield(terminal, driver, solve_cfg, dirac(0.0))
    lat = sol.surfaces[0].lattice
    h = cfg.T / n

    law_y_exact = []
    law_z_exact = []
    for k in range(n + 1):
        t_k = k * h
        col = lat.column_values(k)
        probs = lat.column_probs(k)
        law_y_exact.append(make_law(exact.y(t_k, col), probs))
        law_z_exact.append(dirac(float(exact.z(min(t_k, (n - 1) * h)))))

    frozen_exact = freeze(driver, law_y_exact, law_z_exact, n, cfg.T,
                          clamp_z_law=True)
    y0_exact = solve_subtree(terminal, frozen_exact, solve_cfg, 0, 0.0).y_root
    term1 = abs(sol.y0 - y0_exact)

    y0_self = solve_subtree(terminal, sol.frozen_driver(), solve_cfg, 0, 0.0).y_root
    term2 = abs(sol.y0 - y0_self)

    law_z_shift = [law.shifted(delta) for law in law_z_exact]
    frozen_shift = freeze(driver, law_y_exact, law_z_shift, n, cfg.T,
                          clamp_z_law=True)
    y0_shift = solve_subtree(terminal, frozen_shift, solve_cfg, 0, 0.0).y_root
    term3 = abs(y0_exact - y0_shift)

    total = abs(sol.y0 - y0_shift)
    return ErrorDecomposition(
        freezing_term=term1, self_consistency_term=term2,
        perturbation_term=term3, total=total,
    )
