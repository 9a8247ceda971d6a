"""Smoothing stochastic-approximation Metropolis-Hastings sampler.

The image plane is split into grid cells.  Each cell carries a confidence
``lam`` (from the nearest-neighbor field) and a learned log density of states
``log_omega``.  The chain targets

    p_w(X)  proportional to  lam[J(X)] * p(X) / omega[J(X)]

and after every batch of ``n`` moves the per-cell visit counts are
kernel-smoothed and pushed into ``log_omega``.

Positions ``(x, y)`` live on the integer pixel lattice; the Gaussian branch of
the proposal rounds its draw to the nearest pixel, so proposal densities are
probability masses per pixel and the MH ratio is exact.  The scale ``s`` is a
continuous coordinate perturbed identically by both branches.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .appearance import TargetState
from .geometry import RegionGrid

log = logging.getLogger(__name__)

DOS_MODES = ("standard", "literal")


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    theta: float = 0.8
    beta: float = 0.2
    sigma: tuple[float, float, float] = (8.0, 4.0, 0.013)
    k_iters: int = 120
    n_per_iter: int = 5
    k0: float | None = None  # None -> N / 4 with N = k_iters * n_per_iter
    tau: float = 1000.0
    kernel_c: float = 100.0
    pi_target: tuple[float, ...] | None = None  # None -> uniform over the active cells
    eps_lambda: float = 1e-6
    dos_update: str = "standard"
    lock_scale: bool = True
    freeze_dos: bool = False
    max_resample: int = 100

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if len(self.sigma) != 3 or min(self.sigma) <= 0:
            raise ValueError(f"sigma must be three positive values, got {self.sigma}")
        if self.k_iters < 1 or self.n_per_iter < 1:
            raise ValueError("k_iters and n_per_iter must be >= 1")
        if self.k0 is not None and self.k0 <= 0:
            raise ValueError("k0 must be positive")
        if self.tau < 0 or self.kernel_c <= 0 or self.eps_lambda <= 0:
            raise ValueError("tau >= 0, kernel_c > 0 and eps_lambda > 0 required")
        if self.dos_update not in DOS_MODES:
            raise ValueError(f"dos_update must be one of {DOS_MODES}, got {self.dos_update!r}")
        if self.pi_target is not None:
            pi = np.asarray(self.pi_target, dtype=float)
            if (pi <= 0).any() or (pi >= 1).any() or abs(pi.sum() - 1) > 1e-9:
                raise ValueError("pi_target entries must lie in (0, 1) and sum to 1")

    @property
    def total_samples(self) -> int:
        return self.k_iters * self.n_per_iter

    @property
    def gain_k0(self) -> float:
        return self.k0 if self.k0 is not None else self.total_samples / 4.0


# --- sample space ------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpace:
    """A rectangular block of grid cells ``rows [r0, r1) x cols [c0, c1)``."""

    grid: RegionGrid
    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def cells(self) -> np.ndarray:
        rows = np.arange(self.r0, self.r1)
        cols = np.arange(self.c0, self.c1)
        return (rows[:, None] * self.grid.cols + cols[None, :]).ravel()

    @property
    def pixel_bounds(self) -> tuple[int, int, int, int]:
        """Inclusive pixel ranges ``(x_lo, x_hi, y_lo, y_hi)``."""
        g = self.grid
        return (
            int(g.x_edges[self.c0]),
            int(g.x_edges[self.c1]) - 1,
            int(g.y_edges[self.r0]),
            int(g.y_edges[self.r1]) - 1,
        )

    def contains(self, x: float, y: float) -> bool:
        x_lo, x_hi, y_lo, y_hi = self.pixel_bounds
        return x_lo <= x <= x_hi and y_lo <= y <= y_hi

    def mask(self) -> np.ndarray:
        out = np.zeros(self.grid.m, dtype=bool)
        out[self.cells] = True
        return out


def full_space(grid: RegionGrid) -> SampleSpace:
    return SampleSpace(grid, 0, grid.rows, 0, grid.cols)


def restrict_sample_space(
    abrupt: bool, prev_best: TargetState, grid: RegionGrid, half_width: int = 2
) -> SampleSpace:
    """All cells on abrupt frames, otherwise the (2*half_width+1)^2 block of
    cells around the previous best state, clipped at the grid border."""
    if abrupt:
        return full_space(grid)
    r, c = grid.row_col(grid.cell_of(prev_best.x, prev_best.y))
    return SampleSpace(
        grid,
        max(0, r - half_width),
        min(grid.rows, r + half_width + 1),
        max(0, c - half_width),
        min(grid.cols, c + half_width + 1),
    )


# --- density of states -------------------------------------------------------


def init_dos(lam, tau: float = 1000.0) -> np.ndarray:
    """``log omega_i = -tau * lam_i``."""
    return -tau * np.asarray(lam, dtype=np.float64)


def region_selection_probs(lam, theta: float = 0.8) -> np.ndarray:
    """Cell weights ``theta`` where ``lam > 0`` and ``1 - theta`` elsewhere,
    normalized to sum to 1."""
    lam = np.asarray(lam, dtype=np.float64)
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    w = np.where(lam > 0, theta, 1.0 - theta)
    return w / w.sum()


def gain(k: int, k0: float) -> float:
    return k0 / max(k0, k)


def smoothing_kernel(grid: RegionGrid, c: float = 100.0) -> np.ndarray:
    """Truncated Gaussian weights between cell centers (distance in pixels)."""
    dist = grid.center_distances()
    return np.where(dist < c, np.exp(-0.5 * dist ** 2), 0.0)


def smoothed_frequency(r, n: int, kernel: np.ndarray) -> np.ndarray:
    """Nadaraya-Watson smoothing of per-cell visit fractions ``r / n``."""
    r = np.asarray(r, dtype=np.float64)
    return (kernel @ (r / n)) / kernel.sum(axis=1)


def update_dos(log_omega, f, pi, gamma: float, mode: str = "standard") -> np.ndarray:
    """One density-of-states update.

    ``standard``: ``log omega += gamma * (f - pi)``.
    ``literal``:  ``omega += exp(gamma * (f - pi))``, done in log space.
    """
    log_omega = np.asarray(log_omega, dtype=np.float64)
    step = gamma * (np.asarray(f, dtype=np.float64) - np.asarray(pi, dtype=np.float64))
    if mode == "standard":
        return log_omega + step
    if mode == "literal":
        return np.logaddexp(log_omega, step)
    raise ValueError(f"unknown DOS update mode {mode!r}")


def dos_entropy(log_omega, cells) -> float:
    lw = np.asarray(log_omega, dtype=np.float64)[cells]
    lw = lw - lw.max()
    lp = lw - math.log(np.exp(lw).sum())
    return float(-(np.exp(lp) * lp).sum())


# --- proposal ----------------------------------------------------------------


_SQRT2 = math.sqrt(2.0)


def _phi(z: float) -> float:
    return 0.5 * math.erfc(-z / _SQRT2)


def _upper_tail(z: float) -> float:
    return 0.5 * math.erfc(z / _SQRT2)


def _lattice_mass(d: float, sigma: float) -> float:
    """P(round(sigma * N) == d) for integer ``d``."""
    d = abs(d)
    # difference of upper tails keeps precision far from the mode
    return _upper_tail((d - 0.5) / sigma) - _upper_tail((d + 0.5) / sigma)


def _interval_mass(center: float, lo: int, hi: int, sigma: float) -> float:
    """P(lo <= center + round(sigma * N) <= hi)."""
    return _phi((hi + 0.5 - center) / sigma) - _phi((lo - 0.5 - center) / sigma)


class Proposal:
    """Mixture proposal: rounded Gaussian walk with probability ``beta``,
    otherwise a cell drawn from the selection probabilities (restricted to
    the sample space) and a uniform pixel inside it."""

    def __init__(self, cfg: SamplerConfig, rho, space: SampleSpace):
        self.cfg = cfg
        self.space = space
        grid = space.grid
        self.grid = grid
        rho = np.asarray(rho, dtype=np.float64)
        mask = space.mask()
        restricted = np.where(mask, rho, 0.0)
        total = restricted.sum()
        if total <= 0:
            raise ValueError("selection probabilities vanish on the sample space")
        self.rho_space = restricted / total
        self.cells = [int(c) for c in space.cells]
        self._cum = list(np.cumsum(self.rho_space[self.cells]))
        self._cum[-1] = 1.0
        self.areas = grid.areas()
        self.bounds = [grid.bounds(i) for i in range(grid.m)]
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = space.pixel_bounds
        self._col = np.searchsorted(grid.x_edges, np.arange(grid.width), side="right") - 1
        self._row = np.searchsorted(grid.y_edges, np.arange(grid.height), side="right") - 1

    def cell(self, state: TargetState) -> int:
        return int(self._row[int(state.y)]) * self.grid.cols + int(self._col[int(state.x)])

    def in_space(self, state: TargetState) -> bool:
        return self.x_lo <= state.x <= self.x_hi and self.y_lo <= state.y <= self.y_hi

    def _scale_step(self, s: float, rng: np.random.Generator) -> float:
        if self.cfg.lock_scale:
            return s
        for _ in range(self.cfg.max_resample):
            s_new = s + self.cfg.sigma[2] * rng.standard_normal()
            if s_new > 0:
                return s_new
        return s

    def propose(self, current: TargetState, rng: np.random.Generator) -> TargetState:
        cfg = self.cfg
        if rng.random() < cfg.beta:
            sx, sy, _ = cfg.sigma
            for _ in range(cfg.max_resample):
                x = current.x + round(sx * rng.standard_normal())
                y = current.y + round(sy * rng.standard_normal())
                if self.x_lo <= x <= self.x_hi and self.y_lo <= y <= self.y_hi:
                    return TargetState(float(x), float(y), self._scale_step(current.s, rng))
            return current
        j = self.cells[bisect.bisect_right(self._cum, rng.random())]
        x0, y0, x1, y1 = self.bounds[j]
        x = x0 + int(rng.random() * (x1 - x0))
        y = y0 + int(rng.random() * (y1 - y0))
        return TargetState(float(x), float(y), self._scale_step(current.s, rng))

    def density(self, frm: TargetState, to: TargetState) -> float:
        """Probability mass (times the scale density when scale is free) of
        proposing ``to`` from ``frm``."""
        cfg = self.cfg
        sx, sy, ss = cfg.sigma
        g = _lattice_mass(to.x - frm.x, sx) * _lattice_mass(to.y - frm.y, sy)
        scale = 1.0
        if not cfg.lock_scale:
            scale = math.exp(-0.5 * ((to.s - frm.s) / ss) ** 2) / (ss * math.sqrt(2 * math.pi))
        if not self.in_space(to):
            return cfg.beta * g * scale
        z = _interval_mass(frm.x, self.x_lo, self.x_hi, sx) * _interval_mass(
            frm.y, self.y_lo, self.y_hi, sy
        )
        local = g / z if z > 0 else 0.0
        j = self.cell(to)
        uniform = self.rho_space[j] / self.areas[j]
        return (cfg.beta * local + (1.0 - cfg.beta) * uniform) * scale


def propose(current, cfg, rho, space, rng) -> TargetState:
    return Proposal(cfg, rho, space).propose(current, rng)


def proposal_density(frm, to, cfg, rho, space) -> float:
    return Proposal(cfg, rho, space).density(frm, to)


# --- acceptance --------------------------------------------------------------


def _log(v: float) -> float:
    return math.log(v) if v > 0 else -math.inf


def acceptance_log_ratio(
    post_cand, post_curr, lam_cand, lam_curr, log_omega_cand, log_omega_curr, q_fwd, q_bwd
) -> float:
    """Log of the weighted-trial MH ratio (confidences already floored)."""
    return (
        _log(post_cand) - _log(post_curr)
        + _log(lam_cand) - _log(lam_curr)
        - (log_omega_cand - log_omega_curr)
        + _log(q_bwd) - _log(q_fwd)
    )


def acceptance_prob(
    cand_cell: int,
    curr_cell: int,
    post_cand: float,
    post_curr: float,
    lam,
    log_omega,
    q_fwd: float,
    q_bwd: float,
    eps_lambda: float = 1e-6,
) -> float:
    """``min(1, ratio)`` with ``lam`` floored at ``eps_lambda``; a non-finite
    ratio rejects the move."""
    lr = acceptance_log_ratio(
        post_cand,
        post_curr,
        max(float(lam[cand_cell]), eps_lambda),
        max(float(lam[curr_cell]), eps_lambda),
        float(log_omega[cand_cell]),
        float(log_omega[curr_cell]),
        q_fwd,
        q_bwd,
    )
    if not math.isfinite(lr):
        log.debug("non-finite acceptance ratio %r; move rejected", lr)
        return 0.0
    return 1.0 if lr >= 0 else math.exp(lr)


# --- chain -------------------------------------------------------------------


@dataclass
class ChainResult:
    states: list
    posteriors: np.ndarray
    log_omega: np.ndarray
    diagnostics: list = field(default_factory=list)
    rejected_nonfinite: int = 0

    def map_index(self) -> int:
        return int(np.argmax(self.posteriors))


def snap_into_space(state: TargetState, space: SampleSpace) -> TargetState:
    """Return ``state`` if it lies in ``space``, else the nearest cell center."""
    if space.contains(state.x, state.y):
        return state
    centers = space.grid.centers()[space.cells]
    d = (centers[:, 0] - state.x) ** 2 + (centers[:, 1] - state.y) ** 2
    cx, cy = centers[int(np.argmin(d))]
    return TargetState(float(math.floor(cx)), float(math.floor(cy)), state.s)


def run_chain(
    posterior: Callable[[TargetState], float],
    lam,
    space: SampleSpace,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    start: TargetState,
    log_omega0=None,
) -> ChainResult:
    """Run ``k_iters`` batches of ``n_per_iter`` MH moves with a DOS update
    after each batch; every retained state is recorded.

    Args:
        posterior: unnormalized posterior, must be positive on ``space``.
        lam: per-cell confidence (length ``m``).
        start: initial state, snapped into ``space`` if it lies outside.
        log_omega0: initial log DOS; defaults to ``init_dos(lam, cfg.tau)``.
    """
    grid = space.grid
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (grid.m,):
        raise ValueError(f"expected {grid.m} confidences, got {lam.shape}")
    lam_floor = np.maximum(lam, cfg.eps_lambda)
    log_omega = init_dos(lam, cfg.tau) if log_omega0 is None else np.array(log_omega0, dtype=float)
    kernel = smoothing_kernel(grid, cfg.kernel_c)
    rho = region_selection_probs(lam, cfg.theta) if 0 < cfg.theta < 1 else np.full(grid.m, 1 / grid.m)
    prop = Proposal(cfg, rho, space)
    pi = np.full(grid.m, 1.0) if cfg.pi_target is None else np.asarray(cfg.pi_target, dtype=float)
    mask = space.mask()
    pi = np.where(mask, pi, 0.0)
    pi = pi / pi.sum()
    k0 = cfg.gain_k0

    def evaluate(state):
        try:
            value = float(posterior(state))
        except Exception as exc:
            raise ChainError(f"posterior evaluation failed at {state}: {exc}") from exc
        if not value > 0 or not math.isfinite(value):
            raise ChainError(f"posterior must be positive and finite, got {value} at {state}")
        return value

    cur = snap_into_space(start, space)
    post_cur = evaluate(cur)
    cell_cur = prop.cell(cur)
    n = cfg.n_per_iter
    states = []
    posts = np.empty(cfg.total_samples)
    diagnostics = []
    nonfinite = 0
    idx = 0
    for k in range(1, cfg.k_iters + 1):
        counts = np.zeros(grid.m)
        accepted = 0
        for _ in range(n):
            cand = prop.propose(cur, rng)
            if cand != cur:
                post_c = evaluate(cand)
                cell_c = prop.cell(cand)
                q_fwd = prop.density(cur, cand)
                q_bwd = prop.density(cand, cur)
                lr = acceptance_log_ratio(
                    post_c,
                    post_cur,
                    lam_floor[cell_c],
                    lam_floor[cell_cur],
                    log_omega[cell_c],
                    log_omega[cell_cur],
                    q_fwd,
                    q_bwd,
                )
                if not math.isfinite(lr):
                    nonfinite += 1
                elif lr >= 0 or rng.random() < math.exp(lr):
                    cur, post_cur, cell_cur = cand, post_c, cell_c
                    accepted += 1
            states.append(cur)
            posts[idx] = post_cur
            idx += 1
            counts[cell_cur] += 1
        if not cfg.freeze_dos:
            f = smoothed_frequency(counts, n, kernel)
            log_omega = update_dos(log_omega, f, pi, gain(k, k0), cfg.dos_update)
        diagnostics.append(
            {
                "iteration": k,
                "accepted": accepted,
                "log_posterior": math.log(post_cur),
                "dos_entropy": dos_entropy(log_omega, space.cells),
            }
        )
    if nonfinite:
        log.warning("%d moves rejected for a non-finite acceptance ratio", nonfinite)
    return ChainResult(states, posts, log_omega, diagnostics, nonfinite)


def map_estimate(states, posteriors) -> TargetState:
    """State with the largest posterior; the first one wins ties."""
    if len(states) == 0:
        raise ValueError("MAP estimate of an empty sample list")
    return states[int(np.argmax(np.asarray(posteriors)))]
