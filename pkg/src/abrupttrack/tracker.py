"""Per-frame tracking loop: nearest-neighbor fields, abruptness detection,
sample-space restriction, the adaptive MCMC chain and the MAP estimate."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .abruptness import AbruptnessReport, abruptness_decision, fit_gmm, global_abrupt_degree
from .abruptness import hellinger_distance, refined_error
from .annf import compute_annf, confidence_map, forward_backward_filter, forward_targets
from .annf import incoherence_map
from .appearance import AppearanceModel, TargetState
from .geometry import Box, RegionGrid
from .imaging import Frame, edge_map
from .sampler import SamplerConfig, map_estimate, restrict_sample_space, run_chain

log = logging.getLogger(__name__)

__all__ = [
    "TrackerConfig",
    "FrameResult",
    "TrackerRun",
    "track_sequence",
    "map_estimate",
    "write_results_csv",
    "write_abruptness_csv",
    "write_diagnostics_csv",
]


@dataclass(frozen=True)
class TrackerConfig:
    """Every tunable of the pipeline plus the master seed."""

    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    patch: int = 8
    annf_iterations: int = 5
    grid_rows: int = 15
    grid_cols: int = 15
    gmm_k: int = 3
    hellinger_samples: int = 10_000
    threshold: float = 0.2
    edge_threshold: float = 0.25
    space_half_width: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.patch < 1 or self.annf_iterations < 0:
            raise ValueError("patch must be >= 1 and annf_iterations >= 0")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid dimensions must be positive")
        if self.gmm_k < 1 or self.hellinger_samples < 2:
            raise ValueError("gmm_k >= 1 and hellinger_samples >= 2 required")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not 0.0 < self.edge_threshold <= 1.0:
            raise ValueError("edge_threshold must lie in (0, 1]")
        if self.space_half_width < 0:
            raise ValueError("space_half_width must be >= 0")

    def with_sampler(self, **kw) -> "TrackerConfig":
        return replace(self, sampler=replace(self.sampler, **kw))


@dataclass
class FrameResult:
    frame: int  # 1-based
    state: TargetState
    report: AbruptnessReport
    log_posterior: float
    diagnostics: list
    rejected_nonfinite: int = 0


@dataclass
class TrackerRun:
    config: TrackerConfig
    init_state: TargetState
    ref_size: tuple[int, int]
    results: list = field(default_factory=list)
    seconds: float = 0.0

    def states(self) -> list[TargetState]:
        """Frame 1 initialization followed by one MAP state per later frame."""
        return [self.init_state] + [r.state for r in self.results]

    def boxes(self) -> list[Box]:
        w, h = self.ref_size
        return [s.box(w, h) for s in self.states()]


def _frame_seeds(seed: int, t: int) -> tuple[int, int, int, np.random.Generator]:
    ss = np.random.SeedSequence([seed, t])
    a, b, c = (int(v) for v in ss.generate_state(3) & 0x7FFFFFFF)
    return a, b, c, np.random.default_rng(ss)


def _local_degree(prev: Frame, cur: Frame, box: Box, tx, ty, cfg: TrackerConfig, seed: int) -> float:
    c = box.clip(prev.width, prev.height)
    p = prev.pixels[c.y0:c.y1, c.x0:c.x1].reshape(-1, 3)
    q = cur.pixels[ty, tx]
    if len(p) == 0 or len(q) == 0:
        return 1.0
    gp = fit_gmm(p, cfg.gmm_k, seed=seed)
    gq = fit_gmm(q, cfg.gmm_k, seed=seed + 1)
    return hellinger_distance(gp, gq, seed=seed + 2, n_samples=cfg.hellinger_samples)


def track_frame(
    prev: Frame,
    cur: Frame,
    prev_state: TargetState,
    model: AppearanceModel,
    grid: RegionGrid,
    cfg: TrackerConfig,
    t: int,
) -> FrameResult:
    """One step of the tracker; ``t`` is the 1-based index of ``cur``."""
    s_fwd, s_bwd, s_gmm, rng = _frame_seeds(cfg.seed, t)
    box = prev_state.box(model.ref_w, model.ref_h).clip(prev.width, prev.height)

    fwd = compute_annf(prev, cur, cfg.patch, cfg.annf_iterations, s_fwd, centers=box)
    bwd = compute_annf(cur, prev, cfg.patch, cfg.annf_iterations, s_bwd)
    survivors = forward_backward_filter(fwd, bwd, box)
    h = incoherence_map(survivors, fwd, box)
    lam = confidence_map(h, grid).lam

    # the full-frame field aligned with frame t carries the frame-level error
    r = refined_error(bwd.error_image(), edge_map(cur, cfg.edge_threshold))
    g = global_abrupt_degree(r)
    tx, ty = forward_targets(fwd, box)
    l = _local_degree(prev, cur, box, tx, ty, cfg, s_gmm)
    report = abruptness_decision(g, l, cfg.threshold)

    space = restrict_sample_space(report.abrupt, prev_state, grid, cfg.space_half_width)
    start = TargetState(float(math.floor(prev_state.x + 0.5)), float(math.floor(prev_state.y + 0.5)), prev_state.s)
    chain = run_chain(model.evaluator(cur), lam, space, cfg.sampler, rng, start)
    best = chain.map_index()
    state = chain.states[best]
    return FrameResult(
        t, state, report, math.log(chain.posteriors[best]), chain.diagnostics, chain.rejected_nonfinite
    )


def track_sequence(frames, init_state: TargetState | Box, cfg: TrackerConfig | None = None, ref_size=None) -> TrackerRun:
    """Track a target through ``frames`` (a sequence of :class:`Frame`).

    ``init_state`` is either the frame-1 box or a center state together with
    ``ref_size = (w, h)``.  Returns one MAP state for every frame after the
    first.
    """
    cfg = cfg or TrackerConfig()
    frames = list(frames)
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    first = frames[0]
    if isinstance(init_state, Box):
        box = init_state
        init_state = TargetState.from_box(box)
    else:
        if ref_size is None:
            raise ValueError("ref_size is required when init_state is a TargetState")
        box = init_state.box(*ref_size)
    if box.is_empty() or box.clip(first.width, first.height) != box:
        raise ValueError(f"initial box {box} must be non-empty and inside the {first.width}x{first.height} frame")
    for i, f in enumerate(frames[1:], start=2):
        if (f.width, f.height) != (first.width, first.height):
            raise ValueError(f"frame {i} is {f.width}x{f.height}, expected {first.width}x{first.height}")

    model = AppearanceModel.from_frame(first, box)
    grid = RegionGrid(first.width, first.height, cfg.grid_rows, cfg.grid_cols)
    run = TrackerRun(cfg, init_state, (box.width, box.height))
    t0 = time.perf_counter()
    state = init_state
    for t in range(2, len(frames) + 1):
        res = track_frame(frames[t - 2], frames[t - 1], state, model, grid, cfg, t)
        log.debug("frame %d: state=(%g, %g) g=%.4f l=%.4f abrupt=%s", t, res.state.x, res.state.y,
                  res.report.g, res.report.l, res.report.abrupt)
        run.results.append(res)
        state = res.state
    run.seconds = time.perf_counter() - t0
    return run


# --- output ------------------------------------------------------------------


def _num(v: float) -> str:
    return format(float(v), ".10g")


def write_results_csv(run: TrackerRun, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={run.config.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x", "y", "s", "abrupt", "g", "l", "log_posterior"])
        for r in run.results:
            w.writerow([
                r.frame, _num(r.state.x), _num(r.state.y), _num(r.state.s), int(r.report.abrupt),
                _num(r.report.g), _num(r.report.l), _num(r.log_posterior),
            ])


def write_abruptness_csv(run: TrackerRun, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={run.config.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "g", "l", "a", "abrupt"])
        for r in run.results:
            rep = r.report
            w.writerow([r.frame, _num(rep.g), _num(rep.l), _num(rep.a), int(rep.abrupt)])


def write_diagnostics_csv(run: TrackerRun, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={run.config.seed}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "iteration", "accepted", "log_posterior", "dos_entropy"])
        for r in run.results:
            for d in r.diagnostics:
                w.writerow([r.frame, d["iteration"], d["accepted"], _num(d["log_posterior"]),
                            _num(d["dos_entropy"])])
