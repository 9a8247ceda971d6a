"""Command-line entry points: ``track``, ``eval``, ``generate`` and ``selfcheck``.

Run configs are flat ``key = value`` text files, one key per line, ``#``
starts a comment.  Relative paths resolve against the config file's folder.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS, SyntheticSpec, evaluate
from .evaluation import generate_synthetic, read_ground_truth, read_results
from .geometry import Box
from .imaging import FrameLoadError, load_frames
from .sampler import SamplerConfig
from .tracker import TrackerConfig, track_sequence, write_abruptness_csv, write_diagnostics_csv
from .tracker import write_results_csv

log = logging.getLogger("abrupttrack")


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _box(text: str) -> tuple[int, int, int, int]:
    parts = [int(float(p)) for p in text.replace(",", " ").split()]
    if len(parts) != 4:
        raise ValueError("expected four numbers x,y,w,h")
    return tuple(parts)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# key -> (parser, default); defaults follow the tracker and sampler defaults
_d = SamplerConfig()
_t = TrackerConfig()
PARAMS = {
    "frames_dir": (str, None),
    "init_box": (_box, None),
    "output_dir": (str, "out"),
    "seed": (int, _t.seed),
    "theta": (float, _d.theta),
    "beta": (float, _d.beta),
    "sigma_x": (float, _d.sigma[0]),
    "sigma_y": (float, _d.sigma[1]),
    "sigma_s": (float, _d.sigma[2]),
    "k_iters": (int, _d.k_iters),
    "n_per_iter": (int, _d.n_per_iter),
    "k0": (_opt_float, _d.k0),
    "tau": (float, _d.tau),
    "kernel_c": (float, _d.kernel_c),
    "eps_lambda": (float, _d.eps_lambda),
    "dos_update": (str, _d.dos_update),
    "lock_scale": (_bool, _d.lock_scale),
    "threshold": (float, _t.threshold),
    "grid_rows": (int, _t.grid_rows),
    "grid_cols": (int, _t.grid_cols),
    "patch": (int, _t.patch),
    "annf_iterations": (int, _t.annf_iterations),
    "gmm_k": (int, _t.gmm_k),
    "hellinger_samples": (int, _t.hellinger_samples),
    "edge_threshold": (float, _t.edge_threshold),
    "space_half_width": (int, _t.space_half_width),
}
del _d, _t


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    base: Path = Path(".")

    def __getitem__(self, key):
        return self.values[key]

    def path(self, key) -> Path:
        p = Path(self.values[key])
        return p if p.is_absolute() else (self.base / p).resolve()

    def tracker_config(self) -> TrackerConfig:
        v = self.values
        try:
            sampler = SamplerConfig(
                theta=v["theta"],
                beta=v["beta"],
                sigma=(v["sigma_x"], v["sigma_y"], v["sigma_s"]),
                k_iters=v["k_iters"],
                n_per_iter=v["n_per_iter"],
                k0=v["k0"],
                tau=v["tau"],
                kernel_c=v["kernel_c"],
                eps_lambda=v["eps_lambda"],
                dos_update=v["dos_update"],
                lock_scale=v["lock_scale"],
            )
            return TrackerConfig(
                sampler=sampler,
                patch=v["patch"],
                annf_iterations=v["annf_iterations"],
                grid_rows=v["grid_rows"],
                grid_cols=v["grid_cols"],
                gmm_k=v["gmm_k"],
                hellinger_samples=v["hellinger_samples"],
                threshold=v["threshold"],
                edge_threshold=v["edge_threshold"],
                space_half_width=v["space_half_width"],
                seed=v["seed"],
            )
        except ValueError as exc:
            raise ConfigError(f"invalid parameter: {exc}") from exc

    def dump(self) -> str:
        lines = ["# effective configuration (defaults + overrides)"]
        for key in PARAMS:
            val = self.values[key]
            if key in ("frames_dir", "output_dir") and val is not None:
                val = self.path(key)
            elif key == "init_box" and val is not None:
                val = ",".join(str(x) for x in val)
            lines.append(f"{key} = {'none' if val is None else val}")
        return "\n".join(lines) + "\n"


def parse_config(text: str, base=".") -> RunConfig:
    values = {k: default for k, (_, default) in PARAMS.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in PARAMS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = PARAMS[key][0](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    cfg = RunConfig(values, Path(base))
    for key in ("theta", "beta"):
        if not 0.0 <= values[key] <= 1.0:
            raise ConfigError(f"{key} = {values[key]} must lie in [0, 1]")
    cfg.tracker_config()  # remaining validation
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path.parent)


# --- commands ----------------------------------------------------------------


def cmd_track(args) -> int:
    cfg = load_config(args.config)
    for key in ("frames_dir", "init_box"):
        if cfg[key] is None:
            raise ConfigError(f"missing required key {key!r}")
    tcfg = cfg.tracker_config()
    frames = load_frames(cfg.path("frames_dir"))
    if len(frames) < 2:
        raise ConfigError(f"{cfg.path('frames_dir')} holds {len(frames)} frame(s); need at least 2")
    box = Box.from_xywh(*cfg["init_box"])
    run = track_sequence(frames, box, tcfg)
    out = cfg.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(run, out / "results.csv")
    write_abruptness_csv(run, out / "abruptness.csv")
    write_diagnostics_csv(run, out / "diagnostics.csv")
    (out / "config.effective").write_text(cfg.dump())
    print(f"tracked {len(run.results)} frames in {run.seconds:.1f} s -> {out / 'results.csv'}")
    return 0


def _write_curve(path, thresholds, values, seed):
    with open(path, "w") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("threshold,value\n")
        for t, v in zip(thresholds, values):
            fh.write(f"{format(float(t), '.10g')},{format(float(v), '.10g')}\n")


def cmd_eval(args) -> int:
    results, seed = read_results(args.results)
    truth = read_ground_truth(args.truth)
    summary = evaluate(results, truth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [] if seed is None else [f"seed={seed}"]
    lines += [
        f"frames={len(summary.frames)}",
        f"avg_cle={summary.avg_cle:.10g}",
        f"avg_vor={summary.avg_vor:.10g}",
        f"precision_at_20={summary.precision_at_20:.10g}",
        f"success_auc={summary.success_auc:.10g}",
    ]
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    _write_curve(out / "precision.csv", PRECISION_THRESHOLDS, summary.precision, seed)
    _write_curve(out / "success.csv", SUCCESS_THRESHOLDS, summary.success, seed)
    sys.stdout.write(text)
    return 0


def _pair(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected WxH")
    return int(parts[0]), int(parts[1])


def _color(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3 or not all(0 <= p <= 1 for p in parts):
        raise argparse.ArgumentTypeError("expected r,g,b in [0, 1]")
    return tuple(parts)


def cmd_generate(args) -> int:
    try:
        spec = SyntheticSpec(
            width=args.width,
            height=args.height,
            frames=args.frames,
            target_size=args.target_size,
            target_color=args.target_color,
            step=args.step,
            teleport_every=args.teleport,
            clutter=args.clutter,
            noise=args.noise,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    _, gt = generate_synthetic(spec, out)
    x, y, w, h = (int(v) for v in gt.boxes[1])
    (out / "track.cfg").write_text(
        f"# seed={spec.seed}\nframes_dir = .\ninit_box = {x},{y},{w},{h}\noutput_dir = results\nseed = {spec.seed}\n"
    )
    print(f"wrote {spec.frames} frames and groundtruth.csv to {out}")
    return 0


def cmd_selfcheck(args) -> int:
    """Fast sanity checks of the core pieces on tiny inputs."""
    from .abruptness import Gmm, abruptness_decision, hellinger_distance
    from .annf import compute_annf, exhaustive_annf
    from .evaluation import center_location_error, voc_overlap
    from .imaging import Frame

    rng = np.random.default_rng(args.seed)
    checks = []
    a = Frame(rng.random((12, 12, 3)))
    b = Frame(np.roll(a.pixels, (1, 3), axis=(0, 1)))
    f = compute_annf(a, b, 3, iterations=8, seed=args.seed)
    ex = exhaustive_annf(a, b, 3)
    # centers whose patch, shifted by (+3, +1), stays clear of the wrapped border
    inner = f.valid.copy()
    inner[:, 8:] = False
    inner[10:, :] = False
    hit = (f.offsets[inner] == (3, 1)).all(axis=1)
    checks.append(("annf translation", bool(hit.all())))
    checks.append(("annf >= exhaustive", bool((f.errors[f.valid] >= ex.errors[f.valid] - 1e-12).all())))
    g = Gmm(np.array([1.0]), np.zeros((1, 3)), np.eye(3)[None] * 0.01)
    checks.append(("hellinger self", hellinger_distance(g, g) <= 0.02))
    checks.append(("decision", abruptness_decision(0.15, 0.10).abrupt is False))
    checks.append(("cle 3-4-5", center_location_error((0, 0, 4, 4), (3, 4, 4, 4)) == 5.0))
    checks.append(("vor", abs(voc_overlap((0, 0, 10, 10), (5, 0, 10, 10)) - 1 / 3) < 1e-15))
    ok = True
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'} {name}")
        ok &= passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="abrupttrack", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("track", help="track a target through a frame directory")
    t.add_argument("--config", required=True)
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("eval", help="score tracker results against ground truth")
    e.add_argument("--results", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("generate", help="render a synthetic teleport sequence")
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=int, default=320)
    g.add_argument("--height", type=int, default=240)
    g.add_argument("--frames", type=int, default=64)
    g.add_argument("--teleport", type=int, default=8, help="teleport period in frames (0 = none)")
    g.add_argument("--target-size", type=_pair, default=(30, 30), help="WxH")
    g.add_argument("--target-color", type=_color, default=(0.85, 0.1, 0.1), help="r,g,b")
    g.add_argument("--step", type=float, default=3.0, help="smooth motion in px per frame")
    g.add_argument("--clutter", type=int, default=3)
    g.add_argument("--noise", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("selfcheck", help="run quick internal consistency checks")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FrameLoadError as exc:
        print(f"error: cannot load frame {exc.index}: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
