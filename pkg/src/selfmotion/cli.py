"""Experiment runner.

Subcommands: ``train`` (fit a coordinate network, write the parameter
bundle and loss curve), ``grow`` (extract a level set and chart it),
``eval`` (angle statistics for a bundle), ``sim`` (run a control scenario
from a manifest; several manifests run in a worker pool), and ``bench``
(forward-pass timing).  All take ``--config``, ``--out``, ``--seed``,
``--threads``; exit code is 0 on success, 2 for configuration errors and
3 for numeric failures (divergence, singularity, bad topology).

Every emitted file records tool version, seed, and the hash of the
effective config, so a rerun with equal inputs is byte-identical.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import fileio, plots
from .chains import TaskMap, anthro7, chain_from_dict, forward_kinematics, \
    load_chain, planar_chain, task_jacobian
from .charts import angle_chart, harmonic_parametrization, save_chart
from .control import ImpedanceGains, ProjectionGains, TrajectorySpec, \
    pd_plus_controller, prefilter, projection_baseline_torque, \
    sampled_reference, spring_potentials, stacked_maps
from .coordinates import resolve_metric
from .evaluation import evaluate_angles
from .geometry import plane_stack_normals
from .meshing import export_mesh, extract_level_curve, extract_level_surface
from .network import forward, init_params, load_params, save_params
from .simulate import kinematic_velocity_control, simulate
from .training import TrainingConfig, train
from .validation import ConfigError, NumericError, SingularityError

_TRAIN_KEYS = ("lambda1", "lambda2", "epochs", "steps_per_epoch",
               "samples_per_epoch", "region", "center", "edge",
               "sample_margin", "metric", "learning_rate", "lr_decay",
               "optimizer", "batch_size", "widths", "r")


def _build_chain(spec, base: Path):
    """Chain from a config entry: stock shorthand, inline table, or file."""
    if not isinstance(spec, dict):
        raise ConfigError("chain entry must be a mapping")
    if "file" in spec:
        return load_chain(_resolve(spec["file"], base))
    kind = spec.get("kind")
    if kind == "planar":
        return planar_chain(int(spec.get("n", 2)),
                            lengths=spec.get("lengths", 1.0),
                            masses=spec.get("masses", 3.0),
                            gravity=tuple(spec.get("gravity", (0.0, 0.0, 0.0))))
    if kind == "anthro7":
        return anthro7(gravity=tuple(spec.get("gravity", (0.0, 0.0, 0.0))))
    if "links" in spec:
        return chain_from_dict({"schema": "chain/1", **spec})
    raise ConfigError(f"chain kind must be planar|anthro7 or a file, got {kind!r}")


def _resolve(p, base: Path) -> Path:
    """Resolve a referenced file against the config dir, then the CWD."""
    p = Path(p)
    for candidate in ((p,) if p.is_absolute() else (base / p, Path.cwd() / p)):
        if candidate.is_file():
            return candidate
    raise ConfigError(f"referenced file does not exist: {p}")


def _effective_seed(cfg: dict, args) -> int:
    return int(args.seed) if args.seed is not None else int(cfg.get("seed", 0))


def _hash(cfg: dict, seed: int) -> str:
    body = {k: v for k, v in cfg.items() if k != "schema"}
    body["seed"] = seed
    return fileio.config_hash(body)


def _meta(seed: int, h: str) -> dict:
    return {"seed": seed, "config": h}


# ---------------------------------------------------------------------------
# train / grow / eval / bench
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = fileio.load_config(args.config, "train")
    base = Path(args.config).parent
    seed = _effective_seed(cfg, args)
    h = _hash(cfg, seed)
    chain = _build_chain(cfg.get("chain", {"kind": "planar", "n": 2}), base)
    task = TaskMap(cfg.get("task_map", "planar-x"))
    kw = {k: cfg[k] for k in _TRAIN_KEYS if k in cfg}
    if "widths" in kw:
        kw["widths"] = tuple(kw["widths"])
    if kw.get("center") is not None:
        kw["center"] = tuple(kw["center"])
    tc = TrainingConfig(seed=seed, **kw)
    t0 = time.perf_counter()
    params, curve = train(tc, chain, task)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "model.bin", params, metric=tc.metric, seed=seed,
                config_hash=h)
    fileio.write_csv(out / "loss.csv",
                     {"epoch": curve[:, 0], "step": curve[:, 1],
                      "loss": curve[:, 2]}, _meta(seed, h))
    plots.svg_line_plot(out / "loss.svg", np.arange(curve.shape[0]),
                        {"loss": curve[:, 2]}, title="training loss",
                        xlabel="update", ylabel="loss")
    print(f"trained {params.n}->{params.r} net {tc.widths} in {elapsed:.1f}s, "
          f"final loss {curve[-1, 2]:.4f} -> {out / 'model.bin'}")
    return 0


def cmd_grow(args) -> int:
    cfg = fileio.load_config(args.config, "grow")
    base = Path(args.config).parent
    seed = _effective_seed(cfg, args)
    h = _hash(cfg, seed)
    chain = _build_chain(cfg.get("chain", {"kind": "planar", "n": 2}), base)
    task = TaskMap(cfg.get("task_map", "planar-x"))
    x0 = float(cfg.get("x0", 0.0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if chain.n == 2:
        mesh = extract_level_curve(chain, task, x0,
                                   grid_resolution=int(cfg.get("grid_resolution", 256)))
        chart = angle_chart(mesh)
    elif chain.n == 3:
        mesh = extract_level_surface(chain, task, x0,
                                     grid_resolution=int(cfg.get("grid_resolution", 96)),
                                     region=cfg.get("region", "q1>=0"))
        chart = harmonic_parametrization(mesh)
    else:
        raise ConfigError("charted growth needs a 2- or 3-DoF chain")
    save_chart(chart, out / "chart.npz",
               meta={"tool": fileio.TOOL_VERSION, "seed": seed, "config": h})
    msg = (f"chart over {mesh.vertices.shape[0]} vertices / "
           f"{np.asarray(mesh.elements).shape[0]} elements -> {out / 'chart.npz'}")
    if cfg.get("stl", False):
        if chain.n != 3:
            raise ConfigError("STL export needs a surface mesh (3-DoF chain)")
        (out / "surface.stl").write_bytes(export_mesh(mesh, "stl"))
        msg += f" (+ {out / 'surface.stl'})"
    print(msg)
    return 0


def cmd_eval(args) -> int:
    cfg = fileio.load_config(args.config, "eval")
    base = Path(args.config).parent
    seed = _effective_seed(cfg, args)
    params, bmeta = load_params(_resolve(cfg["bundle"], base))
    chain = _build_chain(cfg.get("chain", {"kind": "planar", "n": 2}), base)
    task = TaskMap(cfg.get("task_map", "planar-x"))
    metric = resolve_metric(cfg.get("metric", bmeta["metric"]), chain)
    n_samples = int(cfg.get("n_samples", 100_000))
    radius = (float(args.exclusion_radius) if args.exclusion_radius is not None
              else float(cfg.get("exclusion_radius", 0.0)))
    centers = cfg.get("exclusion_centers")
    report = evaluate_angles(
        params, chain, task, metric, n_samples,
        region=cfg.get("region", "torus"),
        center=cfg.get("center"), edge=cfg.get("edge"),
        exclusion_centers=None if centers is None else np.asarray(centers, float),
        exclusion_radius=radius, seed=seed)
    h = _hash(cfg, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names, means, stds, counts = [], [], [], []
    lines = []
    for name, stats in report.items():
        if stats is None:
            continue
        names.append(name)
        means.append(stats.mean)
        stds.append(stats.std)
        counts.append(stats.angles.size)
        lines.append(f"{name}: mean {stats.mean:.3f} deg, "
                     f"std {stats.std:.3f} deg over {stats.angles.size} pairs")
    fileio.write_csv(out / "stats.csv",
                     {"pair_class": names, "mean_deg": np.asarray(means),
                      "std_deg": np.asarray(stds),
                      "count": np.asarray(counts)}, _meta(seed, h))
    edges = np.arange(91.0)
    hist_cols = {"bin_left_deg": edges[:-1]}
    for name in names:
        hist_cols[name] = np.histogram(report[name].angles, bins=edges)[0]
    fileio.write_csv(out / "hist.csv", hist_cols, _meta(seed, h))
    print("\n".join(lines))
    return 0


def cmd_bench(args) -> int:
    cfg = fileio.load_config(args.config, "bench")
    base = Path(args.config).parent
    seed = _effective_seed(cfg, args)
    h = _hash(cfg, seed)
    if "bundle" in cfg:
        params, _ = load_params(_resolve(cfg["bundle"], base))
    else:
        n = int(cfg.get("n", 7))
        r = int(cfg.get("r", 4))
        widths = tuple(cfg.get("widths", (1024, 512)))
        rng = np.random.default_rng(seed)
        params = init_params(n, r, widths, ("revolute",) * n, rng)
    passes = int(cfg.get("passes", 10_000))
    if passes < 1:
        raise ConfigError("passes must be at least 1")
    rng = np.random.default_rng(seed)
    q = rng.uniform(-np.pi, np.pi, params.n)
    for _ in range(100):  # warm caches and BLAS threads before timing
        forward(params, q)
    samples = np.empty(passes)
    for k in range(passes):
        t0 = time.perf_counter()
        forward(params, q)
        samples[k] = time.perf_counter() - t0
    us = samples * 1e6
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_csv(out / "bench.csv", {
        "passes": np.array([passes]), "n": np.array([params.n]),
        "r": np.array([params.r]), "width1": np.array([params.widths[0]]),
        "width2": np.array([params.widths[1]]),
        "mean_us": np.array([us.mean()]), "std_us": np.array([us.std()]),
        "median_us": np.array([np.median(us)]),
        "threads": np.array([0 if args.threads is None else args.threads]),
    }, _meta(seed, h))
    print(f"forward pass ({params.n}->{params.r}, widths {params.widths}): "
          f"{us.mean():.1f} ± {us.std():.1f} µs over {passes} passes "
          f"(median {np.median(us):.1f} µs)")
    return 0


# ---------------------------------------------------------------------------
# sim scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentManifest:
    """One reproducible scenario: what to run, with which pieces, where to."""

    scenario: str
    recipe: str
    chain: dict
    coordinates: dict
    controller: dict
    q0: np.ndarray
    duration: float
    dt: float
    seed: int
    extra: dict
    base: Path
    out: Path
    config_hash: str = ""

    @staticmethod
    def from_config(cfg: dict, base: Path, out: Path, seed: int):
        scenario = cfg.get("scenario")
        if scenario not in _SCENARIOS:
            raise ConfigError(
                f"unknown scenario {scenario!r}; pick one of {sorted(_SCENARIOS)}")
        recipe = str(cfg.get("recipe", scenario))
        coords = dict(cfg.get("coordinates", {"kind": "plane-stack"}))
        if "path" in coords:  # manifest invariant: referenced files exist
            coords["path"] = str(_resolve(coords["path"], base))
        duration = float(cfg.get("duration", 5.0))
        dt = float(cfg.get("dt", 1e-3))
        if duration <= 0 or dt <= 0:
            raise ConfigError("duration and dt must be positive")
        return ExperimentManifest(
            scenario=scenario, recipe=recipe,
            chain=dict(cfg.get("chain", {"kind": "planar", "n": 3})),
            coordinates=coords,
            controller=dict(cfg.get("controller", {})),
            q0=np.asarray(cfg["q0"], float),
            duration=duration, dt=dt, seed=seed,
            extra={k: cfg[k] for k in ("steps", "jumps", "loop") if k in cfg},
            base=base, out=out, config_hash=_hash(cfg, seed))


def _manifest_coords(man: ExperimentManifest, chain, task):
    kind = man.coordinates.get("kind", "plane-stack")
    if kind == "plane-stack":
        metric = resolve_metric(man.coordinates.get("metric", "euclidean"), chain)
        return plane_stack_normals(chain, task, metric, man.q0)
    if kind == "bundle":
        params, _ = load_params(man.coordinates["path"])
        return params
    raise ConfigError(f"coordinates kind must be plane-stack|bundle, got {kind!r}")


def _step_reference(man, phi0):
    """Piecewise targets from `steps` rows ({time, coord, delta}), prefiltered."""
    steps = man.extra.get("steps", [])
    if not steps:
        raise ConfigError("interleaved-steps scenario needs a 'steps' list")
    times = [0.0]
    targets = [np.array(phi0, float)]
    for row in steps:
        t, c, d = float(row["time"]), int(row["coord"]), float(row["delta"])
        if t <= times[-1]:
            raise ConfigError("step times must be strictly increasing")
        nxt = targets[-1].copy()
        nxt[c] += d
        times.append(t)
        targets.append(nxt)
    ctl = man.controller
    spec = TrajectorySpec(np.asarray(times), np.stack(targets),
                          omega0=float(ctl.get("omega0", 2.0 * np.pi)),
                          zeta=float(ctl.get("zeta", 0.7)))
    t, Y, Yd, Ydd = prefilter(spec, man.dt, duration=man.duration)
    return sampled_reference(t, Y, Yd, Ydd)


def _sim_interleaved(man: ExperimentManifest):
    chain = _build_chain(man.chain, man.base)
    task = TaskMap(man.coordinates.get("task_map", man.controller.get(
        "task_map", "planar-x" if chain.n == 2 else "planar-xy")))
    coords = _manifest_coords(man, chain, task)
    phi_fn, _ = stacked_maps(chain, task, coords)
    gains = ImpedanceGains.uniform(
        chain.n, stiffness=float(man.controller.get("stiffness", 100.0)),
        zeta=float(man.controller.get("zeta", 0.7)))
    reference = _step_reference(man, phi_fn(man.q0))
    controller = pd_plus_controller(
        chain, task, coords, gains, reference,
        feed_forward=bool(man.controller.get("feed_forward", True)))
    log = simulate(chain, controller, man.q0, np.zeros(chain.n),
                   man.duration, man.dt)
    track_err = np.abs(log.extras["phi"] - log.extras["phi_d"]).max(axis=0)
    summary = [f"peak |phi - phi_d| per coordinate: "
               f"{np.array2string(track_err, precision=4)}",
               f"final speed {np.linalg.norm(log.qd[-1]):.2e} rad/s"]
    cols = fileio.log_to_columns(log)
    p = log.extras["phi"].shape[1]
    figs = [("tracking.svg",
             {**{f"phi{i + 1}": log.extras["phi"][:, i] for i in range(p)},
              **{f"phi{i + 1}_d": log.extras["phi_d"][:, i] for i in range(p)}},
             "stacked coordinates", "value"),
            ("speeds.svg",
             {f"qd{i + 1}": log.qd[:, i] for i in range(chain.n)},
             "joint velocities", "rad/s")]
    return log, cols, summary, figs


def _sim_hidden_spring(man: ExperimentManifest):
    chain = _build_chain(man.chain, man.base)
    task = TaskMap(man.controller.get("task_map",
                                      "planar-x" if chain.n == 2 else "planar-xy"))
    m = task.dim(chain)
    gains = ProjectionGains.uniform(
        m, chain.n,
        stiffness_x=float(man.controller.get("stiffness_x", 100.0)),
        stiffness_q=float(man.controller.get("stiffness_q", 25.0)),
        zeta=float(man.controller.get("zeta", 0.7)))
    jumps = man.extra.get("jumps", {})
    jump_times = np.asarray(jumps.get("times", np.arange(2.0, 19.0, 2.0)), float)
    scale = float(jumps.get("scale", 0.2))
    rng = np.random.default_rng(man.seed)
    x_d = forward_kinematics(chain, man.q0, task)
    J0 = task_jacobian(chain, man.q0, task)
    # each jump shifts q_d by K_q^{-1} J_x^T w: the secondary spring force it
    # adds lies in the row space of J_x, which the projector annihilates
    deltas = np.stack([
        np.linalg.solve(gains.K_q, J0.T @ (scale * rng.standard_normal(m)))
        for _ in jump_times]) if jump_times.size else np.zeros((0, chain.n))
    q_table = np.vstack([man.q0, man.q0 + np.cumsum(deltas, axis=0)])

    def q_d_at(t):
        return q_table[int(np.searchsorted(jump_times, t * (1 + 1e-12), side="right"))]

    def controller(t, q, qd):
        q_d = q_d_at(t)
        tau = projection_baseline_torque(chain, task, q, qd, x_d, q_d, gains)
        e_x = forward_kinematics(chain, q, task) - x_d
        U_x, U_q = spring_potentials(e_x, q - q_d, gains.K_x, gains.K_q)
        return tau, {"U_x": U_x, "U_q": U_q, "speed": float(np.linalg.norm(qd))}

    log = simulate(chain, controller, man.q0, np.zeros(chain.n),
                   man.duration, man.dt)
    U_q = log.extras["U_q"]
    summary = [f"secondary potential: start {U_q[0]:.4e}, end {U_q[-1]:.4e} "
               f"(growth {U_q[-1] - U_q[0]:.4e})",
               f"peak speed {log.extras['speed'].max():.2e} rad/s "
               f"across {jump_times.size} hidden jumps"]
    cols = fileio.log_to_columns(log)
    figs = [("springs.svg", {"U_x": log.extras["U_x"], "U_q": U_q},
             "spring potentials", "energy"),
            ("speeds.svg", {"|qd|": log.extras["speed"]},
             "joint speed", "rad/s")]
    return log, cols, summary, figs


def _sim_kinematic_loop(man: ExperimentManifest):
    chain = _build_chain(man.chain, man.base)
    task = TaskMap(man.coordinates.get("task_map", man.controller.get(
        "task_map", "planar-x" if chain.n == 2 else "planar-xy")))
    coords = _manifest_coords(man, chain, task)
    maps = stacked_maps(chain, task, coords)
    loop = man.extra.get("loop", {})
    rho = float(loop.get("radius", 0.25))
    turns = float(loop.get("turns", 1.0))
    coords_ab = tuple(loop.get("coords", (0, 1)))
    omega = 2.0 * np.pi * turns / man.duration
    phi0 = maps[0](man.q0)

    def reference(t):
        phi_d = phi0.copy()
        phid = np.zeros_like(phi0)
        phidd = np.zeros_like(phi0)
        a, b = coords_ab
        phi_d[a] += rho * (np.cos(omega * t) - 1.0)
        phi_d[b] += rho * np.sin(omega * t)
        phid[a] = -rho * omega * np.sin(omega * t)
        phid[b] = rho * omega * np.cos(omega * t)
        phidd[a] = -rho * omega**2 * np.cos(omega * t)
        phidd[b] = -rho * omega**2 * np.sin(omega * t)
        return phi_d, phid, phidd

    log = kinematic_velocity_control(maps, chain, reference, man.q0,
                                     man.duration, man.dt)
    ret = np.linalg.norm(log.q[-1] - log.q[0])
    exc = np.linalg.norm(log.q - log.q[0], axis=1).max()
    summary = [f"closed-loop joint return distance {ret:.3e} rad "
               f"(peak excursion {exc:.3f} rad)"]
    cols = fileio.log_to_columns(log)
    p = log.extras["phi"].shape[1]
    figs = [("tracking.svg",
             {**{f"phi{i + 1}": log.extras["phi"][:, i] for i in range(p)},
              **{f"phi{i + 1}_d": log.extras["phi_d"][:, i] for i in range(p)}},
             "stacked coordinates", "value"),
            ("joints.svg", {f"q{i + 1}": log.q[:, i] for i in range(chain.n)},
             "joint angles", "rad")]
    return log, cols, summary, figs


_SCENARIOS = {
    "interleaved-steps": _sim_interleaved,
    "hidden-spring": _sim_hidden_spring,
    "kinematic-loop": _sim_kinematic_loop,
}


def run_manifest(man: ExperimentManifest) -> str:
    """Run one scenario and write its artifacts; returns the summary text."""
    log, cols, summary, figs = _SCENARIOS[man.scenario](man)
    out = man.out / man.recipe
    out.mkdir(parents=True, exist_ok=True)
    meta = _meta(man.seed, man.config_hash)
    fileio.write_csv(out / "log.csv", cols, meta)
    for fname, series, title, ylabel in figs:
        plots.svg_line_plot(out / fname, log.t, series, title=title,
                            xlabel="time [s]", ylabel=ylabel)
    text = "\n".join([f"# tool={fileio.TOOL_VERSION}",
                      f"# seed={man.seed}", f"# config={man.config_hash}",
                      f"scenario: {man.scenario}"] + summary) + "\n"
    (out / "summary.txt").write_text(text)
    return f"[{man.recipe}] " + "; ".join(summary)


def cmd_sim(args) -> int:
    manifests = []
    for cfg_path in args.config:
        cfg = fileio.load_config(cfg_path, "sim")
        seed = _effective_seed(cfg, args)
        manifests.append(ExperimentManifest.from_config(
            cfg, Path(cfg_path).parent, Path(args.out), seed))
    if len(manifests) == 1:
        print(run_manifest(manifests[0]))
        return 0
    workers = args.threads or min(4, len(manifests))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for line in pool.map(run_manifest, manifests):
            print(line)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="selfmotion",
        description="redundancy-resolution experiments: train, grow, eval, "
                    "sim, bench")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, multi_config=False):
        if multi_config:
            p.add_argument("--config", required=True, nargs="+",
                           help="manifest path(s); several run in a pool")
        else:
            p.add_argument("--config", required=True, help="config path")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS/worker threads")

    common(sub.add_parser("train", help="fit coordinate network"))
    common(sub.add_parser("grow", help="extract and chart a level set"))
    p_eval = sub.add_parser("eval", help="angle statistics for a bundle")
    common(p_eval)
    p_eval.add_argument("--exclusion-radius", type=float, default=None,
                        help="ball radius around excluded configurations")
    common(sub.add_parser("sim", help="run scenario manifest(s)"),
           multi_config=True)
    common(sub.add_parser("bench", help="forward-pass timing"))
    return top


_HANDLERS = {"train": cmd_train, "grow": cmd_grow, "eval": cmd_eval,
             "sim": cmd_sim, "bench": cmd_bench}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = _HANDLERS[args.command]
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            with threadpool_limits(limits=args.threads):
                return handler(args)
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, SingularityError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
