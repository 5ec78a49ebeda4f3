"""End-to-end acceptance checks at the advertised scales and tolerances.

Slow fits cache their bundles under artifacts/acceptance keyed by the
config hash; delete that directory to force clean retraining.
"""

import json
from dataclasses import replace
from pathlib import Path
from time import perf_counter

import numpy as np
import pytest

from selfmotion import cli, fileio
from selfmotion.chains import (
    TaskMap,
    anthro7,
    forward_kinematics,
    planar_chain,
    singularity_margin,
    task_jacobian,
)
from selfmotion.charts import harmonic_parametrization
from selfmotion.control import (
    ProjectionGains,
    projection_baseline_torque,
    spring_potentials,
    stacked_maps,
)
from selfmotion.coordinates import GrownCoordinates
from selfmotion.dynamics import gravity_vector, total_energy
from selfmotion.evaluation import evaluate_angles
from selfmotion.geometry import (
    Metric,
    generalized_pseudoinverse,
    involutivity_residual,
    null_space_projector,
    plane_stack_normals,
)
from selfmotion.growing import gradient_flow_pull
from selfmotion.meshing import boundary_loop, extract_level_surface
from selfmotion.network import (
    MlpParams,
    forward,
    init_params,
    input_jacobian,
    load_params,
    save_params,
)
from selfmotion.simulate import kinematic_velocity_control, simulate
from selfmotion.training import TrainingConfig, batch_loss, param_gradient, train

ARTIFACTS = Path(__file__).resolve().parent.parent / "artifacts" / "acceptance"

SINGULAR_2R = np.array([[0.0, 0.0], [0.0, np.pi], [np.pi, 0.0], [np.pi, np.pi]])


def nonsingular_samples(rng, chain, task, count, margin=1e-2):
    out = []
    while len(out) < count:
        Q = rng.uniform(-np.pi, np.pi, (count, chain.n))
        for q in Q:
            if singularity_margin(chain, q, task) > margin:
                out.append(q)
                if len(out) == count:
                    break
    return np.asarray(out)


def _cached_fit(name: str, cfg: TrainingConfig, chain, task_name: str):
    """train() with an on-disk cache; returns (params, elapsed seconds)."""
    key = fileio.config_hash({
        "cfg": {k: getattr(cfg, k) for k in (
            "lambda1", "lambda2", "epochs", "steps_per_epoch",
            "samples_per_epoch", "region", "center", "edge", "metric",
            "learning_rate", "lr_decay", "optimizer", "batch_size",
            "widths", "r", "seed")},
        "chain": chain.name, "task": task_name})
    d = ARTIFACTS / f"{name}-{key}"
    bundle, meta_path = d / "model.bin", d / "meta.json"
    if bundle.is_file() and meta_path.is_file():
        params, _ = load_params(bundle)
        return params, float(json.loads(meta_path.read_text())["elapsed_s"])
    d.mkdir(parents=True, exist_ok=True)
    t0 = perf_counter()
    params, curve = train(cfg, chain, TaskMap(task_name))
    elapsed = perf_counter() - t0
    save_params(bundle, params, metric=cfg.metric, seed=cfg.seed,
                config_hash=key)
    meta_path.write_text(json.dumps(
        {"elapsed_s": elapsed, "final_loss": float(curve[-1, 2])}))
    return params, elapsed


# -- 1: projector algebra ----------------------------------------------------

def test_projector_algebra_three_chains_both_metrics():
    rng = np.random.default_rng(11)
    setups = [(planar_chain(2), TaskMap("planar-x"), 334),
              (planar_chain(3), TaskMap("planar-xy"), 333),
              (anthro7(), TaskMap("spatial-xyz"), 333)]
    t0 = perf_counter()
    for chain, task, count in setups:
        Q = nonsingular_samples(rng, chain, task, count)
        for metric_obj in (Metric.euclidean(), Metric.inertia(chain)):
            for q in Q:
                J = task_jacobian(chain, q, task)
                A = metric_obj.matrix(chain, q)
                P = null_space_projector(J, A)
                assert np.abs(P @ P - P).max() < 1e-10
                assert np.abs(J @ P).max() < 1e-10
                stack = plane_stack_normals(chain, task, metric_obj, q)
                J_xi = stack.normals
                P_xi = generalized_pseudoinverse(J_xi, A) @ J_xi
                assert np.abs(P - P_xi).max() < 1e-8
    assert perf_counter() - t0 < 10.0


# -- 2: analytic gradients ---------------------------------------------------

def test_network_jacobian_against_central_differences():
    t0 = perf_counter()
    rng = np.random.default_rng(5)
    chain = planar_chain(3)
    params = init_params(3, 2, (48, 24), chain.joint_types, rng)
    step = 1e-6
    Q = rng.uniform(-np.pi, np.pi, (1000, 3))
    G = input_jacobian(params, Q)
    for k, q in enumerate(Q):
        num = np.empty_like(G[k])
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            num[:, i] = (forward(params, q + e) - forward(params, q - e)) / (2 * step)
        denom = max(1.0, np.abs(num).max())
        assert np.abs(G[k] - num).max() / denom < 1e-5

    task = TaskMap("planar-x")
    metric_obj = Metric.euclidean()
    samples = rng.uniform(-np.pi, np.pi, (64, 3))
    grads = param_gradient(samples, params, chain, task, metric_obj)
    base_args = (samples, chain, task, metric_obj)
    checked = 0
    for field in ("W1", "b1", "W2", "b2", "W_out"):
        arr = getattr(params, field)
        flat_idx = rng.choice(arr.size, size=5, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            for sgn, store in ((+1, "hi"), (-1, "lo")):
                bumped = arr.copy()
                bumped[idx] += sgn * 1e-6
                p2 = replace(params, **{field: bumped})
                if sgn > 0:
                    hi = batch_loss(samples, p2, chain, task, metric_obj)
                else:
                    lo = batch_loss(samples, p2, chain, task, metric_obj)
            num = (hi - lo) / 2e-6
            ana = grads[field][idx]
            assert abs(ana - num) / max(1.0, abs(num)) < 1e-4
            checked += 1
    assert checked >= 20
    assert perf_counter() - t0 < 60.0


# -- 3: involutivity classifier ----------------------------------------------

def test_involutivity_separates_scalar_from_planar_xy():
    t0 = perf_counter()
    rng = np.random.default_rng(23)
    chain = planar_chain(3)
    scalar, xy = TaskMap("planar-x"), TaskMap("planar-xy")
    for metric_obj in (Metric.euclidean(), Metric.inertia(chain)):
        Q = nonsingular_samples(rng, chain, scalar, 40)
        for q in Q:
            assert involutivity_residual(chain, scalar, metric_obj, q) < 1e-4
    Q = nonsingular_samples(rng, chain, xy, 60)
    res = np.array([involutivity_residual(chain, xy, Metric.euclidean(), q)
                    for q in Q])
    assert np.mean(res > 1e-2) >= 0.9
    assert perf_counter() - t0 < 30.0


# -- 6: grown-coordinate consistency ------------------------------------------

def _project_to_leaf(chain, task, q, c, tries=60):
    """Newton along the task gradient onto {h = c}."""
    q = q.copy()
    for _ in range(tries):
        err = forward_kinematics(chain, q, task)[0] - c
        if abs(err) < 1e-12:
            return q
        g = task_jacobian(chain, q, task)[0]
        q -= err * g / (g @ g)
    raise AssertionError("leaf projection did not converge")


def test_grown_coordinates_are_constant_along_flow_lines():
    t0 = perf_counter()
    chain, task = planar_chain(2), TaskMap("planar-x")
    metric_obj = Metric.euclidean()
    est = GrownCoordinates(chain=chain, task_map="planar-x",
                           metric="euclidean").fit(X=1.0)

    chart = est.chart_
    xi_at_vertices = est.transform(chart.mesh.vertices)
    assert np.abs(xi_at_vertices - chart.values).max() < 1e-6

    rng = np.random.default_rng(31)
    leaves, per_leaf = (0.4, 1.4, -0.6), 34
    checked = 0
    for c in leaves:
        mid = 0.5 * (c + 1.0)  # leaf between c and the base level 1.0
        raw = rng.uniform(-np.pi, np.pi, (per_leaf, 2))
        for row in raw:
            q = _project_to_leaf(chain, task, row, c)
            if singularity_margin(chain, q, task) < 5e-2:
                continue
            q_mid = gradient_flow_pull(chain, task, metric_obj, mid, q)
            xi_a = est.transform(q)
            xi_b = est.transform(q_mid)
            assert np.abs(xi_a - xi_b).max() < 1e-3
            checked += 1
    assert checked >= 100 - 3 * 4  # a few near-singular draws may be skipped
    assert perf_counter() - t0 < 60.0


# -- 7: harmonic parametrization at full resolution ----------------------------

def test_harmonic_disk_chart_at_96():
    chain, task = planar_chain(3), TaskMap("planar-x")
    mesh = extract_level_surface(chain, task, 0.0, grid_resolution=96,
                                 region="q1>=0")
    chart = harmonic_parametrization(mesh)
    u = chart.values
    tris = np.asarray(mesh.triangles)
    loop = boundary_loop(mesh)

    r = np.linalg.norm(u[loop], axis=1)
    assert np.abs(r - 1.0).max() < 1e-12

    # independent cotangent assembly for the interior residual
    V = len(mesh.vertices)
    corners = mesh.vertices[tris]
    span = corners - corners[:, [0]]
    span[:, 1:][span[:, 1:] > np.pi] -= 2 * np.pi  # unwrap across the seam
    span[:, 1:][span[:, 1:] < -np.pi] += 2 * np.pi
    residual = np.zeros((V, 2))
    for f in range(tris.shape[0]):
        pts = span[f]
        for p in range(3):
            i, j, k = tris[f, (p + 1) % 3], tris[f, (p + 2) % 3], p
            a = pts[(k + 1) % 3] - pts[k]
            b = pts[(k + 2) % 3] - pts[k]
            cot = 0.5 * (a @ b) / np.linalg.norm(np.cross(a, b))
            residual[i] += cot * (u[i] - u[j])
            residual[j] += cot * (u[j] - u[i])
    interior = np.ones(V, bool)
    interior[loop] = False
    assert np.abs(residual[interior]).max() < 1e-8

    e1 = u[tris[:, 1]] - u[tris[:, 0]]
    e2 = u[tris[:, 2]] - u[tris[:, 0]]
    signed = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    assert int((signed <= 0).sum()) == 0


# -- 9: hidden-spring scenario -------------------------------------------------

def test_hidden_spring_loads_without_motion():
    chain = planar_chain(3, gravity=(0.0, -9.81, 0.0))
    task = TaskMap("planar-xy")
    q0 = np.array([0.3, 0.7, -0.4])
    gains = ProjectionGains.uniform(2, 3)
    x_d = forward_kinematics(chain, q0, task)
    w = np.array([4.0, -2.5])
    delta = np.linalg.solve(gains.K_q, task_jacobian(chain, q0, task).T @ w)
    t_jump = 2.0

    def controller(t, q, qd):
        q_d = q0 if t < t_jump else q0 + delta
        tau = projection_baseline_torque(chain, task, q, qd, x_d, q_d, gains)
        _, U_q = spring_potentials(forward_kinematics(chain, q, task) - x_d,
                                   q - q_d, gains.K_x, gains.K_q)
        return tau, {"U_q": U_q}

    log = simulate(chain, controller, q0, np.zeros(3), 3.2, 1e-3)
    k_jump = int(t_jump / log.dt)
    U_before = log.extras["U_q"][k_jump - 10]
    U_after = log.extras["U_q"][k_jump + 10]
    assert U_after - U_before > 1e-3  # the jump tensions the secondary spring
    window = slice(k_jump, k_jump + int(1.0 / log.dt) + 1)
    speeds = np.linalg.norm(log.qd[window], axis=1)
    assert speeds.max() < 1e-3


# -- 10: simulator fidelity ------------------------------------------------------

def test_energy_conservation_and_order():
    chain = planar_chain(2, gravity=(0.0, -9.81, 0.0))

    def passive(t, q, qd):
        return np.zeros(2)

    q0 = np.array([0.4, -0.2])
    log = simulate(chain, passive, q0, np.zeros(2), 10.0, 1e-3)
    E0 = total_energy(chain, q0, np.zeros(2))
    drift = np.abs(log.extras["energy"] - E0).max() / abs(E0)
    assert drift < 1e-3

    def driven(t, q, qd):
        return gravity_vector(chain, q) + np.array([np.sin(2 * t), np.cos(3 * t)])

    refs = {}
    for dt in (4e-3, 2e-3, 1e-3, 5e-4):
        refs[dt] = simulate(chain, driven, q0, np.zeros(2), 2.0, dt).q[-1]
    e1 = np.linalg.norm(refs[4e-3] - refs[5e-4])
    e2 = np.linalg.norm(refs[2e-3] - refs[5e-4])
    order = np.log2(e1 / e2)
    assert 3.8 < order < 4.2


# -- 11: forward-pass latency report ---------------------------------------------

def test_bench_report_documents_wide_network(tmp_path, capsys):
    cfg = tmp_path / "bench.yaml"
    cfg.write_text("schema: bench/1\nn: 7\nr: 4\nwidths: [1024, 512]\n"
                   "passes: 10000\nseed: 0\n")
    out = ARTIFACTS / "bench"
    assert cli.main(["bench", "--config", str(cfg), "--out", str(out),
                     "--threads", "1"]) == 0
    printed = capsys.readouterr().out
    assert "±" in printed
    meta, cols = fileio.read_csv(out / "bench.csv")
    assert cols["passes"][0] >= 10_000
    assert cols["width1"][0] == 1024 and cols["width2"][0] == 512
    assert cols["mean_us"][0] > 0 and cols["std_us"][0] >= 0
    assert "median_us" in cols  # informational; desk target is < 1 ms
    assert meta["tool"] == fileio.TOOL_VERSION


# -- 5: involutive vs non-involutive ordering -------------------------------------

BUDGET_3DOF = dict(widths=(256, 64), epochs=90, steps_per_epoch=50,
                   samples_per_epoch=4096, batch_size=512,
                   learning_rate=2e-3, lr_decay=0.98, seed=0)


def test_involutive_case_trains_tighter_than_obstructed():
    chain = planar_chain(3)
    p_inv, _ = _cached_fit("inv3", TrainingConfig(**BUDGET_3DOF), chain,
                           "planar-x")
    p_non, _ = _cached_fit("noninv3", TrainingConfig(**BUDGET_3DOF), chain,
                           "planar-xy")
    stats = {}
    for tag, params, task_name in (("involutive", p_inv, "planar-x"),
                                   ("obstructed", p_non, "planar-xy")):
        report = evaluate_angles(params, chain, TaskMap(task_name),
                                 Metric.euclidean(), 20_000, seed=77)
        stats[tag] = report["task_xi"]
        hist, edges = np.histogram(stats[tag].angles, bins=np.arange(91.0))
        ARTIFACTS.mkdir(parents=True, exist_ok=True)
        fileio.write_csv(ARTIFACTS / f"hist-{tag}.csv",
                         {"bin_left_deg": edges[:-1], "count": hist},
                         {"seed": 77, "config": "acceptance"})
    assert stats["involutive"].std < stats["obstructed"].std - 1.0


# -- 8: cyclicity against the projection baseline ----------------------------------

REACH_Q0 = np.array([0.0, 0.52, 0.0, -1.05, 0.0, 0.79, 0.0])

BUDGET_7DOF = dict(widths=(128, 64), epochs=60, steps_per_epoch=50,
                   samples_per_epoch=4096, batch_size=512,
                   learning_rate=2e-3, lr_decay=0.98, seed=0,
                   region="hypercube", center=tuple(REACH_Q0),
                   edge=float(np.pi / 2))


def test_closed_loop_returns_with_learned_coordinates_only():
    chain, task = anthro7(), TaskMap("spatial-xyz")
    params, _ = _cached_fit("reach7", TrainingConfig(**BUDGET_7DOF), chain,
                            "spatial-xyz")
    maps = stacked_maps(chain, task, params)
    phi0 = maps[0](REACH_Q0)
    rho, amp_xi, omega = 0.12, 0.25, 2.0 * np.pi

    def stacked_ref(t):
        phi = phi0.copy()
        phid = np.zeros(7)
        phidd = np.zeros(7)
        phi[0] += rho * (np.cos(omega * t) - 1.0)
        phi[1] += rho * np.sin(omega * t)
        phi[3] += amp_xi * np.sin(omega * t)
        phid[0] = -rho * omega * np.sin(omega * t)
        phid[1] = rho * omega * np.cos(omega * t)
        phid[3] = amp_xi * omega * np.cos(omega * t)
        phidd[0] = -rho * omega**2 * np.cos(omega * t)
        phidd[1] = -rho * omega**2 * np.sin(omega * t)
        phidd[3] = -amp_xi * omega**2 * np.sin(omega * t)
        return phi, phid, phidd

    log = kinematic_velocity_control(maps, chain, stacked_ref, REACH_Q0,
                                     1.0, 1e-3)
    ret = np.linalg.norm(log.q[-1] - log.q[0])
    assert ret < 1e-2

    x0 = forward_kinematics(chain, REACH_Q0, task)

    def task_ref(t):
        x = x0.copy()
        xd = np.zeros(3)
        xdd = np.zeros(3)
        x[0] += rho * (np.cos(omega * t) - 1.0)
        x[1] += rho * np.sin(omega * t)
        xd[0] = -rho * omega * np.sin(omega * t)
        xd[1] = rho * omega * np.cos(omega * t)
        xdd[0] = -rho * omega**2 * np.cos(omega * t)
        xdd[1] = -rho * omega**2 * np.sin(omega * t)
        return x, xd, xdd

    task_maps = (lambda q: forward_kinematics(chain, q, task),
                 lambda q: task_jacobian(chain, q, task))
    base = kinematic_velocity_control(task_maps, chain, task_ref, REACH_Q0,
                                      1.0, 1e-3)
    x_err = np.linalg.norm(
        forward_kinematics(chain, base.q[-1], task) - x0)
    assert x_err < 1e-6  # the baseline does close the task loop
    assert np.linalg.norm(base.q[-1] - base.q[0]) > 0.1


# -- 4: learned quality on the 2-DoF torus -------------------------------------------

BUDGET_2DOF = dict(widths=(512, 128), epochs=200, steps_per_epoch=50,
                   samples_per_epoch=4096, batch_size=512,
                   learning_rate=2e-3, lr_decay=0.985, seed=0)


@pytest.mark.parametrize("metric_name", ["euclidean", "inertia"])
def test_learned_coordinates_residual_sigma(metric_name):
    chain = planar_chain(2)
    cfg = TrainingConfig(metric=metric_name, **BUDGET_2DOF)
    params, elapsed = _cached_fit(f"torus2-{metric_name}", cfg, chain,
                                  "planar-x")
    assert elapsed < 900.0
    metric_obj = (Metric.euclidean() if metric_name == "euclidean"
                  else Metric.inertia(chain))
    report = evaluate_angles(params, chain, TaskMap("planar-x"), metric_obj,
                             100_000, exclusion_centers=SINGULAR_2R,
                             exclusion_radius=0.15, seed=99)
    sigma = report["task_xi"].std
    assert sigma < 5.0
