"""Acceptance suite: one test per release criterion, summarized at the end.

The quadrotor run (criterion 8) dominates the runtime at around ten
minutes on one CPU core; everything else finishes in seconds to a couple
of minutes.
"""

import itertools
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from contracert.boundprop import (
    Region,
    hull_contraction_matrix,
    hull_metric,
    hull_over_region,
    scalar_contraction_bound_expanded,
    scalar_contraction_bound_factored,
)
from contracert.certify import (
    asymmetric_contraction_matrix,
    certify_region,
    corner_max_log_norm,
    falsify_by_sampling,
    metzler_majorant_check,
    symmetric_contraction_matrix,
)
from contracert.cli import main
from contracert.intervals import Interval, IntervalMatrix
from contracert.linalg import mu2
from contracert.nets import MetricNet, PolicyNet
from contracert.problem import ContractionProblem, warm_start_problem
from contracert.systems import BENCHMARK_NAMES, GRAVITY, benchmark_system
from contracert.tracking import flat_reference, simulate, tracking_control
from contracert.train import (
    CurriculumConfig,
    OptimizerConfig,
    loss,
    loss_gradient,
    parameter_vector,
    replace_parameters,
    train_curriculum,
)

from conftest import record_acceptance

ROOT = Path(__file__).resolve().parent.parent


def jittered_problem(name, seed=0, hidden=(16, 16), rate=0.05, scale=0.02):
    """Warm-started problem with residual nets nudged off their zero init."""
    problem = warm_start_problem(
        benchmark_system(name),
        rate=rate,
        metric_lower=0.01,
        metric_upper=100.0,
        hidden=hidden,
        seed=seed,
    )
    rng = np.random.default_rng(seed + 100)
    jitter = lambda net: type(net)(
        tuple(
            (w + scale * rng.normal(size=w.shape), b + scale * rng.normal(size=b.shape))
            for w, b in net.layers
        )
    )
    policy = PolicyNet(
        gain=problem.policy.gain,
        x_eq=problem.policy.x_eq,
        u_eq=problem.policy.u_eq,
        residual=jitter(problem.policy.residual),
    )
    theta = MetricNet(
        warm_start=problem.theta.warm_start,
        residual=jitter(problem.theta.residual),
        input_projection=problem.theta.input_projection,
    )
    return problem.with_nets(theta, policy)


def region_for(system, half=1.0):
    if system.name == "quadrotor10":
        lo = np.array(
            [-10.0] * 3
            + [-5.0] * 3
            + [2 * GRAVITY / 3, -np.pi / 8, -np.pi / 8, -np.pi / 2]
        )
        hi = np.array(
            [10.0] * 3 + [5.0] * 3 + [4 * GRAVITY / 3, np.pi / 8, np.pi / 8, np.pi / 2]
        )
        return Region(lo, hi, (1,) * 10)
    return Region(-half * np.ones(system.n), half * np.ones(system.n), (1,) * system.n)


def test_criterion_1_scalar_bound_reproduction():
    theta = Interval(0.5, 1.0)
    theta_dot = Interval(-2.0, -1.5)
    jac = Interval(-1.0, 1.0)
    rate = 0.5
    # warm-up so the timed section measures the arithmetic, not imports
    scalar_contraction_bound_factored(theta, theta_dot, jac, rate)
    start = time.perf_counter()
    factored = scalar_contraction_bound_factored(theta, theta_dot, jac, rate)
    expanded = scalar_contraction_bound_expanded(theta, theta_dot, jac, rate)
    elapsed = time.perf_counter() - start
    doubled = 2.0 * factored
    assert abs(doubled.lo - (-5.0)) <= 1e-12 and abs(doubled.hi - 0.0) <= 1e-12
    assert abs(expanded.lo - (-5.75)) <= 1e-12 and abs(expanded.hi - 1.5) <= 1e-12
    assert elapsed < 1e-3
    record_acceptance(
        1, True, f"factored bound [-5, 0], expanded [-5.75, 1.5] in {elapsed * 1e6:.0f} us"
    )


def test_criterion_2_log_norm_equivalence():
    worst = 0.0
    for name in BENCHMARK_NAMES:
        problem = jittered_problem(name)
        region = region_for(problem.system)
        rng = np.random.default_rng(42)
        for x in region.sample(rng, 1000):
            g = asymmetric_contraction_matrix(problem, x)
            s = symmetric_contraction_matrix(problem, x)
            gap = abs(np.linalg.eigvalsh(0.5 * (s + s.T))[-1] / 2.0 - mu2(g))
            worst = max(worst, gap)
    assert worst <= 1e-8
    record_acceptance(2, True, f"max |lambda_max(S)/2 - mu2(G)| = {worst:.2e} over 3000 states")


def test_criterion_3_corner_check_exactness():
    rng = np.random.default_rng(7)
    worst = 0.0
    start = time.perf_counter()
    for trial in range(200):
        n = 2 + trial % 2
        center = rng.normal(size=(n, n))
        radius = rng.uniform(0.0, 1.0, size=(n, n))
        mat = IntervalMatrix(center - radius, center + radius)
        result = corner_max_log_norm(mat)
        lo, hi = mat.lo_numpy(), mat.hi_numpy()
        exhaustive = max(
            mu2(np.where(np.array(picks).reshape(n, n) == 0, lo, hi))
            for picks in itertools.product((0, 1), repeat=n * n)
        )
        worst = max(worst, abs(result.max_value - exhaustive))
        corner = result.argmax_corner(mat)
        assert mat.contains(corner, atol=1e-12)
        assert abs(mu2(corner) - result.max_value) <= 1e-10
    elapsed = time.perf_counter() - start
    assert worst <= 1e-10
    assert elapsed < 60.0
    record_acceptance(
        3, True, f"200 matrices: max gap to exhaustive corners {worst:.2e} in {elapsed:.1f} s"
    )


def test_criterion_4_metzler_counterexample():
    n, t = 4, 1.0
    mat = IntervalMatrix.point(-t * np.ones((n, n)))
    metzler = metzler_majorant_check(mat)
    rohn = corner_max_log_norm(mat)
    assert metzler.spectral_abscissa == pytest.approx(t * (n - 2), abs=1e-10)
    assert not metzler.certified
    assert rohn.max_value == pytest.approx(0.0, abs=1e-10)
    record_acceptance(
        4,
        True,
         f"majorant abscissa {metzler.spectral_abscissa:.3f} (inconclusive) vs corner max {rohn.max_value:.1e}",
    )


def test_criterion_5_hull_soundness_and_refinement():
    rng = np.random.default_rng(11)
    checked = 0
    for name in BENCHMARK_NAMES:
        problem = jittered_problem(name)
        region = region_for(problem.system)
        widths = region.hi - region.lo
        for _ in range(100):
            center = region.sample(rng, 1)[0]
            radius = rng.uniform(0.005, 0.05) * widths
            lo = np.maximum(center - radius, region.lo)
            hi = np.minimum(center + radius, region.hi)
            g_hull = hull_contraction_matrix(problem, (lo, hi))
            m_hull = hull_metric(problem, (lo, hi))
            for x in (lo + rng.uniform(size=(10, problem.system.n)) * (hi - lo)):
                assert g_hull.contains(asymmetric_contraction_matrix(problem, x), atol=1e-9)
                assert m_hull.contains(problem.theta.metric(x), atol=1e-9)
                checked += 1
        # refinement: halving every coordinate never widens any hull entry
        for _ in range(2):
            center = region.sample(rng, 1)[0]
            radius = 0.02 * widths
            lo = np.maximum(center - radius, region.lo)
            hi = np.minimum(center + radius, region.hi)
            parent_g = hull_contraction_matrix(problem, (lo, hi))
            parent_m = hull_metric(problem, (lo, hi))
            halves = Region(lo, hi, (2,) * problem.system.n)
            for sub_lo, sub_hi in halves.cells():
                assert parent_g.encloses(hull_contraction_matrix(problem, (sub_lo, sub_hi)))
                assert parent_m.encloses(hull_metric(problem, (sub_lo, sub_hi)))
    record_acceptance(5, True, f"{checked} sampled evaluations inside hulls; refinement monotone")


def test_criterion_6_gradient_fidelity():
    base = jittered_problem("planar_nonlinear", seed=4, hidden=(6, 6))
    problem = ContractionProblem(
        system=base.system,
        theta=base.theta,
        policy=base.policy,
        rate=1.5,
        metric_lower=0.6,
        metric_upper=1.0,
    )
    region = Region(np.array([-0.8, -0.8]), np.array([0.8, 0.8]), (2, 2))
    start = time.perf_counter()
    value, _, grad, _ = loss_gradient(problem, region)
    assert value > 0.0
    params = parameter_vector(problem)
    rng = np.random.default_rng(5)
    coords = rng.choice(params.size, size=50, replace=False)
    h = 1e-6
    checked = 0
    worst = 0.0
    for coord in coords:
        bumped = params.copy()
        bumped[coord] += h
        up, _ = loss(replace_parameters(problem, bumped), region)
        bumped[coord] -= 2 * h
        down, _ = loss(replace_parameters(problem, bumped), region)
        fd = (up - down) / (2 * h)
        bumped[coord] += h + h / 2
        up2, _ = loss(replace_parameters(problem, bumped), region)
        bumped[coord] -= h
        down2, _ = loss(replace_parameters(problem, bumped), region)
        fd2 = (up2 - down2) / h
        if abs(fd - fd2) > 1e-6 * max(1.0, abs(fd)):
            continue  # hinge/argmax tie within the probe step
        rel = abs(grad[coord] - fd) / max(abs(fd), abs(grad[coord]), 1e-8)
        worst = max(worst, rel)
        checked += 1
        assert rel <= 1e-4
    elapsed = time.perf_counter() - start
    assert checked >= 40
    assert elapsed < 60.0
    record_acceptance(
        6, True, f"{checked}/50 coordinates checked, worst rel err {worst:.2e} in {elapsed:.1f} s"
    )


def test_criterion_7_planar_end_to_end(tmp_path):
    start = time.perf_counter()
    rate = 0.5
    problem = warm_start_problem(
        benchmark_system("planar_nonlinear"),
        rate=rate,
        metric_lower=0.01,
        metric_upper=100.0,
        hidden=(32, 32),
        seed=0,
    )
    region = Region(np.array([-2.0, -2.0]), np.array([2.0, 2.0]), (3, 3))
    result = train_curriculum(
        problem,
        region,
        OptimizerConfig(step_size=2e-3),
        CurriculumConfig(max_steps=2000),
    )
    assert result.state.certified
    assert result.state.step <= 2000
    certificate = certify_region(result.problem, region)
    assert certificate.certified

    report = falsify_by_sampling(result.problem, region, samples=10000, seed=0)
    assert report.worst_value <= 0.0 and report.violations == 0

    # track the equilibrium reference from scattered starts inside the region
    from contracert.cli import _equilibrium_reference

    reference = _equilibrium_reference(result.problem.system, duration=8.0, dt=1e-3)
    rng = np.random.default_rng(1)
    starts = region.scaled(0.5).sample(rng, 5)
    sim = simulate(result.problem, reference, starts, dt=1e-3, rate_window=8.0)
    for fitted, flagged in zip(sim.fitted_rates, sim.diverged):
        assert not flagged
        assert fitted <= -0.9 * rate
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0
    record_acceptance(
        7,
        True,
        f"trained in {result.state.step} steps, certified, 10^4 samples clean, "
        f"worst fitted rate {max(sim.fitted_rates):.3f} <= {-0.9 * rate}, {elapsed:.0f} s",
    )


@pytest.mark.slow
def test_criterion_8_quadrotor_scaled_run(tmp_path):
    start = time.perf_counter()
    out = tmp_path / "quad"
    config = ROOT / "configs" / "quadrotor_scaled.toml"
    code = main(["train", "--config", str(config), "--out", str(out)])
    assert code == 0
    cert = json.loads((out / "certificate.json").read_text())
    assert cert["certified"] is True
    code = main(
        ["verify", "--ckpt", str(out / "checkpoint.json"), "--config", str(config)]
    )
    assert code == 0
    elapsed = time.perf_counter() - start
    assert elapsed < 3600.0
    record_acceptance(
        8, True, f"stage-30 region certified and verified in {elapsed / 60.0:.1f} min"
    )


def test_criterion_9_tracking_identities():
    problem = warm_start_problem(
        benchmark_system("quadrotor10"),
        rate=0.001,
        metric_lower=0.01,
        metric_upper=100.0,
        hidden=(16, 16),
        seed=0,
    )
    rng = np.random.default_rng(2)
    x_ref = problem.system.x_eq + 0.1 * rng.normal(size=10)
    u_ref = rng.normal(size=4)
    assert np.array_equal(tracking_control(problem.policy, x_ref.copy(), x_ref, u_ref), u_ref)

    hover = flat_reference("hover", duration=1.0, dt=1e-3)
    assert np.allclose(hover.states, np.tile(problem.system.x_eq, (hover.states.shape[0], 1)), atol=1e-12)

    errs = []
    for dt in (4e-3, 2e-3):
        ref = flat_reference("figure_eight", duration=2.0, dt=dt)
        sim = simulate(problem, ref, ref.states[0][None, :], dt=dt)
        errs.append(
            float(np.max(np.linalg.norm(sim.trajectories[0] - ref.states[: sim.trajectories[0].shape[0]], axis=1)))
        )
    ratio = errs[0] / errs[1]
    assert 8.0 <= ratio <= 32.0
    record_acceptance(
        9, True, f"exact reference recovery; dt-halving error ratio {ratio:.1f} (expect ~16)"
    )


def test_criterion_10_determinism_across_thread_counts(tmp_path):
    config = ROOT / "configs" / "scalar_linear.toml"
    artifacts = []
    for threads in ("1", "4"):
        out = tmp_path / f"threads_{threads}"
        env = dict(os.environ)
        env["OMP_NUM_THREADS"] = threads
        env["MKL_NUM_THREADS"] = threads
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "contracert.cli",
                "train",
                "--config",
                str(config),
                "--out",
                str(out),
            ],
            env=env,
            capture_output=True,
            text=True,
            cwd=ROOT,
        )
        assert proc.returncode == 0, proc.stderr
        artifacts.append(
            (
                (out / "checkpoint.json").read_bytes(),
                (out / "certificate.json").read_bytes(),
                (out / "train_log.csv").read_bytes(),
            )
        )
    assert artifacts[0] == artifacts[1]
    record_acceptance(
        10, True, "byte-identical checkpoint, certificate, and log at 1 vs 4 threads"
    )
