import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemoflow.energy import (
    CSV_COLUMNS,
    build_ledger,
    check_cell_solve_bound,
    check_oxygen_solve_bound,
    check_step_inequality,
    discrete_gronwall,
    export_ledger,
    kinetic_identity_residual,
    time_translate_decay,
    uniform_bound_scan,
)
from chemoflow.model import ModelParams
from chemoflow.timestepping import TimeGrid, initial_state, run
from conftest import BENCH_PARAMS, bench_initial

PARAMS = ModelParams()


def bump_initial(ops):
    x, y = ops.mesh.vertices.T
    n0 = 0.8 * np.exp(-((x**2 + (y - 0.3) ** 2)) / 0.125)
    return initial_state(ops, np.ones_like(n0), n0, np.zeros(ops.vspace.n_velocity))


def steady_initial(ops):
    nv = ops.mesh.n_vertices
    return initial_state(ops, np.ones(nv), np.zeros(nv), np.zeros(ops.vspace.n_velocity))


@pytest.fixture(scope="module")
def bump_ledger(coarse_ops):
    traj = run(coarse_ops, PARAMS, TimeGrid(T=0.25, N=8), bump_initial(coarse_ops))
    return build_ledger(traj, coarse_ops, PARAMS), traj


def test_steady_ledger_all_increments_zero(coarse_ops):
    traj = run(coarse_ops, PARAMS, TimeGrid(T=0.2, N=4), steady_initial(coarse_ops))
    led = build_ledger(traj, coarse_ops, PARAMS)
    for f in ("c", "ctau", "n", "u"):
        assert np.max(led.inc_sq[f]) < 1e-24
        assert np.allclose(led.sq[f], led.sq[f][0], rtol=1e-12, atol=1e-20)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_parallelogram_identity_random_vectors(seed):
    # 2 a.(a - b) = |a|^2 - |b|^2 + |a - b|^2 for the Euclidean inner product
    rng = np.random.default_rng(seed)
    a = rng.standard_normal(40)
    b = rng.standard_normal(40)
    lhs = 2 * a @ (a - b)
    rhs = a @ a - b @ b + (a - b) @ (a - b)
    assert abs(lhs - rhs) <= 1e-13 * max(abs(lhs), abs(rhs), 1.0)


def test_ledger_identity_rows(bump_ledger):
    led, _ = bump_ledger
    for f in ("c", "ctau", "n", "u"):
        assert led.identity_residual(f) < 1e-12


def test_ledger_mass_rows(bump_ledger):
    led, _ = bump_ledger
    assert np.max(np.abs(led.mass_n - led.mass_n[0])) <= 1e-8 * abs(led.mass_n[0])
    # combined oxygen mass drops by exactly the consumed amount per step
    for m in range(1, led.N + 1):
        residual = led.mass_c_combined[m] - led.mass_c_combined[m - 1] + led.k * led.consumption[m]
        assert abs(residual) <= 1e-8 * abs(led.mass_c_combined[0])
    if led.min_n.min() >= 0:
        assert np.all(np.diff(led.mass_c_combined) < 0)


def test_step_inequality_on_benchmark_run(bump_ledger):
    led, _ = bump_ledger
    delta = 0.5 * PARAMS.beta / PARAMS.g1
    for m in range(1, led.N + 1):
        rep = check_step_inequality(led, m, PARAMS, delta)
        assert rep.passed, f"step {m}: slack {rep.slack}"
        ox = check_oxygen_solve_bound(led, m, PARAMS)
        assert ox.passed
        cell = check_cell_solve_bound(led, m, PARAMS)
        assert cell.passed
        assert kinetic_identity_residual(led, m, PARAMS) < 1e-10


def test_step_inequality_trivial_steady(coarse_ops):
    traj = run(coarse_ops, PARAMS, TimeGrid(T=0.2, N=4), steady_initial(coarse_ops))
    led = build_ledger(traj, coarse_ops, PARAMS)
    rep = check_step_inequality(led, 1, PARAMS, delta=0.5)
    assert abs(rep.lhs) < 1e-12 * rep.rhs  # zero up to solve round-off
    assert rep.rhs > 0 and rep.passed


def test_step_inequality_rejects_bad_delta(bump_ledger):
    led, _ = bump_ledger
    with pytest.raises(ValueError):
        check_step_inequality(led, 1, PARAMS, delta=PARAMS.beta / PARAMS.g1)
    with pytest.raises(ValueError):
        check_step_inequality(led, 0, PARAMS, delta=0.5)


def test_gronwall_closed_form():
    # k = 1/2 and A constant 1: bounds are 2 e^{i-1}
    a = np.zeros(6)
    res = discrete_gronwall(a, np.ones(6), 0.5)
    expected = 2.0 * np.exp(np.arange(6))
    assert np.max(np.abs(res.bounds - expected) / expected) < 1e-15
    assert res.hypothesis_ok and res.bound_ok


def test_gronwall_zero_sequences():
    res = discrete_gronwall(np.zeros(4), np.zeros(4), 0.3)
    assert np.all(res.bounds == 0.0)
    assert res.hypothesis_ok and res.bound_ok


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30),
    st.floats(0.01, 0.9),
)
def test_gronwall_forward_recurrence_oracle(increments, k):
    # A built nondecreasing; a solved forward with a_i = A_i + k sum_{j<i} a_j
    A = np.cumsum(np.asarray(increments)) + 0.1
    a = np.zeros_like(A)
    total = 0.0
    for i in range(len(A)):
        a[i] = A[i] + k * total
        total += a[i]
    res = discrete_gronwall(a, A, k)
    assert res.hypothesis_ok
    assert res.bound_ok
    assert np.all(res.bounds - a >= -1e-12 * np.maximum(res.bounds, 1.0))


def test_gronwall_input_validation():
    with pytest.raises(ValueError):
        discrete_gronwall([1.0], [1.0], 1.5)
    with pytest.raises(ValueError):
        discrete_gronwall([1.0, 1.0], [2.0, 1.0], 0.5)  # decreasing A
    with pytest.raises(ValueError):
        discrete_gronwall([-1.0], [1.0], 0.5)


def make_ladder(ops, Ns, T=1.0):
    state0 = bench_initial(ops)
    ledgers = []
    for N in Ns:
        traj = run(ops, BENCH_PARAMS, TimeGrid(T=T, N=N), state0)
        ledgers.append(build_ledger(traj, ops, BENCH_PARAMS))
    return ledgers


def test_uniform_scan_needs_three(coarse_ops):
    ledgers = make_ladder(coarse_ops, [4, 8])
    with pytest.raises(ValueError):
        uniform_bound_scan(ledgers, PARAMS)


def test_uniform_scan_rejects_mismatched_data(coarse_ops):
    ledgers = make_ladder(coarse_ops, [2, 4, 8])
    other = run(coarse_ops, BENCH_PARAMS, TimeGrid(T=1.0, N=16), steady_initial(coarse_ops))
    ledgers[-1] = build_ledger(other, coarse_ops, BENCH_PARAMS)
    with pytest.raises(ValueError):
        uniform_bound_scan(ledgers, PARAMS)


def test_uniform_scan_zero_data_trivial(coarse_ops):
    nv = coarse_ops.mesh.n_vertices
    zero = initial_state(coarse_ops, np.zeros(nv), np.zeros(nv), np.zeros(coarse_ops.vspace.n_velocity))
    ledgers = []
    for N in (2, 4, 8):
        traj = run(coarse_ops, PARAMS, TimeGrid(T=0.25, N=N), zero)
        ledgers.append(build_ledger(traj, coarse_ops, PARAMS))
    report = uniform_bound_scan(ledgers, PARAMS)
    assert report.uniform
    assert np.all(report.spreads == 1.0)


def test_uniform_scan_on_short_ladder(coarse_ops):
    report = uniform_bound_scan(make_ladder(coarse_ops, [16, 32, 64]), BENCH_PARAMS)
    assert report.uniform, "\n".join(report.lines())


def test_translate_decay_constant_traj(coarse_ops):
    traj = run(coarse_ops, PARAMS, TimeGrid(T=0.2, N=4), steady_initial(coarse_ops))
    rep = time_translate_decay(traj, coarse_ops, [0.1, 0.05])
    for f in ("c", "n", "u"):
        assert np.max(rep.values[f]) < 1e-20
        assert rep.monotone[f]


def test_translate_decay_small_shift_smaller(coarse_ops, bump_ledger):
    _, traj = bump_ledger
    T, k = traj.grid.T, traj.grid.k
    rep = time_translate_decay(traj, coarse_ops, [T - k, k])
    assert rep.values["c"][1] < rep.values["c"][0]


def test_translate_decay_shift_validation(coarse_ops, bump_ledger):
    _, traj = bump_ledger
    with pytest.raises(ValueError):
        time_translate_decay(traj, coarse_ops, [traj.grid.T])


def test_translate_decay_exactness_single_interval(coarse_ops):
    # two-step trajectory: hand-computable piecewise-quadratic integral
    traj = run(coarse_ops, PARAMS, TimeGrid(T=0.1, N=2), bump_initial(coarse_ops))
    a = traj.grid.k
    rep = time_translate_decay(traj, coarse_ops, [a])
    # g(s+k) - g(s) is piecewise linear with values d1 at s=0, d2 at s=k in
    # terms of the increments; integrate |.|^2 exactly with Simpson per piece
    d1 = traj.states[1].c - traj.states[0].c
    d2 = traj.states[2].c - traj.states[1].c
    M = coarse_ops.M_vol

    def nsq(v):
        return v @ (M @ v)

    # on [0, k]: D(s) = d1 + (s/k)(d2 - d1)
    f0, f1 = nsq(d1), nsq(d2)
    fm = nsq(0.5 * (d1 + d2))
    expected = a / 6.0 * (f0 + 4 * fm + f1)
    assert np.isclose(rep.values["c"][0], expected, rtol=1e-12)


def test_ledger_csv_export(tmp_path, bump_ledger):
    led, _ = bump_ledger
    path = tmp_path / "ledger.csv"
    export_ledger(led, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == led.N + 2
