import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from qprecon.geometry import FactoredPoint, TangentPair
from qprecon.problems import (
    EntrySampling,
    FullObservation,
    GaussianSensing,
    ProblemInstance,
    ambient_euclid_grad,
    apply_A,
    euclid_partials,
    excess_objective,
    line_coefficients,
    objective,
    recovery_error,
    residual_norm,
    test_rmse,
)

from conftest import random_point, random_start, random_tangent, rel, small_instance

KINDS = ["full", "bernoulli", "gaussian_sensing"]


def test_objective_minimum_at_truth():
    for kind in KINDS:
        inst = small_instance(kind, seed=1)
        Ms = inst.mstar_dense()
        AM = apply_A(inst.op, Ms)
        assert objective(inst, inst.mstar) == pytest.approx(-0.5 * np.sum(AM * Ms), rel=1e-12)
        assert excess_objective(inst, inst.mstar) == 0.0


def test_objective_full_observation_zero_truth():
    rng = np.random.default_rng(2)
    inst = ProblemInstance(FullObservation((5, 4)), rank=2)
    x = random_point(rng, 5, 4, 2)
    assert objective(inst, x) == pytest.approx(0.5 * np.sum(x.product() ** 2), rel=1e-14)


def _completion_case(c):
    rows = [i for i, _ in c["omega"]]
    cols = [j for _, j in c["omega"]]
    op = EntrySampling(rows, cols, (4, 4))
    inst = ProblemInstance(op, mstar=FactoredPoint(np.array(c["Gs"]), np.array(c["Hs"])))
    return inst, FactoredPoint(np.array(c["G"]), np.array(c["H"]))


def test_objective_completion_matches_dense_oracle(frozen):
    inst, x = _completion_case(frozen["completion"])
    assert objective(inst, x) == pytest.approx(frozen["completion"]["objective"], rel=1e-12)


def test_ambient_gradient_matches_entry_loop_oracle(frozen):
    inst, x = _completion_case(frozen["completion"])
    assert rel(ambient_euclid_grad(inst, x), frozen["completion"]["ambient_grad"]) <= 1e-13


def test_ambient_gradient_trivial_cases():
    inst = small_instance("full", seed=3)
    assert not ambient_euclid_grad(inst, inst.mstar).any()
    rng = np.random.default_rng(3)
    X = rng.normal(size=inst.shape)
    assert rel(ambient_euclid_grad(inst, X), X - inst.mstar_dense()) <= 1e-14


def test_partials_vanish_at_truth_and_match_full_form():
    for kind in KINDS:
        inst = small_instance(kind, seed=4)
        p = euclid_partials(inst, inst.mstar)
        assert np.abs(p.xi1).max() <= 1e-9 and np.abs(p.xi2).max() <= 1e-9
    rng = np.random.default_rng(4)
    inst = ProblemInstance(FullObservation((5, 4)), rank=2)
    x = random_point(rng, 5, 4, 2)
    X = x.product()
    p = euclid_partials(inst, x)
    assert rel(p.xi1, X @ x.H) <= 1e-14 and rel(p.xi2, X.T @ x.G) <= 1e-14


@pytest.mark.parametrize("kind", KINDS)
def test_partials_match_central_differences(kind):
    rng = np.random.default_rng(5)
    for seed in range(3):
        inst = small_instance(kind, seed=seed)
        x = random_start(inst, seed=seed)
        p = euclid_partials(inst, x)
        for _ in range(10):
            xi = random_tangent(rng, *inst.dims)
            h = 1e-5 * np.linalg.norm(x.G)
            fd = (objective(inst, x.step(xi, h)) - objective(inst, x.step(xi, -h))) / (2 * h)
            exact = np.sum(p.xi1 * xi.xi1) + np.sum(p.xi2 * xi.xi2)
            assert abs(fd - exact) <= 1e-6 * max(1.0, abs(exact))


def test_apply_sensing_matches_summation_oracle(frozen):
    c = frozen["sensing_apply"]
    op = GaussianSensing(np.array(c["phi"]), (4, 4))
    assert rel(apply_A(op, np.array(c["Z"])), c["expected"]) <= 1e-12


def test_apply_trivial_cases():
    rng = np.random.default_rng(6)
    Z = rng.normal(size=(4, 3))
    assert np.array_equal(apply_A(FullObservation((4, 3)), Z), Z)
    op = EntrySampling([0, 1], [0, 2], (4, 3))
    W = Z.copy()
    W[0, 0] = W[1, 2] = 0.0
    assert not apply_A(op, W).any()


@pytest.mark.parametrize("kind", KINDS)
@given(seed=st.integers(0, 10**6))
def test_apply_symmetric_psd(kind, seed):
    inst = small_instance(kind, seed=7)
    rng = np.random.default_rng(seed)
    Z, W = rng.normal(size=inst.shape), rng.normal(size=inst.shape)
    a = np.sum(apply_A(inst.op, Z) * W)
    b = np.sum(Z * apply_A(inst.op, W))
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))
    assert np.sum(apply_A(inst.op, Z) * Z) >= 0


def test_apply_shape_mismatch():
    with pytest.raises(ValueError):
        apply_A(FullObservation((3, 3)), np.zeros((3, 2)))


def test_sparse_path_equals_dense_path():
    rng = np.random.default_rng(8)
    for seed in range(5):
        inst = small_instance("bernoulli", seed=seed, m=50, n=40, k=3, p=0.3)
        x = random_start(inst, seed=seed)
        X = x.product()
        D = np.zeros(inst.shape)
        op = inst.op
        D[op.rows, op.cols] = (X - inst.mstar_dense())[op.rows, op.cols]
        f_dense = 0.5 / op.p * np.sum(D * D) - 0.5 / op.p * np.sum(inst.mstar_dense()[op.rows, op.cols] ** 2)
        assert objective(inst, x) == pytest.approx(f_dense, rel=1e-12)
        p = euclid_partials(inst, x)
        S = D / op.p
        assert rel(p.xi1, S @ x.H) <= 1e-12 and rel(p.xi2, S.T @ x.G) <= 1e-12
        assert sp.issparse(op.adjoint(inst.residual(x)))
    del rng


def test_entry_sampling_validation():
    with pytest.raises(ValueError):
        EntrySampling([0, 0], [1, 1], (2, 2))
    with pytest.raises(ValueError):
        EntrySampling([2], [0], (2, 2))
    with pytest.raises(ValueError):
        EntrySampling([], [], (2, 2))
    op = EntrySampling([1, 0], [0, 1], (2, 2))
    assert op.rows.tolist() == [0, 1] and op.p == 0.5 and op.weight == 2.0


def test_sensing_validation_and_vec_convention():
    with pytest.raises(ValueError):
        GaussianSensing(np.ones((3, 5)), (2, 3))
    # row i of phi selects entry i of the column-major vectorization
    op = GaussianSensing(np.eye(6), (2, 3))
    Z = np.arange(6.0).reshape(2, 3)
    assert op.measure_dense(Z).tolist() == Z.ravel(order="F").tolist()


def test_recovery_error_and_residual():
    inst = small_instance("bernoulli", seed=9)
    x = random_start(inst, seed=9)
    assert recovery_error(inst, x) == pytest.approx(np.linalg.norm(x.product() - inst.mstar_dense()), rel=1e-12)
    op = inst.op
    r = (x.product() - inst.mstar_dense())[op.rows, op.cols]
    assert residual_norm(inst, x) == pytest.approx(np.linalg.norm(r), rel=1e-12)
    assert test_rmse(inst, inst.mstar) == pytest.approx(0.0, abs=1e-12)
    rows, cols, vals = inst.test
    pred = x.product()[rows, cols]
    assert test_rmse(inst, x) == pytest.approx(np.sqrt(np.mean((pred - vals) ** 2)), rel=1e-12)


def test_line_coefficients_match_polyfit_oracle(frozen):
    c = frozen["line"]
    m, n = len(c["G"]), len(c["H"])
    op = EntrySampling(c["rows"], c["cols"], (m, n))
    inst = ProblemInstance(op, mstar=FactoredPoint(np.array(c["Gs"]), np.array(c["Hs"])))
    x = FactoredPoint(np.array(c["G"]), np.array(c["H"]))
    d = TangentPair(np.array(c["E1"]), np.array(c["E2"]))
    assert rel(line_coefficients(inst, x, d), c["coefficients"]) <= 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_line_coefficients_reproduce_objective(kind):
    rng = np.random.default_rng(10)
    inst = small_instance(kind, seed=10)
    x = random_start(inst, seed=10)
    d = random_tangent(rng, *inst.dims)
    c = line_coefficients(inst, x, d)
    for t in (-0.7, 0.0, 0.3, 1.9):
        poly = sum(c[i] * t**i for i in range(5))
        assert poly == pytest.approx(excess_objective(inst, x.step(d, t)), rel=1e-10)
