import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nessqtm import qmat
from nessqtm.qmat import SIGMA_MINUS, SIGMA_PLUS, SIGMA_X, SIGMA_Z, HilbertLayout
from conftest import random_density, random_hermitian


def test_kron_examples():
    assert np.array_equal(qmat.kron(SIGMA_Z, SIGMA_Z), np.diag([1, -1, -1, 1]))
    assert np.array_equal(qmat.kron(np.eye(2), np.eye(2)), np.eye(4))
    layout = HilbertLayout((2, 2))
    assert np.array_equal(qmat.kron(SIGMA_X, np.eye(2)), qmat.embed_site_op(SIGMA_X, 0, layout))


def test_kron_needs_operand():
    with pytest.raises(ValueError):
        qmat.kron()


def test_embed_examples():
    assert np.array_equal(qmat.embed_site_op(SIGMA_Z, 0, HilbertLayout((2, 2))), np.diag([1, 1, -1, -1]))
    layout = HilbertLayout((2, 2, 2, 2))
    a = qmat.embed_site_op(SIGMA_PLUS, 1, layout)
    b = qmat.embed_site_op(SIGMA_MINUS, 3, layout)
    assert np.abs(a @ b - b @ a).max() == 0
    for k in range(4):
        p = qmat.embed_site_op(SIGMA_PLUS, k, layout)
        assert not np.any(p @ p)
        z = qmat.embed_site_op(SIGMA_Z, k, layout)
        assert np.array_equal(z, z.conj().T)


def test_embed_errors():
    layout = HilbertLayout((2, 3))
    with pytest.raises(IndexError):
        qmat.embed_site_op(SIGMA_Z, 2, layout)
    with pytest.raises(ValueError):
        qmat.embed_site_op(SIGMA_Z, 1, layout)


def test_layout_labels():
    lay = HilbertLayout.for_ensembles(2, ancillas=(5, 4))
    assert lay.labels[:4] == (("h", 1), ("h", 2), ("c", 1), ("c", 2))
    assert lay.position("E_c") == 5
    assert lay.dim == 16 * 20
    with pytest.raises(ValueError):
        HilbertLayout((2, 2), ("a", "a"))


def test_partial_trace_bell():
    psi = np.zeros(4, dtype=complex)
    psi[0] = psi[3] = 1 / math.sqrt(2)
    rho = np.outer(psi, psi.conj())
    assert np.allclose(qmat.partial_trace(rho, (2, 2), [0]), np.eye(2) / 2, atol=1e-15)


def test_partial_trace_product(rng):
    a, b = random_density(2, rng), random_density(3, rng)
    assert np.allclose(qmat.partial_trace(np.kron(a, b), (2, 3), [0]), a, atol=1e-14)
    assert np.allclose(qmat.partial_trace(np.kron(a, b), (2, 3), [1]), b, atol=1e-14)


def test_partial_trace_random_trace_and_composition(rng):
    dims = (2, 3, 2)
    for _ in range(100):
        rho = random_density(12, rng)
        red = qmat.partial_trace(rho, dims, [1])
        assert abs(np.trace(red) - 1) < 1e-12
    rho = random_density(12, rng)
    two_step = qmat.partial_trace(qmat.partial_trace(rho, dims, [0, 1]), (2, 3), [0])
    assert np.allclose(two_step, qmat.partial_trace(rho, dims, [0]), atol=1e-12)


def test_partial_trace_errors(rng):
    rho = random_density(4, rng)
    with pytest.raises(ValueError):
        qmat.partial_trace(rho, (2, 2), [])
    with pytest.raises(IndexError):
        qmat.partial_trace(rho, (2, 2), [5])


def test_matrix_exp_examples(rng):
    assert np.allclose(qmat.matrix_exp(SIGMA_X, math.pi / 2), -1j * SIGMA_X, atol=1e-14)
    assert np.allclose(qmat.matrix_exp(np.zeros((3, 3)), 2.0), np.eye(3))
    h = random_hermitian(8, rng)
    u = qmat.matrix_exp(h, 0.7)
    assert np.allclose(np.abs(np.linalg.eigvals(u)), 1, atol=1e-10)
    assert np.abs(u.conj().T @ u - np.eye(8)).max() < 1e-10
    with pytest.raises(ValueError):
        qmat.matrix_exp(SIGMA_PLUS, 1.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31))
def test_matrix_exp_group_law(t1, t2, seed):
    h = random_hermitian(5, np.random.default_rng(seed))
    lhs = qmat.matrix_exp(h, t1) @ qmat.matrix_exp(h, t2)
    assert np.abs(lhs - qmat.matrix_exp(h, t1 + t2)).max() < 1e-10


def test_fock_ops():
    a, ad = qmat.fock_ops(2)
    assert np.array_equal(a, [[0, 1], [0, 0]])
    a, ad = qmat.fock_ops(6)
    assert np.allclose(ad @ a, np.diag(np.arange(6)))
    comm = a @ ad - ad @ a
    expected = np.eye(6, dtype=complex)
    expected[-1, -1] = comm[-1, -1]
    assert np.allclose(comm, expected)
    assert comm[-1, -1] == pytest.approx(-5)
    with pytest.raises(ValueError):
        qmat.fock_ops(1)


def test_oscillator_cutoff_policy():
    # level count is n_max + 1; for βω = 0.5 the smallest n_max is 36
    assert qmat.oscillator_cutoff(0.5) == 37
    assert math.exp(-37 * 0.5) < 1e-8 <= math.exp(-36 * 0.5)
    assert qmat.oscillator_cutoff(50.0) == 9
    with pytest.raises(ValueError):
        qmat.oscillator_cutoff(0.0)


@given(st.floats(0.02, 30))
def test_cutoff_tail_mass(bw):
    d = qmat.oscillator_cutoff(bw)
    # omitted weight of the untruncated geometric distribution
    assert math.exp(-d * bw) < 1e-8
    assert d - 1 >= qmat.MIN_OSCILLATOR_NMAX


@pytest.mark.parametrize("bw,mean", [(1.0, 0.58198), (0.5, 1.54149)])
def test_thermal_oscillator_mean(bw, mean):
    rho = qmat.thermal_oscillator_state(bw)
    a, ad = qmat.fock_ops(rho.shape[0])
    assert qmat.expectation(ad @ a, rho).real == pytest.approx(mean, abs=1e-5)
    assert qmat.expectation(ad @ a, rho).real == pytest.approx(qmat.bose_occupation(bw), rel=1e-6)
    assert qmat.expectation(a, rho) == 0
    with pytest.raises(ValueError):
        qmat.thermal_oscillator_state(-1.0)


def test_expectation_examples(rng):
    rho = random_density(4, rng)
    assert qmat.expectation(np.eye(4), rho) == pytest.approx(1)
    ground = np.diag([0, 1]).astype(complex)
    assert qmat.expectation(SIGMA_Z, ground).real == -1
    thermal = qmat.product_gibbs_tls([1.0])
    assert qmat.expectation(SIGMA_PLUS @ SIGMA_MINUS, thermal).real == pytest.approx(0.26894, abs=1e-5)
    with pytest.raises(ValueError):
        qmat.expectation(np.eye(2), rho)


def test_product_gibbs_extreme():
    rho = qmat.product_gibbs_tls([800.0, -800.0])
    assert np.all(np.isfinite(rho))
    assert np.trace(rho).real == pytest.approx(1)


def test_validate_density_matrix():
    qmat.validate_density_matrix(np.eye(2) / 2)
    with pytest.raises(ValueError, match="trace"):
        qmat.validate_density_matrix(np.eye(2))
    with pytest.raises(ValueError, match="Hermitian"):
        qmat.validate_density_matrix(np.array([[0.5, 0.1], [0.3, 0.5]]))
    with pytest.raises(ValueError, match="negative"):
        qmat.validate_density_matrix(np.diag([1.5, -0.5]))


def test_trace_norm():
    assert qmat.trace_norm(np.diag([0.5, -0.25])) == pytest.approx(0.75)
