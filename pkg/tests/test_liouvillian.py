import math
import warnings

import numpy as np
import pytest

from nessqtm import liouvillian as lv
from nessqtm import model, qmat, thermo
from nessqtm.model import EnsembleSpec, InteractionSpec, Mode, Scenario
from conftest import random_density, random_hermitian

MODES = ["common", "cascaded", "independent"]


def scenario(mode="common", variant="type2", g_h=(0.5, 0.55), g_c=(0.5, 0.55), t_h=2.0, t_c=1.0,
             omega_h=1.5, n=2):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return Scenario(EnsembleSpec(n, omega_h, g_h, t_h), EnsembleSpec(n, 1.0, g_c, t_c),
                        InteractionSpec(variant, tuple((0.1,) * n for _ in range(n)), (0.1,) * n), Mode(mode))


def swap_sites(pairs, n_sites=2):
    """Permutation superoperator exchanging the listed layout positions."""
    perm = list(range(2 * n_sites))
    for a, b in pairs:
        perm[a], perm[b] = perm[b], perm[a]
    d = 4 ** n_sites
    p = np.eye(d).reshape([2] * (2 * n_sites) + [d]).transpose(perm + [2 * n_sites]).reshape(d, d)
    return p, np.kron(p.conj(), p)


def trace_row(d):
    return lv.vec(np.eye(d)).conj()


def test_local_single_bath_gibbs():
    s = scenario(n=1, g_h=(0.5,), g_c=(0.0,), omega_h=1.0, variant="none")
    L = lv.dissipator_local(s)
    ss = lv.steady_state(L)
    n_h = qmat.bose_occupation(0.5)
    excited = qmat.expectation(model.sigma("plus", "h", 1, 1) @ model.sigma("minus", "h", 1, 1), ss.rho).real
    assert excited == pytest.approx(n_h / (2 * n_h + 1), abs=1e-12)
    # the uncoupled cold TLS leaves the kernel degenerate
    assert ss.degenerate


def test_local_traceless_on_identity():
    s = scenario()
    out = lv.apply(lv.dissipator_local(s), np.eye(16) / 16)
    assert abs(np.trace(out)) < 1e-14


def test_zero_coupling_zero_dissipator():
    s = scenario(g_h=(0.0, 0.0), g_c=(0.0, 0.0))
    assert not np.any(lv.dissipator_local(s))
    assert not np.any(lv.dissipator_nonlocal_common(s))


def test_nonlocal_n1_empty():
    assert not np.any(lv.dissipator_nonlocal_common(scenario(n=1, g_h=(0.5,), g_c=(0.5,))))
    assert not np.any(lv.dissipator_nonlocal_cascaded(scenario("cascaded", n=1, g_h=(0.5,), g_c=(0.5,))))


def test_wrong_mode_raises():
    with pytest.raises(ValueError):
        lv.dissipator_nonlocal_common(scenario("cascaded"))
    with pytest.raises(ValueError):
        lv.dissipator_nonlocal_cascaded(scenario("common"))


def test_common_swap_symmetry():
    s = scenario(g_h=(0.5, 0.5), g_c=(0.3, 0.7))
    _, P = swap_sites([(0, 1)])
    D = lv.dissipator_local(s) + lv.dissipator_nonlocal_common(s)
    # only the hot ensemble has uniform couplings, so restrict to its part
    D_h = lv.dissipator(s, bath="h")
    assert np.abs(D_h - P @ D_h @ P.conj().T).max() < 1e-10
    _, P_c = swap_sites([(2, 3)])
    assert np.abs(D - P_c @ D @ P_c.conj().T).max() > 1e-3


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("variant", ["type1", "type2"])
def test_generator_trace_and_hermiticity(mode, variant, rng):
    s = scenario(mode, variant)
    L = lv.assemble(s)
    assert L.shape == (256, 256)
    assert np.abs(trace_row(16) @ L).max() < 1e-10
    for _ in range(5):
        x = random_hermitian(16, rng)
        y = lv.apply(L, x)
        assert np.abs(y - y.conj().T).max() < 1e-12


def test_cascaded_one_way(rng):
    s = scenario("cascaded", variant="none")
    L_with = lv.assemble(s)
    L_without = L_with - lv.dissipator_nonlocal_cascaded(s)
    layout = s.layout
    for _ in range(5):
        rho = random_density(16, rng)
        d_with = lv.apply(L_with, rho)
        d_without = lv.apply(L_without, rho)
        for site in (("h", 1), ("c", 1)):
            assert np.abs(qmat.partial_trace(d_with, layout, [site])
                          - qmat.partial_trace(d_without, layout, [site])).max() < 1e-12
        # the later site does feel the earlier one
        diff = (qmat.partial_trace(d_with, layout, [("h", 2)])
                - qmat.partial_trace(d_without, layout, [("h", 2)]))
        assert np.abs(diff).max() > 1e-6


def test_independent_vs_common_difference():
    com = scenario("common")
    ind = com.replace(mode=Mode.INDEPENDENT)
    assert np.array_equal(lv.assemble(com) - lv.assemble(ind), lv.dissipator_nonlocal_common(com))


@pytest.mark.parametrize("mode", MODES)
def test_independent_reads_only_diagonal_rates(mode):
    s = scenario("independent")
    rates = model.rate_table(s)
    assert np.array_equal(lv.assemble(s, rates), lv.assemble(s, rates.diagonal_only()))


@pytest.mark.parametrize("mode,g", [("independent", (0.5, 0.5)), ("common", (0.5, 0.55)),
                                    ("cascaded", (0.5, 0.55)), ("independent", (0.5, 0.55))])
@pytest.mark.parametrize("variant", ["type1", "type2"])
def test_equilibrium_is_gibbs(mode, g, variant):
    s = scenario(mode, variant, g_h=g, g_c=g, t_h=1.0, t_c=1.0, omega_h=1.0)
    ss = lv.steady_state(lv.assemble(s))
    assert not ss.degenerate
    # local dissipators fix the Gibbs state of the bare site energies; at resonance the
    # exchange commutes with them, so that state is stationary for the full generator
    assert np.abs(ss.rho - lv.local_gibbs_seed(s)).max() < 1e-9
    cur = thermo.closed_form_currents(ss.rho, s)
    assert np.abs(cur.components()).max() < 1e-9


def test_single_tls_steady_state():
    sm = qmat.SIGMA_MINUS
    sp = qmat.SIGMA_PLUS
    n = qmat.bose_occupation(1.0)
    L = (n + 1) * (lv.sandwich(sm, sp) - 0.5 * (lv.spre(sp @ sm) + lv.spost(sp @ sm))) \
        + n * (lv.sandwich(sp, sm) - 0.5 * (lv.spre(sm @ sp) + lv.spost(sm @ sp)))
    ss = lv.steady_state(L)
    assert np.allclose(ss.rho, np.diag([1 / (1 + math.e), math.e / (1 + math.e)]), atol=1e-12)
    assert ss.residual < 1e-12


def test_product_state_without_exchange():
    s = scenario("independent", variant="none")
    ss = lv.steady_state(lv.assemble(s))
    assert np.abs(ss.rho - lv.local_gibbs_seed(s)).max() < 1e-12


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("omega_h", [0.3, 1.5, 3.2])
def test_steady_state_residual(mode, omega_h):
    L = lv.assemble(scenario(mode, omega_h=omega_h))
    ss = lv.steady_state(L)
    assert ss.residual < 1e-10 * np.linalg.norm(L, 2)
    qmat.validate_density_matrix(ss.rho, psd_tol=1e-10)
    assert ss.spectral_gap > 1e-8 * ss.sigma_max


def test_block_svd_matches_full_svd():
    L = lv.assemble(scenario("cascaded", "type1"))
    ss = lv.steady_state(L)
    sv = np.linalg.svd(L, compute_uv=False)
    assert ss.spectral_gap == pytest.approx(sv[-2], rel=1e-9)
    assert ss.sigma_max == pytest.approx(sv[0], rel=1e-12)


def test_degenerate_flag_for_dark_states():
    # identical couplings to a shared bath leave a dark subspace
    s = scenario("common", "none", g_h=(0.5, 0.5), g_c=(0.5, 0.5))
    assert lv.steady_state(lv.assemble(s)).degenerate


def test_common_coherence_vs_independent():
    com = scenario("common")
    rho = lv.steady_state(lv.assemble(com)).rho
    op = model.sigma("plus", "h", 1, 2) @ model.sigma("minus", "h", 2, 2)
    assert abs(qmat.expectation(op, rho)) > 1e-4
    ind = scenario("independent", "none")
    rho = lv.steady_state(lv.assemble(ind)).rho
    assert qmat.expectation(op, rho) == 0


@pytest.mark.parametrize("mode", ["common", "independent"])
def test_swap_covariance(mode):
    s = scenario(mode, "type1", g_h=(0.5, 0.55), g_c=(0.4, 0.6))
    swapped = s.replace(hot=EnsembleSpec(2, s.hot.omega, s.hot.g[::-1], s.hot.temperature),
                        cold=EnsembleSpec(2, 1.0, s.cold.g[::-1], s.cold.temperature))
    p, _ = swap_sites([(0, 1), (2, 3)])
    rho = lv.steady_state(lv.assemble(s)).rho
    rho_sw = lv.steady_state(lv.assemble(swapped)).rho
    assert np.abs(p @ rho @ p.T - rho_sw).max() < 1e-10


def test_evolve(rng):
    s = scenario("cascaded")
    L = lv.assemble(s)
    rho0 = random_density(16, rng)
    assert np.array_equal(lv.evolve(L, rho0, 0.0), rho0)
    ss = lv.steady_state(L)
    gap = lv.relaxation_gap(L)
    assert gap > 0
    late = lv.evolve(L, rho0, 50 / gap)
    assert np.abs(late - ss.rho).max() < 1e-8
    for t in np.linspace(0.1, 20, 10):
        rho_t = lv.evolve(L, rho0, t)
        assert abs(np.trace(rho_t) - 1) < 1e-11
        qmat.validate_density_matrix(rho_t, trace_tol=1e-11, herm_tol=1e-9, psd_tol=1e-9)
    with pytest.raises(ValueError):
        lv.evolve(L, rho0, -1.0)
