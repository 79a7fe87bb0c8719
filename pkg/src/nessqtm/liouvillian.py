"""Lindblad generators for the three dissipation modes and their steady states.

Superoperators are dense ``d² x d²`` arrays acting on column-stacked density
matrices, ``vec(A X B) = (Bᵀ ⊗ A) vec(X)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
from scipy.sparse.csgraph import connected_components

from . import qmat
from .model import BATHS, Mode, RateTable, Scenario, build_system_hamiltonian, rate_table, sigma

DEGENERACY_THRESHOLD = 1e-8
CACHE_MAX_SITES = 2
NEGATIVE_CLIP = 1e-10


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.size)))
    return np.asarray(v).reshape(d, d, order="F")


def spre(a: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(a.shape[0]), a)


def spost(b: np.ndarray) -> np.ndarray:
    return np.kron(b.T, np.eye(b.shape[0]))


def sandwich(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator of ``X -> a X b``."""
    return np.kron(b.T, a)


def apply(superop: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return unvec(superop @ vec(rho))


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """``X -> -i[h, X]``."""
    return -1j * (spre(h) - spost(h))


def _lindblad_pair(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``X -> a X b - ½{c, X}``."""
    return sandwich(a, b) - 0.5 * (spre(c) + spost(c))


def _build_term(n: int, bath: str, k: int, l: int, kind: str) -> np.ndarray:
    """Unit-rate superoperator of one dissipator term.

    ``pair-``/``pair+``: ``a_k X a_l† - ½{a_l† a_k, X}`` with ``a = σ⁻``/``σ⁺``
    (``k == l`` is the local jump); ``cas-``/``cas+``: the ordered cross term
    ``a_k [X, a_l†] + [a_l, X] a_k†``.
    """
    sign = kind[-1]
    a_k = sigma("minus" if sign == "-" else "plus", bath, k, n)
    a_l = sigma("minus" if sign == "-" else "plus", bath, l, n)
    b_k, b_l = a_k.conj().T, a_l.conj().T
    if kind.startswith("pair"):
        return _lindblad_pair(a_k, b_l, b_l @ a_k)
    return sandwich(a_k, b_l) - spre(a_k @ b_l) + sandwich(a_l, b_k) - spost(a_l @ b_k)


@lru_cache(maxsize=None)
def _cached_term(n: int, bath: str, k: int, l: int, kind: str) -> np.ndarray:
    out = _build_term(n, bath, k, l, kind)
    out.setflags(write=False)
    return out


def _term(n: int, bath: str, k: int, l: int, kind: str) -> np.ndarray:
    # d^4 entries per term: cache only while that stays small
    if n <= CACHE_MAX_SITES:
        return _cached_term(n, bath, k, l, kind)
    return _build_term(n, bath, k, l, kind)


def _accumulate(s: Scenario, rates: RateTable, pairs, kind: str) -> np.ndarray:
    d = s.dim
    out = np.zeros((d * d, d * d), dtype=complex)
    for i in BATHS:
        for k, l in pairs:
            gm = rates.gamma_minus[i][k - 1, l - 1]
            gp = rates.gamma_plus[i][k - 1, l - 1]
            if gm != 0:
                out += gm * _term(s.n_sites, i, k, l, kind + "-")
            if gp != 0:
                out += gp * _term(s.n_sites, i, k, l, kind + "+")
    return out


def dissipator_local(s: Scenario, rates: RateTable | None = None) -> np.ndarray:
    """Independent jumps of every TLS, weighted by the diagonal rates."""
    rates = rates or rate_table(s)
    n = s.n_sites
    return _accumulate(s, rates, [(k, k) for k in range(1, n + 1)], "pair")


def dissipator_nonlocal_common(s: Scenario, rates: RateTable | None = None) -> np.ndarray:
    """Cross terms ``n' != n`` generated by a bath shared simultaneously by an ensemble."""
    if s.mode is not Mode.COMMON:
        raise ValueError(f"common-bath cross terms requested for mode {s.mode.value!r}")
    rates = rates or rate_table(s)
    n = s.n_sites
    pairs = [(k, l) for k in range(1, n + 1) for l in range(1, n + 1) if k != l]
    return _accumulate(s, rates, pairs, "pair")


def dissipator_nonlocal_cascaded(s: Scenario, rates: RateTable | None = None) -> np.ndarray:
    """Ordered cross terms ``n' > n``: earlier sites drive later ones, not the reverse."""
    if s.mode is not Mode.CASCADED:
        raise ValueError(f"cascaded cross terms requested for mode {s.mode.value!r}")
    rates = rates or rate_table(s)
    n = s.n_sites
    pairs = [(k, l) for k in range(1, n + 1) for l in range(k + 1, n + 1)]
    return _accumulate(s, rates, pairs, "cas")


def dissipator_nonlocal(s: Scenario, rates: RateTable | None = None) -> np.ndarray:
    """Mode-appropriate cross terms; zero for independent dissipation."""
    if s.mode is Mode.COMMON:
        return dissipator_nonlocal_common(s, rates)
    if s.mode is Mode.CASCADED:
        return dissipator_nonlocal_cascaded(s, rates)
    d = s.dim
    return np.zeros((d * d, d * d), dtype=complex)


def dissipator(s: Scenario, rates: RateTable | None = None, bath: str | None = None) -> np.ndarray:
    """Full dissipator, optionally restricted to one bath."""
    rates = rates or rate_table(s)
    if bath is not None:
        other = "c" if bath == "h" else "h"
        zero = lambda t: {**t, other: np.zeros_like(t[other])}  # noqa: E731
        rates = RateTable(zero(rates.gamma_minus), zero(rates.gamma_plus), rates.occupation)
    return dissipator_local(s, rates) + dissipator_nonlocal(s, rates)


def assemble(s: Scenario, rates: RateTable | None = None) -> np.ndarray:
    """``L = -i[H_S, .] + D_loc + D_nonloc(mode)``."""
    rates = rates or rate_table(s)
    return commutator_superop(build_system_hamiltonian(s)) + dissipator(s, rates)


@dataclass(frozen=True)
class SteadyState:
    rho: np.ndarray
    residual: float
    spectral_gap: float
    sigma_max: float

    @property
    def degenerate(self) -> bool:
        return self.spectral_gap < DEGENERACY_THRESHOLD * self.sigma_max


def _physical(rho: np.ndarray) -> np.ndarray:
    rho = (rho + rho.conj().T) / 2
    rho = rho / np.trace(rho).real
    evals, evecs = np.linalg.eigh(rho)
    if np.any((evals < 0) & (evals >= -NEGATIVE_CLIP)):
        evals = np.where((evals < 0) & (evals >= -NEGATIVE_CLIP), 0.0, evals)
        rho = (evecs * evals) @ evecs.conj().T
        rho = rho / np.trace(rho).real
    return rho


def _sectors(L: np.ndarray) -> list[np.ndarray]:
    """Index sets of the connected components of the sparsity graph of ``L``."""
    pattern = sps.csr_matrix(np.abs(L) > 0)
    count, labels = connected_components(pattern, directed=True, connection="weak")
    return [np.flatnonzero(labels == k) for k in range(count)]


def steady_state(L: np.ndarray) -> SteadyState:
    """Kernel of ``L`` from its smallest right singular vector, trace-normalized.

    ``L`` is split into the connected blocks of its sparsity pattern first; the
    union of the blocks' singular values is that of ``L``, so the reported gap
    is exact.
    """
    d = int(round(np.sqrt(L.shape[0])))
    svals_all = []
    best = None
    for idx in _sectors(L):
        _, sv, vh = np.linalg.svd(L[np.ix_(idx, idx)])
        svals_all.append(sv)
        if best is None or sv[-1] < best[0]:
            v = np.zeros(L.shape[0], dtype=complex)
            v[idx] = vh[-1].conj()
            best = (sv[-1], v)
    svals = np.sort(np.concatenate(svals_all))
    rho = unvec(best[1])
    tr = np.trace(rho)
    if abs(tr) < 1e-8:
        # null vector nearly traceless: pin the trace with a bordered system
        trace_row = vec(np.eye(d)).conj()[None, :]
        a = np.vstack([L, trace_row])
        b = np.zeros(a.shape[0], dtype=complex)
        b[-1] = 1.0
        rho = unvec(np.linalg.lstsq(a, b, rcond=None)[0])
    else:
        rho = rho / tr
    rho = _physical(rho)
    residual = float(np.linalg.norm(L @ vec(rho)))
    gap = float(svals[1]) if svals.size > 1 else float("inf")
    return SteadyState(rho, residual, gap, float(svals[-1]))


def evolve(L: np.ndarray, rho0: np.ndarray, t: float) -> np.ndarray:
    """``exp(L t)`` applied to ``rho0``."""
    if t < 0:
        raise ValueError(f"evolution time must be non-negative, got {t}")
    if t == 0:
        return np.array(rho0, dtype=complex, copy=True)
    return apply(sla.expm(L * t), rho0)


def relaxation_gap(L: np.ndarray) -> float:
    """Smallest nonzero decay rate ``-Re λ`` of the generator."""
    rates = np.sort(-np.linalg.eigvals(L).real)
    nonzero = rates[rates > 1e-10 * max(1.0, rates[-1])]
    return float(nonzero[0]) if nonzero.size else 0.0


def local_gibbs_seed(s: Scenario) -> np.ndarray:
    """Product of single-TLS Gibbs states at the respective bath temperatures."""
    bw = [s.hot.beta_omega] * s.n_sites + [s.cold.beta_omega] * s.n_sites
    return qmat.product_gibbs_tls(bw)
