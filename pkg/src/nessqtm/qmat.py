"""Dense quantum-state primitives.

Operators are plain complex ``numpy`` arrays.  Two-level systems use the
ordered basis ``{|1>, |0>}`` (excited first), so that ``sigma_z = diag(1, -1)``
and ``sigma_plus = |1><0|``; ``sigma_plus @ sigma_minus`` is then the excited
state projector.  Truncated oscillators use the Fock basis ``|0>, ..., |D-1>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Hashable, Iterable, Sequence

import numpy as np
from scipy.special import expit

SIGMA_PLUS = np.array([[0, 1], [0, 0]], dtype=complex)
SIGMA_MINUS = SIGMA_PLUS.T.copy()
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
SIGMA_X = SIGMA_PLUS + SIGMA_MINUS
IDENTITY2 = np.eye(2, dtype=complex)

HERMITIAN_TOL = 1e-12
TAIL_MASS_TOL = 1e-8
MIN_OSCILLATOR_NMAX = 8


@dataclass(frozen=True)
class HilbertLayout:
    """Ordered tensor-product structure with optional site labels.

    ``dims[k]`` is the local dimension of factor ``k``; ``labels[k]`` is any
    hashable tag for it (``("h", 1)`` for the first hot TLS, ``"E_h"`` for the
    hot ancilla, ...).
    """

    dims: tuple[int, ...]
    labels: tuple[Hashable, ...] = ()

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"invalid subsystem dimensions {self.dims!r}")
        object.__setattr__(self, "dims", dims)
        labels = tuple(self.labels) if self.labels else tuple(range(len(dims)))
        if len(labels) != len(dims):
            raise ValueError("need exactly one label per subsystem")
        if len(set(labels)) != len(labels):
            raise ValueError("subsystem labels must be unique")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def for_ensembles(cls, n_sites: int, ancillas: Sequence[int] = ()) -> "HilbertLayout":
        """Layout ``S_h1..S_hN, S_c1..S_cN`` followed by ``E_h, E_c`` if given."""
        labels: list[Hashable] = [(i, n) for i in ("h", "c") for n in range(1, n_sites + 1)]
        dims = [2] * (2 * n_sites)
        if ancillas:
            if len(ancillas) != 2:
                raise ValueError("expected one ancilla dimension per bath")
            labels += ["E_h", "E_c"]
            dims += list(ancillas)
        return cls(tuple(dims), tuple(labels))

    @property
    def dim(self) -> int:
        return math.prod(self.dims)

    def position(self, site) -> int:
        """Index of ``site`` given either as a label or as an integer position."""
        if site in self.labels:
            return self.labels.index(site)
        if isinstance(site, (int, np.integer)) and not isinstance(site, bool):
            if 0 <= site < len(self.dims):
                return int(site)
        raise IndexError(f"site {site!r} not in layout {self.labels!r}")


def kron(*ops: np.ndarray) -> np.ndarray:
    """Kronecker product of one or more operators, left to right."""
    if not ops:
        raise ValueError("kron needs at least one operand")
    return reduce(np.kron, ops)


def embed_site_op(op: np.ndarray, site, layout: HilbertLayout) -> np.ndarray:
    """``I ⊗ ... ⊗ op ⊗ ... ⊗ I`` with ``op`` on ``site``."""
    k = layout.position(site)
    op = np.asarray(op)
    if op.shape != (layout.dims[k], layout.dims[k]):
        raise ValueError(
            f"operator of shape {op.shape} does not fit site {site!r} of dimension {layout.dims[k]}"
        )
    left = math.prod(layout.dims[:k])
    right = math.prod(layout.dims[k + 1:])
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def partial_trace(rho: np.ndarray, layout: HilbertLayout | Sequence[int], keep: Iterable) -> np.ndarray:
    """Reduced state on the ``keep`` subsystems (kept in layout order)."""
    if not isinstance(layout, HilbertLayout):
        layout = HilbertLayout(tuple(layout))
    keep_pos = sorted({layout.position(s) for s in keep})
    if not keep_pos:
        raise ValueError("keep must name at least one subsystem")
    rho = np.asarray(rho)
    if rho.shape != (layout.dim, layout.dim):
        raise ValueError(f"state of shape {rho.shape} does not match layout dimension {layout.dim}")
    n = len(layout.dims)
    t = rho.reshape(layout.dims + layout.dims)
    traced = [k for k in range(n) if k not in keep_pos]
    # trace out from the highest index so earlier axis numbers stay valid
    for k in sorted(traced, reverse=True):
        m = t.ndim // 2
        t = np.trace(t, axis1=k, axis2=k + m)
    d = math.prod(layout.dims[k] for k in keep_pos)
    return t.reshape(d, d)


def is_hermitian(a: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return bool(np.max(np.abs(a - a.conj().T), initial=0.0) <= tol)


def matrix_exp(h: np.ndarray, t: float) -> np.ndarray:
    """Unitary ``exp(-i t h)`` for Hermitian ``h`` via eigendecomposition."""
    h = np.asarray(h, dtype=complex)
    scale = max(1.0, float(np.max(np.abs(h), initial=0.0)))
    if not is_hermitian(h, HERMITIAN_TOL * scale):
        raise ValueError("matrix_exp requires a Hermitian generator")
    evals, evecs = np.linalg.eigh(h)
    return (evecs * np.exp(-1j * t * evals)) @ evecs.conj().T


def fock_ops(cutoff: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncated lowering and raising operators on ``cutoff`` Fock levels."""
    if cutoff < 2:
        raise ValueError(f"oscillator cutoff must be at least 2, got {cutoff}")
    a = np.diag(np.sqrt(np.arange(1, cutoff)), k=1).astype(complex)
    return a, a.conj().T


def oscillator_cutoff(beta_omega: float, tail: float = TAIL_MASS_TOL,
                      min_nmax: int = MIN_OSCILLATOR_NMAX) -> int:
    """Number of Fock levels kept for a thermal oscillator.

    Picks the smallest ``n_max`` with geometric tail ``exp(-(n_max+1) beta_omega) < tail``
    (never below ``min_nmax``) and returns ``n_max + 1``.
    """
    if not beta_omega > 0:
        raise ValueError(f"beta*omega must be positive, got {beta_omega}")
    n_max = max(math.floor(-math.log(tail) / beta_omega), min_nmax)
    # floor(x) is the smallest n with (n+1) > x unless x is an integer
    while math.exp(-(n_max + 1) * beta_omega) >= tail:
        n_max += 1
    return n_max + 1


def thermal_populations(beta_omega: float, cutoff: int | None = None) -> np.ndarray:
    """Renormalized Gibbs weights ``p(n) ∝ exp(-n beta_omega)`` on ``cutoff`` levels."""
    if not beta_omega > 0:
        raise ValueError(f"beta*omega must be positive, got {beta_omega}")
    if cutoff is None:
        cutoff = oscillator_cutoff(beta_omega)
    p = np.exp(-beta_omega * np.arange(cutoff))
    return p / p.sum()


def thermal_oscillator_state(beta_omega: float, cutoff: int | None = None) -> np.ndarray:
    return np.diag(thermal_populations(beta_omega, cutoff)).astype(complex)


def bose_occupation(beta_omega: float) -> float:
    return 1.0 / math.expm1(beta_omega)


def expectation(op: np.ndarray, rho: np.ndarray) -> complex:
    """``Tr(op @ rho)``."""
    op = np.asarray(op)
    rho = np.asarray(rho)
    if op.shape != rho.shape:
        raise ValueError(f"operator {op.shape} and state {rho.shape} dimensions differ")
    # Tr(AB) = sum_ij A_ij B_ji without forming the product
    return complex(np.einsum("ij,ji->", op, rho))


def trace_norm(a: np.ndarray) -> float:
    """Trace norm of a Hermitian matrix."""
    return float(np.sum(np.abs(np.linalg.eigvalsh((a + a.conj().T) / 2))))


def validate_density_matrix(rho: np.ndarray, trace_tol: float = 1e-12,
                            herm_tol: float = 1e-12, psd_tol: float = 1e-10) -> np.ndarray:
    """Return ``rho`` as an array or raise ``ValueError`` naming the violated invariant."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    tr = np.trace(rho)
    if abs(tr - 1) > trace_tol:
        raise ValueError(f"trace {tr} differs from 1")
    if not is_hermitian(rho, herm_tol):
        raise ValueError("density matrix is not Hermitian")
    lam = np.linalg.eigvalsh((rho + rho.conj().T) / 2)[0]
    if lam < -psd_tol:
        raise ValueError(f"density matrix has negative eigenvalue {lam:.3e}")
    return rho


def product_gibbs_tls(beta_omegas: Sequence[float]) -> np.ndarray:
    """Product of single-TLS Gibbs states, one per ``beta*omega`` value."""
    factors = []
    for bw in beta_omegas:
        p_exc = float(expit(-bw))
        factors.append(np.diag([p_exc, 1.0 - p_exc]).astype(complex))
    return kron(*factors)
