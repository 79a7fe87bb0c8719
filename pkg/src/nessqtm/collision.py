"""Repeated-interaction (collision) model of the two-bath machine.

Each collision couples the system to fresh thermal oscillator ancillas ``E_h``
and ``E_c`` through ``V_{i,n}/sqrt(tau)`` for a time ``tau``.  In common mode
all sites collide at once; in cascaded mode the same ancilla pair visits site
1, then 2, ...; in independent mode every site meets its own fresh ancilla.

All generators conserve the total excitation number of system plus ancillas,
so the unitaries are built block by block.  A channel is then stored as a
``d² x d²`` transfer matrix together with Heisenberg-picture operators whose
expectations in the pre-collision state give the heat and work of one
application.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sps

from . import qmat
from .liouvillian import local_gibbs_seed, unvec, vec
from .model import (BATHS, Mode, Scenario, build_ancilla_space, build_system_hamiltonian,
                    exchange_term, excitation_number, interaction_terms, sigma)

TIME_NORMALIZATIONS = ("per_sweep", "per_collision")


@dataclass(frozen=True)
class CollisionStep:
    """Outcome of one collision (or one full cascaded/independent sweep)."""

    rho: np.ndarray
    dq_h: float
    dq_c: float
    dw: float
    du_system: float

    @property
    def first_law_residual(self) -> float:
        return self.du_system - (self.dw + self.dq_h + self.dq_c)


@dataclass(frozen=True)
class CollisionChannel:
    scenario: Scenario
    tau: float
    cutoffs: tuple[int, int]
    transfer: np.ndarray
    heat_ops: dict
    work_op: np.ndarray
    h_system: np.ndarray
    sites_per_sweep: int

    def step(self, rho: np.ndarray) -> CollisionStep:
        rho = np.asarray(rho, dtype=complex)
        new = unvec(self.transfer @ vec(rho))
        new = (new + new.conj().T) / 2
        du = qmat.expectation(self.h_system, new - rho).real
        return CollisionStep(
            rho=new,
            dq_h=qmat.expectation(self.heat_ops["h"], rho).real,
            dq_c=qmat.expectation(self.heat_ops["c"], rho).real,
            dw=qmat.expectation(self.work_op, rho).real,
            du_system=du,
        )

    def elapsed(self, time_normalization: str = "per_sweep") -> float:
        """Physical time attributed to one application of the channel."""
        if time_normalization not in TIME_NORMALIZATIONS:
            raise ValueError(f"unknown time normalization {time_normalization!r}")
        if time_normalization == "per_collision":
            return self.tau * self.sites_per_sweep
        return self.tau


# ---------------------------------------------------------------- builders


def _site_hamiltonian(s: Scenario, n: int) -> np.ndarray:
    """Part of ``H_S`` frozen into sub-step ``n``: site ``n`` energies and the
    exchange terms whose later site is ``n``."""
    h = sum(s.ensemble(i).omega * sigma("plus", i, n, s.n_sites) @ sigma("minus", i, n, s.n_sites)
            for i in BATHS)
    for a, b, om in interaction_terms(s):
        if max(a, b) == n:
            h = h + om * exchange_term(a, b, s.n_sites)
    return np.asarray(h, dtype=complex)


def _lift(op: np.ndarray, d_env: int) -> sps.csr_matrix:
    return sps.kron(sps.csr_matrix(op), sps.identity(d_env, format="csr"), format="csr")


def _excitation_blocks(s: Scenario, cutoffs: tuple[int, int]):
    d_h, d_c = cutoffs
    exc_sys = np.rint(np.diag(excitation_number(s.n_sites)).real).astype(int)
    exc_env = np.add.outer(np.arange(d_h), np.arange(d_c)).ravel()
    exc = np.add.outer(exc_sys, exc_env).ravel()
    blocks = [np.flatnonzero(exc == k) for k in np.unique(exc)]
    block_of = np.empty(exc.size, dtype=int)
    pos_in = np.empty(exc.size, dtype=int)
    for b, idx in enumerate(blocks):
        block_of[idx] = b
        pos_in[idx] = np.arange(idx.size)
    return blocks, block_of, pos_in


def _shared_ancilla_channel(space, stages, tau: float):
    """Channel of consecutive unitary stages acting on one fresh ancilla pair.

    ``stages`` is a list of ``(hamiltonian, work_terms)``; each work term
    ``(op, c)`` contributes ``c * (<op>_after - <op>_before)`` for that stage.
    Returns ``(transfer, heat_ops, work_op)``.
    """
    s = space.scenario
    d = s.dim
    d_h, d_c = space.cutoffs
    d_env = d_h * d_c
    blocks, block_of, pos_in = _excitation_blocks(s, space.cutoffs)

    # cumulative per-block propagators C_n = U_n ... U_1
    cumulative = [[None] * len(blocks)]
    for h, _ in stages:
        prev = cumulative[-1]
        cur = []
        for b, idx in enumerate(blocks):
            u = qmat.matrix_exp(h[idx][:, idx].toarray(), tau)
            cur.append(u if prev[b] is None else u @ prev[b])
        cumulative.append(cur)
    m = len(stages)

    # operators read at stage boundary n: bath energies at 0 and m, work terms at n-1 and n
    reads = {n: [] for n in range(m + 1)}
    heat_ops = {i: np.zeros((d, d), dtype=complex) for i in BATHS}
    work_op = np.zeros((d, d), dtype=complex)
    for i in BATHS:
        # a decoupled ancilla keeps its energy exactly; skipping it avoids roundoff
        if not any(s.ensemble(i).g):
            continue
        reads[0].append((space.h_bath[i], 1.0, heat_ops[i]))
        reads[m].append((space.h_bath[i], -1.0, heat_ops[i]))
    for n, (_, terms) in enumerate(stages, start=1):
        for op, c in terms:
            if op.count_nonzero() == 0:
                continue
            reads[n - 1].append((op, -c, work_op))
            reads[n].append((op, c, work_op))

    weights = np.outer(space.populations["h"], space.populations["c"]).ravel()
    transfer4 = np.zeros((d * d, d * d), dtype=complex)
    dim = d * d_env
    for e, w in enumerate(weights):
        cols = np.arange(d) * d_env + e
        for n in range(m + 1):
            g = np.zeros((dim, d), dtype=complex)
            for sidx, c in enumerate(cols):
                b = block_of[c]
                if n == 0:
                    g[c, sidx] = 1.0
                else:
                    g[blocks[b], sidx] = cumulative[n][b][:, pos_in[c]]
            for op, coef, target in reads[n]:
                target += (coef * w) * (g.conj().T @ (op @ g))
            if n == m:
                # rows are (s_out, e_out); P[e_out, (s_out, s_in)]
                p = g.reshape(d, d_env, d).transpose(1, 0, 2).reshape(d_env, d * d)
                live = np.flatnonzero(np.any(p != 0, axis=1))
                p = p[live]
                transfer4 += w * (p.T @ p.conj())
    # [(a, s1), (b, s2)] -> column-stacked [(b, a), (s2, s1)]
    transfer = transfer4.reshape(d, d, d, d).transpose(2, 0, 3, 1).reshape(d * d, d * d)
    herm = lambda a: (a + a.conj().T) / 2  # noqa: E731
    return transfer, {i: herm(heat_ops[i]) for i in BATHS}, herm(work_op)


def _pull_back(op: np.ndarray, transfer: np.ndarray) -> np.ndarray:
    """Operator ``O'`` with ``Tr(O' X) = Tr(O T(X))``."""
    row = vec(op.T) @ transfer
    return unvec(row).T


@lru_cache(maxsize=32)
def collision_channel(s: Scenario, tau: float, cutoffs: tuple[int, int] | None = None) -> CollisionChannel:
    """Build (and cache) the channel of one collision or sweep for ``s``."""
    if not tau > 0:
        raise ValueError(f"collision time must be positive, got {tau}")
    space = build_ancilla_space(s, cutoffs)
    n = s.n_sites
    d_env = space.cutoffs[0] * space.cutoffs[1]
    h_env = space.h_bath["h"] + space.h_bath["c"]
    root = np.sqrt(tau)
    h_sys = build_system_hamiltonian(s)

    def v_of(sites):
        return sum(space.couplings[(i, k)] for i in BATHS for k in sites)

    if s.mode is Mode.COMMON:
        v = v_of(range(1, n + 1))
        stages = [(space.h_system + h_env + v / root, [(v, -1.0 / root)])]
        transfer, heat, work = _shared_ancilla_channel(space, stages, tau)
        return CollisionChannel(s, tau, space.cutoffs, transfer, heat, work, h_sys, 1)

    stages = []
    for k in range(1, n + 1):
        h_k = _site_hamiltonian(s, k)
        v = v_of((k,))
        terms = [(v, -1.0 / root)]
        rest = h_sys - h_k
        if np.any(rest != 0):
            terms.append((_lift(rest, d_env), 1.0))
        stages.append((_lift(h_k, d_env) + h_env + v / root, terms))

    if s.mode is Mode.CASCADED:
        transfer, heat, work = _shared_ancilla_channel(space, stages, tau)
        return CollisionChannel(s, tau, space.cutoffs, transfer, heat, work, h_sys, n)

    # independent: every sub-step draws a fresh ancilla pair
    d = s.dim
    transfer = np.eye(d * d, dtype=complex)
    heat = {i: np.zeros((d, d), dtype=complex) for i in BATHS}
    work = np.zeros((d, d), dtype=complex)
    for stage in stages:
        t_k, heat_k, work_k = _shared_ancilla_channel(space, [stage], tau)
        for i in BATHS:
            heat[i] += _pull_back(heat_k[i], transfer)
        work += _pull_back(work_k, transfer)
        transfer = t_k @ transfer
    return CollisionChannel(s, tau, space.cutoffs, transfer, heat, work, h_sys, n)


def _collide(s: Scenario, mode: Mode, rho, tau, cutoffs) -> CollisionStep:
    if s.mode is not mode:
        raise ValueError(f"scenario mode {s.mode.value!r} does not match {mode.value!r} collisions")
    rho = qmat.validate_density_matrix(rho, trace_tol=1e-9, herm_tol=1e-9, psd_tol=1e-8)
    return collision_channel(s, float(tau), None if cutoffs is None else tuple(cutoffs)).step(rho)


def collide_common(s: Scenario, rho: np.ndarray, tau: float, cutoffs=None) -> CollisionStep:
    """One simultaneous collision of all sites with a fresh ancilla pair."""
    return _collide(s, Mode.COMMON, rho, tau, cutoffs)


def collide_cascaded(s: Scenario, rho: np.ndarray, tau: float, cutoffs=None) -> CollisionStep:
    """One sweep of a single ancilla pair over sites ``1..N`` in order."""
    return _collide(s, Mode.CASCADED, rho, tau, cutoffs)


def collide_independent(s: Scenario, rho: np.ndarray, tau: float, cutoffs=None) -> CollisionStep:
    """One sweep in which each site meets its own fresh ancilla pair."""
    return _collide(s, Mode.INDEPENDENT, rho, tau, cutoffs)


# ------------------------------------------------------------- steady cycle


@dataclass(frozen=True)
class SteadyCycleResult:
    rho: np.ndarray
    w: float
    q_h: float
    q_c: float
    steps: int
    converged: bool
    change: float
    first_law_residual: float

    @property
    def currents(self) -> dict:
        return {"w": self.w, "q_h": self.q_h, "q_c": self.q_c}


def run_to_steady(s: Scenario, tau: float, tol: float = 1e-10, max_steps: int = 200_000,
                  seed: np.ndarray | None = None, cutoffs=None,
                  time_normalization: str = "per_sweep") -> SteadyCycleResult:
    """Iterate the channel to its fixed point and report per-time currents.

    Iterates with repeated squaring of the transfer matrix; stops once one
    further application changes the state by less than ``tol`` in trace norm.
    """
    channel = collision_channel(s, float(tau), None if cutoffs is None else tuple(cutoffs))
    dt = channel.elapsed(time_normalization)
    rho = local_gibbs_seed(s) if seed is None else qmat.validate_density_matrix(seed)
    t = channel.transfer
    power, stride, steps = t, 1, 0
    v = vec(rho)
    while True:
        v = power @ v
        steps += stride
        rho = unvec(v)
        rho = (rho + rho.conj().T) / 2 / np.trace(rho).real
        v = vec(rho)
        change = qmat.trace_norm(unvec(t @ v) - rho)
        if change < tol or steps >= max_steps:
            break
        if 2 * stride <= max_steps - steps:
            power, stride = power @ power, 2 * stride
        else:
            stride = max_steps - steps
            power = np.linalg.matrix_power(t, stride)
    step = channel.step(rho)
    return SteadyCycleResult(
        rho=rho, w=step.dw / dt, q_h=step.dq_h / dt, q_c=step.dq_c / dt,
        steps=steps, converged=change < tol, change=change,
        first_law_residual=step.first_law_residual / dt,
    )


# ------------------------------------------------------------ tau -> 0 checks


@dataclass(frozen=True)
class Extrapolation:
    """Linear fit ``c(tau) = c0 + slope * tau`` for one current."""

    taus: tuple[float, ...]
    values: tuple[float, ...]
    intercept: float
    slope: float
    fit_residual: float


def linear_extrapolation(taus, values) -> Extrapolation:
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    if np.unique(taus).size < 3:
        raise ValueError("extrapolation needs at least three distinct collision times")
    (slope, intercept), res, *_ = np.polyfit(taus, values, 1, full=True)
    fit_residual = float(np.sqrt(res[0] / taus.size)) if res.size else 0.0
    return Extrapolation(tuple(taus), tuple(values), float(intercept), float(slope), fit_residual)


def tau_extrapolate(s: Scenario, taus=(0.02, 0.04, 0.08), **kwargs) -> dict:
    """Steady-state currents at each ``tau`` and their ``tau -> 0`` intercepts.

    Keyword arguments go to :func:`run_to_steady`.  Raises ``RuntimeError`` if
    any run fails to converge.
    """
    runs = [run_to_steady(s, tau, **kwargs) for tau in taus]
    bad = [tau for tau, r in zip(taus, runs) if not r.converged]
    if bad:
        raise RuntimeError(f"collision iteration did not converge for tau = {bad}")
    return {key: linear_extrapolation(taus, [r.currents[key] for r in runs])
            for key in ("w", "q_h", "q_c")}


def convergence_order(taus, values, reference: float) -> float:
    """Slope of ``log|c(tau) - reference|`` against ``log tau``."""
    err = np.abs(np.asarray(values, dtype=float) - reference)
    if np.any(err == 0):
        raise ValueError("exact agreement at some tau: order undefined")
    return float(np.polyfit(np.log(np.asarray(taus, dtype=float)), np.log(err), 1)[0])
