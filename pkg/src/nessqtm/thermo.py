"""Steady-state thermodynamics of the two-ensemble machine.

Sign convention: every current is positive when energy flows into the
system.  Heat ``q_i`` is the energy drawn from bath ``i`` through the local
site energies; work ``w`` is the rest, carried by the exchange coupling.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from . import qmat
from .liouvillian import assemble, steady_state
from .model import (BATHS, Mode, RateTable, Scenario, Variant, build_interaction_hamiltonian,
                    build_system_hamiltonian, grid_points, rate_table, sigma)

FIRST_LAW_FLOOR = 1e-6
REGIME_EPS = 1e-9


@dataclass(frozen=True)
class Currents:
    w_loc: float
    w_nonloc: float
    q_h_loc: float
    q_h_nonloc: float
    q_c_loc: float
    q_c_nonloc: float

    @property
    def w(self) -> float:
        return self.w_loc + self.w_nonloc

    @property
    def q_h(self) -> float:
        return self.q_h_loc + self.q_h_nonloc

    @property
    def q_c(self) -> float:
        return self.q_c_loc + self.q_c_nonloc

    @property
    def first_law_residual(self) -> float:
        return self.w + self.q_h + self.q_c

    @property
    def scale(self) -> float:
        return max(abs(self.w), abs(self.q_h), abs(self.q_c), FIRST_LAW_FLOOR)

    def entropy_production(self, s: Scenario) -> float:
        return -self.q_h / s.hot.temperature - self.q_c / s.cold.temperature

    def components(self) -> np.ndarray:
        return np.array([self.w_loc, self.w_nonloc, self.q_h_loc,
                         self.q_h_nonloc, self.q_c_loc, self.q_c_nonloc])


def _ex(op, rho) -> complex:
    return qmat.expectation(op, rho)


def _check_dim(rho, s: Scenario) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (s.dim, s.dim):
        raise ValueError(f"state of shape {rho.shape} does not match scenario dimension {s.dim}")
    return rho


def _pairs(s: Scenario):
    """Ordered site pairs ``(k, l)`` of the non-local sums, with their weight."""
    n = s.n_sites
    if s.mode is Mode.COMMON:
        return [(k, l, 1.0) for k in range(1, n + 1) for l in range(1, n + 1) if k != l]
    if s.mode is Mode.CASCADED:
        return [(k, l, 2.0) for k in range(1, n + 1) for l in range(k + 1, n + 1)]
    return []


# ------------------------------------------------------------------ heat


def heat_local(rho, s: Scenario, rates: RateTable | None = None) -> dict:
    """Population-driven heat from each bath."""
    rho = _check_dim(rho, s)
    rates = rates or rate_table(s)
    n = s.n_sites
    out = {}
    for i in BATHS:
        total = 0.0
        for k in range(1, n + 1):
            p, m = sigma("plus", i, k, n), sigma("minus", i, k, n)
            total += (rates.gamma_plus[i][k - 1, k - 1] * _ex(m @ p, rho).real
                      - rates.gamma_minus[i][k - 1, k - 1] * _ex(p @ m, rho).real)
        out[i] = s.ensemble(i).omega * total
    return out


def heat_nonlocal(rho, s: Scenario, rates: RateTable | None = None) -> dict:
    """Heat carried by intra-ensemble coherences ``<σ⁺_k σ⁻_l>``; zero in independent mode."""
    rho = _check_dim(rho, s)
    if s.mode is Mode.INDEPENDENT:
        return {i: 0.0 for i in BATHS}
    rates = rates or rate_table(s)
    n = s.n_sites
    out = {}
    for i in BATHS:
        total = 0.0
        for k, l, weight in _pairs(s):
            bracket = rates.gamma_plus[i][k - 1, l - 1] - rates.gamma_minus[i][k - 1, l - 1]
            total += weight * bracket * _ex(sigma("plus", i, k, n) @ sigma("minus", i, l, n), rho).real
        out[i] = s.ensemble(i).omega * total
    return out


# ------------------------------------------------------------------ work


def _f_ops(h_int: np.ndarray, bath: str, k: int, n: int):
    m, p = sigma("minus", bath, k, n), sigma("plus", bath, k, n)
    return h_int @ m - m @ h_int, h_int @ p - p @ h_int


def work_local(rho, s: Scenario, rates: RateTable | None = None) -> float:
    """``Σ γ⁻ Re<σ⁺F> + γ⁺ Re<σ⁻G>`` with ``F = [H_I, σ⁻]``, ``G = [H_I, σ⁺]``."""
    rho = _check_dim(rho, s)
    rates = rates or rate_table(s)
    h_int = build_interaction_hamiltonian(s)
    n = s.n_sites
    total = 0.0
    for i in BATHS:
        for k in range(1, n + 1):
            f, g = _f_ops(h_int, i, k, n)
            total += (rates.gamma_minus[i][k - 1, k - 1] * _ex(sigma("plus", i, k, n) @ f, rho).real
                      + rates.gamma_plus[i][k - 1, k - 1] * _ex(sigma("minus", i, k, n) @ g, rho).real)
    return float(total)


def work_nonlocal(rho, s: Scenario, rates: RateTable | None = None) -> float:
    """Cross-site F-operator terms: all ordered pairs for common mode, ``k < l``
    (doubled, one-way) for cascaded mode, nothing for independent mode."""
    rho = _check_dim(rho, s)
    if s.mode is Mode.INDEPENDENT:
        return 0.0
    rates = rates or rate_table(s)
    h_int = build_interaction_hamiltonian(s)
    n = s.n_sites
    total = 0.0
    for i in BATHS:
        for k, l, weight in _pairs(s):
            gm = rates.gamma_minus[i][k - 1, l - 1]
            gp = rates.gamma_plus[i][k - 1, l - 1]
            if s.mode is Mode.COMMON:
                # γ⁻ Re<σ⁺_l F_k> + γ⁺ Re<σ⁻_l G_k>
                f, g = _f_ops(h_int, i, k, n)
                a, b = sigma("plus", i, l, n), sigma("minus", i, l, n)
            else:
                # earlier site k drives later site l
                f, g = _f_ops(h_int, i, l, n)
                a, b = sigma("plus", i, k, n), sigma("minus", i, k, n)
            total += weight * (gm * _ex(a @ f, rho).real + gp * _ex(b @ g, rho).real)
    return float(total)


def closed_form_currents(rho, s: Scenario, rates: RateTable | None = None) -> Currents:
    rates = rates or rate_table(s)
    ql = heat_local(rho, s, rates)
    qn = heat_nonlocal(rho, s, rates)
    return Currents(
        w_loc=work_local(rho, s, rates),
        w_nonloc=work_nonlocal(rho, s, rates),
        q_h_loc=ql["h"], q_h_nonloc=qn["h"],
        q_c_loc=ql["c"], q_c_nonloc=qn["c"],
    )


def _plus_part(a: np.ndarray) -> np.ndarray:
    """``(A)_+ = A + A†``."""
    return a + a.conj().T


def explicit_work_n2(rho, s: Scenario, rates: RateTable | None = None) -> tuple[float, float]:
    """Two-site work currents written term by term in pair and triple coherences.

    Independent of the F-operator route; used to cross-check it.  Returns
    ``(w_loc, w_nonloc)``.
    """
    if s.n_sites != 2:
        raise ValueError("explicit two-site work forms need n_sites = 2")
    rho = _check_dim(rho, s)
    rates = rates or rate_table(s)
    om = s.interaction.coupling_matrix(2)

    def sg(kind, i, k):
        return sigma(kind, i, k, 2)

    def big_gamma(i, k):
        return rates.gamma_minus[i][k - 1, k - 1] + rates.gamma_plus[i][k - 1, k - 1]

    w_loc = 0.0
    for a in (1, 2):
        for b in (1, 2):
            pair = _ex(_plus_part(sg("plus", "h", a) @ sg("minus", "c", b)), rho).real
            w_loc -= 0.5 * om[a - 1, b - 1] * (big_gamma("h", a) + big_gamma("c", b)) * pair
    if s.mode is Mode.INDEPENDENT:
        return w_loc, 0.0

    dg = {i: rates.gamma_minus[i][0, 1] - rates.gamma_plus[i][0, 1] for i in BATHS}
    other = {1: 2, 2: 1}
    cascaded = s.mode is Mode.CASCADED
    prefactor = 1.0 if cascaded else 0.5
    w_non = 0.0
    for a in (1, 2):
        for b in (1, 2):
            coupling = om[a - 1, b - 1]
            if coupling == 0.0:
                continue
            # hot-side triple: σz on hot site a, hop from hot site ā to cold site b
            if not cascaded or a == 2:
                t = sg("z", "h", a) @ _plus_part(sg("plus", "h", other[a]) @ sg("minus", "c", b))
                w_non += prefactor * dg["h"] * coupling * _ex(t, rho).real
            if not cascaded or b == 2:
                t = sg("z", "c", b) @ _plus_part(sg("plus", "c", other[b]) @ sg("minus", "h", a))
                w_non += prefactor * dg["c"] * coupling * _ex(t, rho).real
    return float(w_loc), float(w_non)


# ---------------------------------------------------------------- oracle


def _thermal_expectation(op: sps.spmatrix, rho: np.ndarray, pops: np.ndarray) -> complex:
    """``Tr(op (rho ⊗ diag(pops)))`` without forming the product state."""
    coo = op.tocoo()
    d_env = pops.size
    r_env, c_env = coo.row % d_env, coo.col % d_env
    keep = r_env == c_env
    rows, cols = coo.row[keep] // d_env, coo.col[keep] // d_env
    return complex(np.sum(coo.data[keep] * rho[cols, rows] * pops[r_env[keep]]))


def _double_commutator(a, b, c):
    """``[a, [b, c]]`` for sparse operands."""
    inner = b @ c - c @ b
    return a @ inner - inner @ a


def oracle_currents(rho, s: Scenario, cutoffs: tuple[int, int] | None = None) -> Currents:
    """Currents from nested commutators of the system-ancilla couplings,
    averaged over ``rho ⊗ ρ_E`` with thermal oscillator ancillas.

    Raises ``ValueError`` if a cutoff leaves more than the tail tolerance of
    thermal weight outside the truncated space.
    """
    rho = _check_dim(rho, s)
    n = s.n_sites
    d_sys = s.dim
    h_sys = sps.csr_matrix(build_system_hamiltonian(s))
    parts = {}
    for idx, i in enumerate(BATHS):
        ens = s.ensemble(i)
        bw = ens.beta_omega
        d = qmat.oscillator_cutoff(bw) if cutoffs is None else int(cutoffs[idx])
        if math.exp(-d * bw) >= qmat.TAIL_MASS_TOL:
            raise ValueError(f"ancilla cutoff {d} for bath {i!r} leaves thermal tail "
                             f"exp(-{d}*{bw:.4g}) above {qmat.TAIL_MASS_TOL:g}")
        pops = qmat.thermal_populations(bw, d)
        a, ad = qmat.fock_ops(d)
        h_env = ens.omega * sps.kron(sps.identity(d_sys), sps.csr_matrix(ad @ a), format="csr")
        h_tot = sps.kron(h_sys, sps.identity(d), format="csr") + h_env
        v = {}
        for k in range(1, n + 1):
            v[k] = ens.g[k - 1] * (sps.kron(sps.csr_matrix(sigma("plus", i, k, n)), sps.csr_matrix(a))
                                  + sps.kron(sps.csr_matrix(sigma("minus", i, k, n)), sps.csr_matrix(ad)))
            v[k] = v[k].tocsr()

        def ev(x):
            return _thermal_expectation(x, rho, pops).real

        q_loc = sum(0.5 * ev(_double_commutator(v[k], v[k], h_env)) for k in v)
        w_loc = sum(-0.5 * ev(_double_commutator(v[k], v[k], h_tot)) for k in v)
        q_non = w_non = 0.0
        if s.mode is Mode.COMMON:
            for k in v:
                for l in v:
                    if k != l:
                        q_non += 0.5 * ev(_double_commutator(v[l], v[k], h_env))
                        w_non -= 0.5 * ev(_double_commutator(v[l], v[k], h_tot))
        elif s.mode is Mode.CASCADED:
            for k in v:
                for l in v:
                    if l > k:
                        q_non += ev(_double_commutator(v[k], v[l], h_env))
                        w_non -= ev(_double_commutator(v[k], v[l], h_tot))
        parts[i] = (q_loc, q_non, w_loc, w_non)
    return Currents(
        w_loc=parts["h"][2] + parts["c"][2],
        w_nonloc=parts["h"][3] + parts["c"][3],
        q_h_loc=parts["h"][0], q_h_nonloc=parts["h"][1],
        q_c_loc=parts["c"][0], q_c_nonloc=parts["c"][1],
    )


# ------------------------------------------------------------- coherence


@dataclass(frozen=True)
class CoherenceMetrics:
    c_loc: float
    c_nonloc: float
    c_nonloc_factored: float
    variant: str


def _variant_digit(s: Scenario) -> str:
    # no exchange coupling: fall back to the equal-index forms
    return "1" if s.interaction.variant is Variant.TYPE1 else "2"


def _triples(s: Scenario, digit: str):
    """``(i, n_z, n_bar, i', n')`` index tuples of the three-site coherence sums."""
    out = []
    for i in BATHS:
        ip = "c" if i == "h" else "h"
        if s.mode is Mode.CASCADED:
            targets = (1, 2) if digit == "1" else (2,)
            out += [(i, 2, 1, ip, t) for t in targets]
        else:
            for nz in (1, 2):
                nbar = 3 - nz
                targets = (1, 2) if digit == "1" else (nz,)
                out += [(i, nz, nbar, ip, t) for t in targets]
    return out


def coherence_metrics(rho, s: Scenario) -> CoherenceMetrics:
    """Coherence functionals matched to the scenario's mode and exchange variant.

    Defined for two sites per ensemble only.  Independent mode uses the
    common-bath functionals.
    """
    if s.n_sites != 2:
        raise ValueError(f"coherence functionals are defined for n_sites = 2, got {s.n_sites}")
    rho = _check_dim(rho, s)
    digit = _variant_digit(s)

    def sg(kind, i, k):
        return sigma(kind, i, k, 2)

    pairs = [(a, b) for a in (1, 2) for b in (1, 2)] if digit == "1" else [(1, 1), (2, 2)]
    c_loc = -2.0 * sum(_ex(sg("plus", "h", a) @ sg("minus", "c", b), rho).real for a, b in pairs)
    c_non = c_fac = 0.0
    for i, nz, nbar, ip, t in _triples(s, digit):
        z = sg("z", i, nz)
        hop = _plus_part(sg("plus", i, nbar) @ sg("minus", ip, t))
        c_non += _ex(z @ hop, rho).real
        c_fac += _ex(z, rho).real * _ex(hop, rho).real
    prefix = {Mode.COMMON: "com", Mode.CASCADED: "cas", Mode.INDEPENDENT: "ind"}[s.mode]
    return CoherenceMetrics(float(c_loc), float(c_non), float(c_fac), f"{prefix}({digit})")


def dephase(rho) -> np.ndarray:
    """Keep only the diagonal in the product energy basis of the bare sites."""
    rho = np.asarray(rho, dtype=complex)
    return np.diag(np.diag(rho))


# --------------------------------------------------------------- regimes


class Regime(str, enum.Enum):
    REFRIGERATOR = "Refrigerator"
    ENGINE = "Engine"
    ACCELERATOR = "Accelerator"
    BOUNDARY = "Boundary"


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    figure_of_merit: float
    carnot_bound: float


def classify_regime(c: Currents, s: Scenario, eps: float = REGIME_EPS) -> RegimeReport:
    """Machine type from the signs of ``(w, q_h, q_c)``; ``|x| <= eps`` counts as no sign."""
    if not eps > 0:
        raise ValueError(f"boundary band must be positive, got {eps}")
    w, qh, qc = c.w, c.q_h, c.q_c
    wh, wc = s.hot.omega, s.cold.omega
    th, tc = s.hot.temperature, s.cold.temperature
    if w > eps and qh < -eps and qc > eps:
        return RegimeReport(Regime.REFRIGERATOR, wc / (wh - wc), tc / (th - tc))
    if w < -eps and qh > eps and qc < -eps:
        return RegimeReport(Regime.ENGINE, 1.0 - wc / wh, 1.0 - tc / th)
    if w > eps and qh > eps and qc < -eps:
        return RegimeReport(Regime.ACCELERATOR, wh / (wh - wc), math.inf)
    return RegimeReport(Regime.BOUNDARY, math.nan, math.nan)


# ----------------------------------------------------------------- sweep


@dataclass(frozen=True)
class SweepPoint:
    scenario: str
    omega_ratio: float
    currents: Currents | None
    coherence: CoherenceMetrics | None
    regime: RegimeReport | None
    entropy_production: float
    residual: float = math.nan
    spectral_gap: float = math.nan
    error: str = ""


def evaluate_point(s: Scenario, omega_ratio: float | None = None) -> SweepPoint:
    """Steady state, currents, coherence and regime for one scenario.

    Solver failures are reported in ``error`` rather than raised.
    """
    if omega_ratio is not None:
        s = s.with_omega_ratio(omega_ratio)
    ratio = s.hot.omega / s.cold.omega
    try:
        rates = rate_table(s)
        ss = steady_state(assemble(s, rates))
        cur = closed_form_currents(ss.rho, s, rates)
        coh = coherence_metrics(ss.rho, s) if s.n_sites == 2 else None
        regime = classify_regime(cur, s)
    except (ValueError, np.linalg.LinAlgError) as exc:
        return SweepPoint(s.tag, ratio, None, None, None, math.nan, error=str(exc))
    notes = []
    if ss.degenerate:
        notes.append(f"degenerate kernel (gap {ss.spectral_gap:.3e})")
    if abs(cur.first_law_residual) >= 1e-9 * cur.scale:
        notes.append(f"first-law residual {cur.first_law_residual:.3e}")
    sigma_rate = cur.entropy_production(s)
    if sigma_rate < -1e-12:
        notes.append(f"negative entropy production {sigma_rate:.3e}")
    return SweepPoint(s.tag, ratio, cur, coh, regime, sigma_rate,
                      ss.residual, ss.spectral_gap, "; ".join(notes))


def sweep(s: Scenario, grid, threads: int = 1) -> list[SweepPoint]:
    """Evaluate ``s`` at every ``omega_h/omega_c`` in ``grid`` (values or ``(lo, hi, step)``)."""
    ratios = grid_points(grid) if isinstance(grid, tuple) and len(grid) == 3 else np.asarray(grid, float)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda r: evaluate_point(s, float(r)), ratios))
    return [evaluate_point(s, float(r)) for r in ratios]


@dataclass(frozen=True)
class MaxPower:
    omega_ratio: float
    eta: float
    w: float
    grid_omega_ratio: float
    grid_step: float


def efficiency_at_max_power(points: list[SweepPoint]) -> MaxPower:
    """Engine point of largest power output, refined by a three-point parabola."""
    xs = np.array([p.omega_ratio for p in points])
    power = np.array([-p.currents.w if p.currents is not None else np.nan for p in points])
    engine = np.array([p.regime is not None and p.regime.regime is Regime.ENGINE for p in points])
    if not engine.any():
        raise ValueError("empty engine window: no grid point operates as an engine")
    k = int(np.flatnonzero(engine)[np.argmax(power[engine])])
    step = float(np.median(np.diff(xs))) if xs.size > 1 else math.nan
    x_best, p_best = xs[k], power[k]
    if 0 < k < len(points) - 1 and engine[k - 1] and engine[k + 1]:
        y0, y1, y2 = power[k - 1], power[k], power[k + 1]
        curvature = y0 - 2 * y1 + y2
        if curvature < 0:
            offset = 0.5 * (y0 - y2) / curvature
            dx = 0.5 * (xs[k + 1] - xs[k - 1])
            x_best = xs[k] + offset * dx
            p_best = y1 - 0.25 * (y0 - y2) * offset
    return MaxPower(float(x_best), float(1.0 - 1.0 / x_best), float(-p_best), float(xs[k]), step)


def parametric_curve(points: list[SweepPoint]) -> list[tuple[float, float, float]]:
    """``(omega_ratio, eta, w)`` for every engine point, in grid order."""
    return [(p.omega_ratio, p.regime.figure_of_merit, p.currents.w) for p in points
            if p.regime is not None and p.regime.regime is Regime.ENGINE]


@dataclass(frozen=True)
class SweepResult:
    scenario: str
    points: list[SweepPoint]
    max_power: MaxPower | None
    notes: tuple[str, ...] = field(default_factory=tuple)


def sweep_and_optimize(s: Scenario, grid, threads: int = 1) -> SweepResult:
    points = sweep(s, grid, threads)
    try:
        best, notes = efficiency_at_max_power(points), ()
    except ValueError as exc:
        best, notes = None, (str(exc),)
    return SweepResult(s.tag, points, best, notes)
