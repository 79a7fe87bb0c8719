"""Scenario description, Hamiltonian pieces and bath rates.

A :class:`Scenario` fixes two TLS ensembles (hot and cold), the exchange
interaction between them and how each ensemble dissipates into its bath.
Builders in this module turn it into the system Hamiltonian, the
system-ancilla collision operators and the :class:`RateTable`.

The scenario text format is TOML restricted to the sections ``[hot]``,
``[cold]``, ``[interaction]`` and ``[run]``; see ``README.md`` for the grammar.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import re
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sps

from . import qmat

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib


BATHS = ("h", "c")


class Mode(str, enum.Enum):
    COMMON = "common"
    CASCADED = "cascaded"
    INDEPENDENT = "independent"


class Variant(str, enum.Enum):
    TYPE1 = "type1"
    TYPE2 = "type2"
    NONE = "none"


class ScenarioError(ValueError):
    """Invalid scenario document or parameters; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class EnsembleSpec:
    """``n_sites`` identical TLSs of frequency ``omega`` coupled to one bath."""

    n_sites: int
    omega: float
    g: tuple[float, ...]
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "g", tuple(float(x) for x in self.g))
        object.__setattr__(self, "omega", float(self.omega))
        object.__setattr__(self, "temperature", float(self.temperature))
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ScenarioError(f"n_sites must be a positive integer, got {self.n_sites}")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        if not self.omega > 0:
            raise ScenarioError(f"omega must be positive, got {self.omega}")
        if not self.temperature > 0:
            raise ScenarioError(f"temperature must be positive, got {self.temperature}")
        if len(self.g) != self.n_sites:
            raise ScenarioError(f"g has {len(self.g)} entries, expected n_sites = {self.n_sites}")
        if any(not x >= 0 for x in self.g):
            raise ScenarioError("couplings g must be non-negative")

    @property
    def beta_omega(self) -> float:
        return self.omega / self.temperature


@dataclass(frozen=True)
class InteractionSpec:
    """Exchange coupling ``Ω (σ⁺_h σ⁻_c + h.c.)`` between the ensembles.

    ``TYPE1`` couples every hot site ``n`` to every cold site ``n'`` with
    ``omega_matrix[n][n']``; ``TYPE2`` couples only equal indices with
    ``omega_vector[n]``.  Both tables may be present; ``variant`` picks one.
    """

    variant: Variant = Variant.NONE
    omega_matrix: tuple[tuple[float, ...], ...] | None = None
    omega_vector: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.omega_matrix is not None:
            object.__setattr__(self, "omega_matrix",
                               tuple(tuple(float(x) for x in row) for row in self.omega_matrix))
        if self.omega_vector is not None:
            object.__setattr__(self, "omega_vector", tuple(float(x) for x in self.omega_vector))
        if self.variant is Variant.TYPE1 and self.omega_matrix is None:
            raise ScenarioError("variant type1 requires omega_matrix")
        if self.variant is Variant.TYPE2 and self.omega_vector is None:
            raise ScenarioError("variant type2 requires omega_vector")

    def check_size(self, n: int) -> None:
        m = self.omega_matrix
        if m is not None and (len(m) != n or any(len(row) != n for row in m)):
            shape = f"{len(m)}x{len(m[0]) if m else 0}"
            raise ScenarioError(f"omega_matrix must be {n}x{n} (N x N), got {shape}")
        v = self.omega_vector
        if v is not None and len(v) != n:
            raise ScenarioError(f"omega_vector must have length N = {n}, got {len(v)}")

    def coupling_matrix(self, n: int) -> np.ndarray:
        """Dense ``N x N`` table of hot-cold couplings for the active variant."""
        if self.variant is Variant.TYPE1:
            return np.array(self.omega_matrix, dtype=float)
        if self.variant is Variant.TYPE2:
            return np.diag(np.array(self.omega_vector, dtype=float))
        return np.zeros((n, n))

    def with_variant(self, variant: Variant | str) -> "InteractionSpec":
        return dataclasses.replace(self, variant=Variant(variant))


@dataclass(frozen=True)
class Scenario:
    hot: EnsembleSpec
    cold: EnsembleSpec
    interaction: InteractionSpec = field(default_factory=InteractionSpec)
    mode: Mode = Mode.COMMON

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.hot.n_sites != self.cold.n_sites:
            raise ScenarioError(
                f"hot and cold ensembles must have equal n_sites ({self.hot.n_sites} != {self.cold.n_sites})"
            )
        self.interaction.check_size(self.hot.n_sites)
        if self.hot.temperature <= self.cold.temperature:
            warnings.warn("hot bath temperature does not exceed cold bath temperature", stacklevel=2)

    @property
    def n_sites(self) -> int:
        return self.hot.n_sites

    @property
    def layout(self) -> qmat.HilbertLayout:
        return qmat.HilbertLayout.for_ensembles(self.n_sites)

    @property
    def dim(self) -> int:
        return 4 ** self.n_sites

    def ensemble(self, bath: str) -> EnsembleSpec:
        return {"h": self.hot, "c": self.cold}[bath]

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_omega_ratio(self, ratio: float) -> "Scenario":
        """Copy with ``omega_h = ratio * omega_c``."""
        return self.replace(hot=dataclasses.replace(self.hot, omega=ratio * self.cold.omega))

    @property
    def tag(self) -> str:
        prefix = {Mode.COMMON: "com", Mode.CASCADED: "cas", Mode.INDEPENDENT: "ind"}[self.mode]
        suffix = {Variant.TYPE1: "1", Variant.TYPE2: "2", Variant.NONE: "0"}[self.interaction.variant]
        return prefix + suffix


SCENARIO_TAGS = ("com1", "com2", "cas1", "cas2", "ind1", "ind2")


def scenario_for_tag(base: Scenario, tag: str) -> Scenario:
    """``base`` switched to the mode/variant named by ``tag`` (``com1``, ``ind2``, ...)."""
    modes = {"com": Mode.COMMON, "cas": Mode.CASCADED, "ind": Mode.INDEPENDENT}
    variants = {"1": Variant.TYPE1, "2": Variant.TYPE2, "0": Variant.NONE}
    if len(tag) != 4 or tag[:3] not in modes or tag[3] not in variants:
        raise ScenarioError(f"unknown scenario tag {tag!r}; expected one of {', '.join(SCENARIO_TAGS)}")
    return base.replace(mode=modes[tag[:3]], interaction=base.interaction.with_variant(variants[tag[3]]))


# ---------------------------------------------------------------- operators


@lru_cache(maxsize=None)
def site_operators(n_sites: int) -> dict:
    """Embedded ``σ⁺, σ⁻, σᶻ`` for every site label ``(bath, n)`` on the 2N-TLS space."""
    layout = qmat.HilbertLayout.for_ensembles(n_sites)
    ops = {"plus": {}, "minus": {}, "z": {}}
    for label in layout.labels:
        for key, op in (("plus", qmat.SIGMA_PLUS), ("minus", qmat.SIGMA_MINUS), ("z", qmat.SIGMA_Z)):
            m = qmat.embed_site_op(op, label, layout)
            m.setflags(write=False)
            ops[key][label] = m
    return ops


def sigma(kind: str, bath: str, n: int, n_sites: int) -> np.ndarray:
    """Embedded Pauli ladder operator; ``kind`` is ``plus``, ``minus`` or ``z``; ``n`` is 1-based."""
    return site_operators(n_sites)[kind][(bath, n)]


def excitation_number(n_sites: int, bath: str | None = None) -> np.ndarray:
    baths = BATHS if bath is None else (bath,)
    return sum(sigma("plus", i, n, n_sites) @ sigma("minus", i, n, n_sites)
               for i in baths for n in range(1, n_sites + 1))


def interaction_terms(s: Scenario) -> list[tuple[int, int, float]]:
    """Nonzero ``(hot site, cold site, Ω)`` triples of the exchange coupling (1-based)."""
    m = s.interaction.coupling_matrix(s.n_sites)
    return [(a + 1, b + 1, float(m[a, b]))
            for a in range(s.n_sites) for b in range(s.n_sites) if m[a, b] != 0.0]


def exchange_term(n_hot: int, n_cold: int, n_sites: int) -> np.ndarray:
    p_h, m_h = sigma("plus", "h", n_hot, n_sites), sigma("minus", "h", n_hot, n_sites)
    p_c, m_c = sigma("plus", "c", n_cold, n_sites), sigma("minus", "c", n_cold, n_sites)
    return p_h @ m_c + m_h @ p_c


def build_interaction_hamiltonian(s: Scenario) -> np.ndarray:
    h = np.zeros((s.dim, s.dim), dtype=complex)
    for a, b, om in interaction_terms(s):
        h += om * exchange_term(a, b, s.n_sites)
    return h


def build_local_hamiltonian(s: Scenario, bath: str | None = None) -> np.ndarray:
    """``Σ ω_i σ⁺σ⁻`` over one bath's sites, or over all sites when ``bath`` is None."""
    baths = BATHS if bath is None else (bath,)
    return sum(s.ensemble(i).omega * excitation_number(s.n_sites, i) for i in baths)


def build_system_hamiltonian(s: Scenario) -> np.ndarray:
    return build_local_hamiltonian(s) + build_interaction_hamiltonian(s)


# ------------------------------------------------------------ ancilla space


def default_cutoffs(s: Scenario) -> tuple[int, int]:
    return (qmat.oscillator_cutoff(s.hot.beta_omega), qmat.oscillator_cutoff(s.cold.beta_omega))


@dataclass(frozen=True)
class AncillaSpace:
    """Sparse operators on ``system ⊗ E_h ⊗ E_c`` for one scenario and cutoff pair."""

    scenario: Scenario
    cutoffs: tuple[int, int]
    layout: qmat.HilbertLayout
    h_system: sps.csr_matrix
    h_bath: dict
    couplings: dict
    populations: dict

    @property
    def dim(self) -> int:
        return self.layout.dim


def _embed_sparse(system_op, ancilla_ops: Sequence, d_sys: int) -> sps.csr_matrix:
    out = sps.csr_matrix(system_op) if system_op is not None else sps.identity(d_sys, format="csr")
    for op in ancilla_ops:
        out = sps.kron(out, sps.csr_matrix(op), format="csr")
    return out


def build_ancilla_space(s: Scenario, cutoffs: tuple[int, int] | None = None) -> AncillaSpace:
    """System Hamiltonian, bath Hamiltonians and couplings on the joint space."""
    cutoffs = tuple(cutoffs) if cutoffs is not None else default_cutoffs(s)
    d_h, d_c = cutoffs
    n = s.n_sites
    a_h, ad_h = qmat.fock_ops(d_h)
    a_c, ad_c = qmat.fock_ops(d_c)
    eye_h, eye_c = np.eye(d_h), np.eye(d_c)
    d_sys = s.dim
    h_sys = _embed_sparse(build_system_hamiltonian(s), (eye_h, eye_c), d_sys)
    h_bath = {
        "h": s.hot.omega * _embed_sparse(None, (ad_h @ a_h, eye_c), d_sys),
        "c": s.cold.omega * _embed_sparse(None, (eye_h, ad_c @ a_c), d_sys),
    }
    lowering = {"h": (a_h, eye_c), "c": (eye_h, a_c)}
    couplings = {}
    for i in BATHS:
        ens = s.ensemble(i)
        anc_lower = lowering[i]
        anc_raise = tuple(op.conj().T for op in anc_lower)
        for k in range(1, n + 1):
            v = (_embed_sparse(sigma("plus", i, k, n), anc_lower, d_sys)
                 + _embed_sparse(sigma("minus", i, k, n), anc_raise, d_sys))
            couplings[(i, k)] = (ens.g[k - 1] * v).tocsr()
    pops = {
        "h": qmat.thermal_populations(s.hot.beta_omega, d_h),
        "c": qmat.thermal_populations(s.cold.beta_omega, d_c),
    }
    layout = qmat.HilbertLayout.for_ensembles(n, ancillas=cutoffs)
    return AncillaSpace(s, cutoffs, layout, h_sys, h_bath, couplings, pops)


def build_coupling_ops(s: Scenario, cutoffs: tuple[int, int] | None = None) -> dict:
    """``V_{i,n} = g_{i,n}(σ⁺_{i,n} a_i + σ⁻_{i,n} a_i†)`` as sparse matrices keyed by ``(i, n)``."""
    return build_ancilla_space(s, cutoffs).couplings


# -------------------------------------------------------------------- rates


@dataclass(frozen=True)
class RateTable:
    """``γ⁻[i][k,l] = g_k g_l (n_i + 1)`` and ``γ⁺[i][k,l] = g_k g_l n_i`` (0-based arrays)."""

    gamma_minus: dict
    gamma_plus: dict
    occupation: dict

    def diagonal_only(self) -> "RateTable":
        diag = lambda d: {i: np.diag(np.diag(m)) for i, m in d.items()}  # noqa: E731
        return RateTable(diag(self.gamma_minus), diag(self.gamma_plus), dict(self.occupation))


def rate_table(s: Scenario) -> RateTable:
    gm, gp, occ = {}, {}, {}
    for i in BATHS:
        ens = s.ensemble(i)
        if not ens.temperature > 0:
            raise ScenarioError(f"{i} bath temperature must be positive")
        nb = qmat.bose_occupation(ens.beta_omega)
        gg = np.outer(ens.g, ens.g)
        gm[i] = gg * (nb + 1.0)
        gp[i] = gg * nb
        occ[i] = nb
    return RateTable(gm, gp, occ)


# ------------------------------------------------------------ text format


@dataclass(frozen=True)
class RunSettings:
    """Options from the ``[run]`` section that are not part of the physics."""

    taus: tuple[float, ...] = (0.02, 0.04, 0.08)
    grid: tuple[float, float, float] = (0.1, 3.5, 0.02)
    scenarios: tuple[str, ...] = SCENARIO_TAGS
    time_normalization: str = "per_sweep"


@dataclass(frozen=True)
class Config:
    scenario: Scenario
    run: RunSettings = RunSettings()


_ENSEMBLE_KEYS = {"n_sites", "omega", "g", "temperature"}
_SECTION_KEYS = {
    "hot": _ENSEMBLE_KEYS,
    "cold": _ENSEMBLE_KEYS,
    "interaction": {"variant", "omega_matrix", "omega_vector"},
    "run": {"mode", "tau", "grid", "scenarios", "time_normalization"},
}
_TIME_NORMALIZATIONS = ("per_sweep", "per_collision")


def _key_lines(text: str) -> tuple[dict, dict]:
    """Map ``section -> line`` and ``(section, key) -> line`` from raw text."""
    sections, keys = {}, {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if m:
            current = m.group(1)
            sections.setdefault(current, lineno)
            continue
        m = re.match(r"^([A-Za-z0-9_\-\"']+)\s*=", line)
        if m:
            keys.setdefault((current, m.group(1).strip("\"'")), lineno)
    return sections, keys


def parse_grid(spec: str) -> tuple[float, float, float]:
    """``"lo:hi:step"`` → floats, validated."""
    parts = str(spec).split(":")
    if len(parts) != 3:
        raise ScenarioError(f"grid must be 'lo:hi:step', got {spec!r}")
    try:
        lo, hi, step = (float(p) for p in parts)
    except ValueError:
        raise ScenarioError(f"grid must be 'lo:hi:step' with numbers, got {spec!r}") from None
    if not (step > 0 and hi >= lo and lo > 0):
        raise ScenarioError(f"grid needs 0 < lo <= hi and step > 0, got {spec!r}")
    return lo, hi, step


def grid_points(grid: tuple[float, float, float]) -> np.ndarray:
    """Evenly spaced ratios ``lo, lo+step, ..., hi`` (rounded to 12 decimals)."""
    lo, hi, step = grid
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 12)


def parse_config(text: str) -> Config:
    """Parse a scenario document; every error is a :class:`ScenarioError`."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"syntax error: {exc}", int(m.group(1)) if m else None) from None
    sections, keys = _key_lines(text)

    for name, value in doc.items():
        if name not in _SECTION_KEYS:
            raise ScenarioError(f"unknown section [{name}]", sections.get(name, keys.get((None, name))))
        if not isinstance(value, dict):
            raise ScenarioError(f"[{name}] must be a section", keys.get((None, name)))
        for key in value:
            if key not in _SECTION_KEYS[name]:
                raise ScenarioError(f"unknown key '{key}' in [{name}]", keys.get((name, key)))

    if "hot" not in doc or "cold" not in doc:
        missing = "hot" if "hot" not in doc else "cold"
        raise ScenarioError(f"missing ensemble [{missing}]", len(text.splitlines()) or 1)

    def anchored(section, key=None):
        line = keys.get((section, key)) if key else None
        return line or sections.get(section)

    ensembles = {}
    for name in ("hot", "cold"):
        sec = doc[name]
        for key in sorted(_ENSEMBLE_KEYS):
            if key not in sec:
                raise ScenarioError(f"missing required key '{key}' in [{name}]", anchored(name))
        try:
            g = sec["g"]
            if not isinstance(g, list):
                raise ScenarioError("g must be a list of numbers")
            ensembles[name] = EnsembleSpec(
                n_sites=_as_int(sec["n_sites"], "n_sites"),
                omega=_as_float(sec["omega"], "omega"),
                g=tuple(_as_float(x, "g") for x in g),
                temperature=_as_float(sec["temperature"], "temperature"),
            )
        except ScenarioError as exc:
            key = next((k for k in ("g", "n_sites", "omega", "temperature") if k in exc.message), None)
            raise ScenarioError(exc.message, anchored(name, key)) from None

    inter = doc.get("interaction", {})
    try:
        matrix = inter.get("omega_matrix")
        if matrix is not None:
            if not isinstance(matrix, list) or not all(isinstance(r, list) for r in matrix):
                raise ScenarioError("omega_matrix must be a list of lists")
            matrix = tuple(tuple(_as_float(x, "omega_matrix") for x in row) for row in matrix)
        vector = inter.get("omega_vector")
        if vector is not None:
            if not isinstance(vector, list):
                raise ScenarioError("omega_vector must be a list")
            vector = tuple(_as_float(x, "omega_vector") for x in vector)
        variant = inter.get("variant", "none")
        if variant not in {v.value for v in Variant}:
            raise ScenarioError(f"unknown variant {variant!r}; expected type1, type2 or none")
        interaction = InteractionSpec(Variant(variant), matrix, vector)
        interaction.check_size(ensembles["hot"].n_sites)
    except ScenarioError as exc:
        key = next((k for k in ("omega_matrix", "omega_vector", "variant") if k in exc.message), None)
        raise ScenarioError(exc.message, anchored("interaction", key)) from None

    run = doc.get("run", {})
    try:
        mode = run.get("mode", "common")
        if mode not in {m.value for m in Mode}:
            raise ScenarioError(f"unknown mode {mode!r}; expected common, cascaded or independent")
        settings = RunSettings()
        if "tau" in run:
            taus = run["tau"] if isinstance(run["tau"], list) else [run["tau"]]
            taus = tuple(_as_float(t, "tau") for t in taus)
            if any(not t > 0 for t in taus):
                raise ScenarioError("tau values must be positive")
            settings = dataclasses.replace(settings, taus=taus)
        if "grid" in run:
            settings = dataclasses.replace(settings, grid=parse_grid(run["grid"]))
        if "scenarios" in run:
            tags = tuple(str(t) for t in run["scenarios"])
            for t in tags:
                if t not in SCENARIO_TAGS:
                    raise ScenarioError(f"unknown scenario tag {t!r} in scenarios")
            settings = dataclasses.replace(settings, scenarios=tags)
        if "time_normalization" in run:
            tn = run["time_normalization"]
            if tn not in _TIME_NORMALIZATIONS:
                raise ScenarioError(f"time_normalization must be one of {_TIME_NORMALIZATIONS}")
            settings = dataclasses.replace(settings, time_normalization=tn)
    except ScenarioError as exc:
        key = next((k for k in _SECTION_KEYS["run"] if k in exc.message), None)
        raise ScenarioError(exc.message, anchored("run", key)) from None

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            scenario = Scenario(ensembles["hot"], ensembles["cold"], interaction, Mode(mode))
    except ScenarioError as exc:
        raise ScenarioError(exc.message, anchored("cold", "n_sites")) from None
    if scenario.hot.temperature <= scenario.cold.temperature:
        warnings.warn("hot bath temperature does not exceed cold bath temperature", stacklevel=2)
    return Config(scenario, settings)


def parse_scenario(text: str) -> Scenario:
    return parse_config(text).scenario


def _as_float(x, name: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ScenarioError(f"{name} must be a number, got {x!r}")
    return float(x)


def _as_int(x, name: str) -> int:
    if isinstance(x, bool) or not isinstance(x, int):
        raise ScenarioError(f"{name} must be an integer, got {x!r}")
    return x


def _fmt(x) -> str:
    if isinstance(x, (tuple, list)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    if isinstance(x, str):
        return f'"{x}"'
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def render_config(config: Config | Scenario) -> str:
    """Inverse of :func:`parse_config`."""
    if isinstance(config, Scenario):
        config = Config(config)
    s, run = config.scenario, config.run
    lines = []
    for name, ens in (("hot", s.hot), ("cold", s.cold)):
        lines += [f"[{name}]", f"n_sites = {ens.n_sites}", f"omega = {_fmt(ens.omega)}",
                  f"g = {_fmt(ens.g)}", f"temperature = {_fmt(ens.temperature)}", ""]
    lines += ["[interaction]", f'variant = "{s.interaction.variant.value}"']
    if s.interaction.omega_matrix is not None:
        lines.append(f"omega_matrix = {_fmt(s.interaction.omega_matrix)}")
    if s.interaction.omega_vector is not None:
        lines.append(f"omega_vector = {_fmt(s.interaction.omega_vector)}")
    lo, hi, step = run.grid
    lines += ["", "[run]", f'mode = "{s.mode.value}"', f"tau = {_fmt(run.taus)}",
              f'grid = "{lo!r}:{hi!r}:{step!r}"', f"scenarios = {_fmt(list(run.scenarios))}",
              f'time_normalization = "{run.time_normalization}"', ""]
    return "\n".join(lines)


def render_scenario(s: Scenario) -> str:
    return render_config(Config(s))


def two_pair_scenario(mode: Mode | str = Mode.COMMON, variant: Variant | str = Variant.TYPE2,
                    omega_ratio: float = 1.5) -> Scenario:
    """The two-pair parameter set used throughout the regime and coherence sweeps."""
    return Scenario(
        hot=EnsembleSpec(2, omega_ratio, (0.5, 0.55), 2.0),
        cold=EnsembleSpec(2, 1.0, (0.5, 0.55), 1.0),
        interaction=InteractionSpec(Variant(variant), ((0.1, 0.1), (0.1, 0.1)), (0.1, 0.1)),
        mode=Mode(mode),
    )
