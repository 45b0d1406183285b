"""Multi-level Lindblad solver for light shifts and leakage during imaging.

Units are angular frequency (rad/s) and seconds.  A drive between ``lower``
and ``upper`` with detuning d places the upper level at the lower level's
rotating-frame energy minus d and contributes Omega*weight/2 to the
off-diagonal, so a far-detuned lower level shifts by Omega^2 / (4 d).  Frame
energies chain along ladders; the first listed level of each coupled group
sits at zero.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np
import yaml
from scipy.integrate import solve_ivp
from scipy.linalg import expm

MAX_DIM = 20
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class Level:
    name: str
    energy: float = 0.0


@dataclass(frozen=True)
class Drive:
    lower: str
    upper: str
    omega: float
    detuning: float = 0.0
    weight: float = 1.0


@dataclass(frozen=True)
class Decay:
    upper: str
    lower: str
    rate: float


@dataclass
class LevelSystem:
    levels: list
    drives: list = field(default_factory=list)
    decays: list = field(default_factory=list)
    sink: str | None = None

    def __post_init__(self):
        self.validate()

    @property
    def dim(self) -> int:
        return len(self.levels)

    @property
    def names(self) -> list:
        return [lv.name for lv in self.levels]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown level {name!r}") from None

    def validate(self):
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"level count must be in [1, {MAX_DIM}], got {self.dim}")
        if len(set(self.names)) != self.dim:
            raise ValueError("duplicate level names")
        for lv in self.levels:
            if not np.isfinite(lv.energy) or isinstance(lv.energy, complex):
                raise ValueError(f"level {lv.name} energy must be a finite real number")
        for d in self.drives:
            self.index(d.lower), self.index(d.upper)
            if d.lower == d.upper:
                raise ValueError("a drive must couple two different levels")
            if not all(np.isfinite(v) and np.isreal(v) for v in (d.omega, d.detuning, d.weight)):
                raise ValueError("drive parameters must be finite reals")
        for g in self.decays:
            self.index(g.upper), self.index(g.lower)
            if not g.rate >= 0:
                raise ValueError(f"decay rate must be >= 0, got {g.rate}")
        if self.sink is not None:
            self.index(self.sink)
        self.frame_energies()

    def frame_energies(self) -> np.ndarray:
        """Rotating-frame offsets from the drive detunings, one per level."""
        n = self.dim
        adj = [[] for _ in range(n)]
        for d in self.drives:
            i, j = self.index(d.lower), self.index(d.upper)
            adj[i].append((j, -d.detuning))
            adj[j].append((i, d.detuning))
        frame = np.full(n, np.nan)
        for root in range(n):
            if not np.isnan(frame[root]):
                continue
            frame[root] = 0.0
            stack = [root]
            while stack:
                i = stack.pop()
                for j, step in adj[i]:
                    want = frame[i] + step
                    if np.isnan(frame[j]):
                        frame[j] = want
                        stack.append(j)
                    elif abs(frame[j] - want) > 1e-12 * (1 + abs(frame[i]) + abs(step) + abs(frame[j])):
                        raise ValueError("drive detunings around a closed loop of levels are inconsistent")
        return frame

    def hamiltonian(self) -> np.ndarray:
        H = np.diag(np.array([float(lv.energy) for lv in self.levels]) + self.frame_energies()).astype(complex)
        for d in self.drives:
            i, j = self.index(d.lower), self.index(d.upper)
            H[i, j] += d.omega * d.weight / 2
            H[j, i] += d.omega * d.weight / 2
        assert np.allclose(H, H.conj().T)
        return H

    def jump_operators(self):
        n = self.dim
        for g in self.decays:
            J = np.zeros((n, n))
            J[self.index(g.lower), self.index(g.upper)] = 1.0
            yield g.rate, J

    def liouvillian(self) -> np.ndarray:
        """Superoperator acting on row-major vec(rho)."""
        n = self.dim
        H = self.hamiltonian()
        eye = np.eye(n)
        L = -1j * (np.kron(H, eye) - np.kron(eye, H.T))
        for rate, J in self.jump_operators():
            if rate == 0:
                continue
            JJ = J.T @ J
            L += rate * (np.kron(J, J) - 0.5 * np.kron(JJ, eye) - 0.5 * np.kron(eye, JJ.T))
        return L

    def to_dict(self) -> dict:
        return {
            "levels": [{"name": lv.name, "energy": lv.energy} for lv in self.levels],
            "drives": [vars(d) for d in self.drives],
            "decays": [vars(g) for g in self.decays],
            "sink": self.sink,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelSystem":
        return cls(
            [Level(**lv) for lv in d["levels"]],
            [Drive(**x) for x in d.get("drives", [])],
            [Decay(**x) for x in d.get("decays", [])],
            d.get("sink"),
        )


@dataclass
class EvolutionResult:
    times: np.ndarray
    populations: np.ndarray  # (len(times), dim)
    final: np.ndarray
    leakage: np.ndarray  # sink population per output time (zeros without a sink)
    trace_drift: float  # max |tr(rho) - 1| over output times
    min_eigenvalue: float  # smallest eigenvalue of rho over output times
    names: list
    states: np.ndarray | None = None  # (len(times), dim, dim) when requested


def initial_state(system: LevelSystem, state) -> np.ndarray:
    n = system.dim
    if isinstance(state, str):
        rho = np.zeros((n, n), dtype=complex)
        i = system.index(state)
        rho[i, i] = 1
        return rho
    a = np.asarray(state, dtype=complex)
    if a.shape == (n,):
        a = a / np.linalg.norm(a)
        return np.outer(a, a.conj())
    if a.shape == (n, n):
        return a.copy()
    raise ValueError(f"initial state must be a level name, a {n}-vector or an {n}x{n} matrix")


def _affine_generator(L: np.ndarray, n: int) -> tuple[np.ndarray, int]:
    """Generator acting on (vec(rho) without the last population, 1).

    The last population is eliminated through tr(rho) = 1, so trace
    preservation is exact by construction instead of up to roundoff.
    """
    k = n * n - 1
    diag = np.arange(n - 1) * (n + 1)
    c = np.zeros(k)
    c[diag] = 1.0
    A = L[:k, :k] - np.outer(L[:k, k], c)
    M = np.zeros((n * n, n * n), dtype=complex)
    M[:k, :k] = A
    M[:k, k] = L[:k, k]
    return M, k


def _from_affine(Y: np.ndarray, n: int) -> np.ndarray:
    """Rebuild vec(rho) rows from rows of the affine coordinates."""
    out = Y.copy()
    diag = np.arange(n - 1) * (n + 1)
    out[:, -1] = 1.0 - Y[:, diag].sum(axis=1)
    return out


def _to_affine(rho0: np.ndarray) -> np.ndarray:
    y = rho0.ravel().copy()
    y[-1] = 1.0
    return y


def evolve(
    system: LevelSystem,
    initial,
    duration: float,
    n_out: int = 201,
    method: str = "rk",
    rtol: float = 1e-10,
    atol: float = 1e-12,
    keep_states: bool = False,
) -> EvolutionResult:
    """Integrate the Lindblad equation; ``method`` is "rk" (adaptive DOP853) or "expm".

    Initial states must have unit trace.
    """
    if duration < 0:
        raise ValueError("duration must be >= 0")
    n = system.dim
    rho0 = initial_state(system, initial)
    if abs(np.trace(rho0) - 1) > 1e-12:
        raise ValueError("initial state must have unit trace")
    M, _ = _affine_generator(system.liouvillian(), n)
    y0 = _to_affine(rho0)
    times = np.linspace(0.0, duration, max(2, n_out))
    if method == "rk":
        sol = solve_ivp(
            lambda t, y: M @ y, (0.0, duration), y0, method="DOP853", t_eval=times, rtol=rtol, atol=atol
        )
        if sol.status != 0:
            raise RuntimeError(f"integration failed: {sol.message}")
        Y = sol.y.T
    elif method == "expm":
        step = expm(M * (times[1] - times[0]))
        Y = np.empty((len(times), n * n), dtype=complex)
        Y[0] = y0
        for k in range(1, len(times)):
            Y[k] = step @ Y[k - 1]
    else:
        raise ValueError(f"unknown method {method!r}")
    states = _from_affine(Y, n).reshape(len(times), n, n)
    pops = np.real(np.einsum("kii->ki", states))
    traces = np.real(np.einsum("kii->k", states))
    herm = 0.5 * (states + np.conj(np.transpose(states, (0, 2, 1))))
    min_eig = float(min(np.linalg.eigvalsh(h).min() for h in herm))
    sink = pops[:, system.index(system.sink)] if system.sink else np.zeros(len(times))
    return EvolutionResult(
        times,
        pops,
        states[-1],
        sink,
        float(np.max(np.abs(traces - 1))),
        min_eig,
        system.names,
        states if keep_states else None,
    )


def final_state(system: LevelSystem, initial, duration: float) -> np.ndarray:
    """Density matrix after ``duration`` by one matrix exponential (stiff systems)."""
    n = system.dim
    rho0 = initial_state(system, initial)
    if abs(np.trace(rho0) - 1) > 1e-12:
        raise ValueError("initial state must have unit trace")
    M, _ = _affine_generator(system.liouvillian(), n)
    y = expm(M * duration) @ _to_affine(rho0)
    return _from_affine(y[None, :], n)[0].reshape(n, n)


def unitary_evolve(system: LevelSystem, psi0, times) -> np.ndarray:
    """Closed-system states exp(-iHt) psi0, ignoring decays."""
    H = system.hamiltonian()
    w, V = np.linalg.eigh(H)
    psi0 = np.asarray(psi0, dtype=complex)
    c = V.conj().T @ psi0
    return np.array([V @ (np.exp(-1j * w * t) * c) for t in np.atleast_1d(times)])


def stark_shift(system: LevelSystem, level: str, duration: float, n_out: int = 2001) -> float:
    """Time-averaged energy shift of ``level`` from the phase it gains against an uncoupled reference."""
    ref = "__ref__"
    aug = LevelSystem(list(system.levels) + [Level(ref, 0.0)], list(system.drives), list(system.decays), system.sink)
    vec = np.zeros(aug.dim, dtype=complex)
    vec[aug.index(level)] = 1
    vec[aug.index(ref)] = 1
    res = evolve(aug, vec, duration, n_out=n_out, keep_states=True)
    i, r = aug.index(level), aug.index(ref)
    phase = np.unwrap(np.angle(res.states[:, i, r]))
    slope = np.polyfit(res.times, phase, 1)[0]
    i = system.index(level)
    bare = system.levels[i].energy + system.frame_energies()[i]
    return float(-slope - bare)


def leakage_estimate(extinction: float, omega: float, delta: float, gamma: float, t: float) -> float:
    """Far-detuned leakage population: extinction * (Omega/Delta)^2 * Gamma * t."""
    if delta == 0:
        raise ValueError("detuning must be nonzero")
    return extinction * (omega / delta) ** 2 * gamma * t


def _map_point(args):
    builder, dr, di, duration, initial = args
    system = builder(dr, di)
    rho = final_state(system, initial, duration)
    return float(np.real(rho[system.index(system.sink), system.index(system.sink)]))


def leakage_map(
    builder: Callable[[float, float], LevelSystem],
    register_detunings,
    imaging_detunings,
    duration: float = 7e-3,
    initial: str = "g1",
    threads: int = 1,
) -> np.ndarray:
    """Sink population after ``duration`` on a (register, imaging) detuning grid."""
    reg = np.asarray(register_detunings, dtype=float)
    img = np.asarray(imaging_detunings, dtype=float)
    tasks = [(builder, dr, di, duration, initial) for dr in reg for di in img]
    if threads > 1:
        with ProcessPoolExecutor(threads) as pool:
            out = list(pool.map(_map_point, tasks))
    else:
        out = [_map_point(t) for t in tasks]
    return np.array(out).reshape(len(reg), len(img))


def write_leakage_csv(path, register_detunings, imaging_detunings, loss) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta_register_rad_s", "delta_imaging_rad_s", "loss"])
        for i, dr in enumerate(register_detunings):
            for j, di in enumerate(imaging_detunings):
                w.writerow([f"{dr:.9g}", f"{di:.9g}", f"{loss[i, j]:.9e}"])


# default imaging model ---------------------------------------------------------------


@dataclass(frozen=True)
class ImagingModel:
    """Parameters of the reduced register imaging model (see levels_default.yaml)."""

    gamma_3p1: float
    omega_img: float
    delta_img: float
    omega_423: float
    delta_3s1: float
    weight_33: float
    weight_31: float
    delta_3s1_31: float
    gamma_3s1: float
    branch_leak: float
    register_scale: float = 1.0  # 423 nm field amplitude relative to the register tweezers

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ImagingModel":
        if path is None:
            text = resources.files("mcmsim.data").joinpath("levels_default.yaml").read_text()
        else:
            text = Path(path).read_text()
        d = yaml.safe_load(text)
        return cls(**{k: float(v["value"]) for k, v in d["parameters"].items()})

    def with_(self, **kw) -> "ImagingModel":
        return replace(self, **kw)

    def system(self, d_register: float = 0.0, d_imaging: float = 0.0) -> LevelSystem:
        """Register atom in |1>, imaged on 3P1 |3/2,3/2>, dressed by 423 nm light towards 8s 3S1."""
        om = self.omega_423 * self.register_scale
        levels = [Level("g1"), Level("p33"), Level("p31"), Level("s_a"), Level("s_b"), Level("leak")]
        drives = [
            Drive("g1", "p33", self.omega_img, self.delta_img + d_imaging),
            Drive("p33", "s_a", om, self.delta_3s1 + d_register, self.weight_33),
            Drive("p31", "s_b", om, self.delta_3s1_31 + d_register, self.weight_31),
        ]
        b = self.branch_leak
        decays = [
            Decay("p33", "g1", self.gamma_3p1),
            Decay("p31", "g1", self.gamma_3p1),
            Decay("s_a", "p33", self.gamma_3s1 * (1 - b)),
            Decay("s_a", "leak", self.gamma_3s1 * b),
            Decay("s_b", "p31", self.gamma_3s1 * (1 - b)),
            Decay("s_b", "leak", self.gamma_3s1 * b),
        ]
        return LevelSystem(levels, drives, decays, sink="leak")


def default_builder(register_scale: float = 1.0, path=None) -> Callable[[float, float], LevelSystem]:
    model = ImagingModel.load(path).with_(register_scale=register_scale)
    return model.system
