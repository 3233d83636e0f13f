"""Mechanical stimulus and the stimulus-to-rate map driving differentiation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cells import RateField
from .mesh import Mesh
from .poro import MechParams, PoroState, StressField, compute_stress

MODES = ("constant-rates", "stress-mapped")


class StaleStateError(RuntimeError):
    """Rates requested before any mechanics solution was supplied."""


@dataclass(frozen=True)
class StimulusParams:
    S_min: float = 1.0
    S_max: float = 3.0
    alpha_min: float = 0.05
    alpha_max: float = 0.1
    a_strain: float = 0.0375
    a_vel: float = 3e-3        # mm/s
    ramp: float = 0.1
    mode: str = "stress-mapped"
    # optional separate (alpha_min, alpha_max) for the dedifferentiation rate
    alpha2: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.S_min < self.S_max:
            raise ValueError(f"S_min must be < S_max, got {self.S_min}, {self.S_max}")
        if not self.alpha_min <= self.alpha_max:
            raise ValueError("alpha_min must be <= alpha_max")
        if not (self.a_strain > 0 and self.a_vel > 0):
            raise ValueError("scaling constants must be > 0")
        if not 0 < self.ramp <= 0.5:
            raise ValueError(f"ramp must lie in (0, 0.5], got {self.ramp}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha2 is not None:
            lo, hi = self.alpha2
            if not lo <= hi:
                raise ValueError("alpha2 bounds must be ordered")
            object.__setattr__(self, "alpha2", (float(lo), float(hi)))

    @property
    def ramp_width(self) -> float:
        return self.ramp * (self.S_max - self.S_min)


def compute_stimulus(stress: StressField, state: PoroState, mesh: Mesh,
                     params: StimulusParams, Phi: float) -> np.ndarray:
    """Per-element ``S = gamma_oct / a_strain + |u_p / Phi| / a_vel``."""
    seep = np.linalg.norm(state.seepage(mesh, Phi), axis=1)
    return stress.octahedral_shear_strain / params.a_strain + seep / params.a_vel


def trapezoid(S, S_min, S_max, lo, hi, ramp) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    w = ramp * (S_max - S_min)
    up = (S - S_min) / w
    down = (S_max - S) / w
    frac = np.clip(np.minimum(up, down), 0.0, 1.0)
    out = lo + (hi - lo) * frac
    # guard the ends against rounding so the bounds hold exactly
    return np.clip(out, lo, hi)


def rate_map(S, params: StimulusParams) -> RateField:
    S = np.asarray(S, dtype=float)
    a1 = trapezoid(S, params.S_min, params.S_max, params.alpha_min, params.alpha_max, params.ramp)
    if params.alpha2 is None:
        a2 = a1.copy()
    else:
        a2 = trapezoid(S, params.S_min, params.S_max, *params.alpha2, params.ramp)
    return RateField(a1, a2)


def occupancy(S, params: StimulusParams) -> float:
    """Share of elements whose stimulus lies in ``[S_min, S_max]``."""
    S = np.asarray(S)
    return float(np.mean((S >= params.S_min) & (S <= params.S_max))) if S.size else 0.0


class Coupler:
    """Loose coupling from mechanics snapshots to biology rates.

    ``n_mech`` is the number of biology steps between mechanics solves
    (``None`` freezes the first snapshot); the orchestrator asks
    :meth:`wants_mechanics` before every biology step. Solves fall on steps
    ``1, 1 + n_mech, 1 + 2 n_mech, ...`` and each one covers the next
    ``n_mech`` biology steps.
    """

    def __init__(self, mesh: Mesh, mech: MechParams, params: StimulusParams, *,
                 n_mech: int | None = 1, constant_rate: float | None = None):
        if n_mech is not None and n_mech < 1:
            raise ValueError("n_mech must be >= 1 or None")
        self.mesh, self.mech, self.params = mesh, mech, params
        self.n_mech = n_mech
        self.constant_rate = params.alpha_min if constant_rate is None else float(constant_rate)
        self.S: np.ndarray | None = None
        self.updates = 0

    def wants_mechanics(self, step: int) -> bool:
        if self.params.mode == "constant-rates":
            return False
        if self.S is None:
            return True
        return self.n_mech is not None and (step - 1) % self.n_mech == 0

    def update(self, state: PoroState) -> np.ndarray:
        stress = compute_stress(self.mesh, state, self.mech)
        self.S = compute_stimulus(stress, state, self.mesh, self.params, self.mech.Phi)
        self.updates += 1
        return self.S

    def set_stimulus(self, S) -> None:
        """Install a stimulus field directly (frozen-stress experiments)."""
        S = np.asarray(S, dtype=float)
        if S.shape != (self.mesh.n_elements,) or np.any(S < 0) or not np.all(np.isfinite(S)):
            raise ValueError("stimulus must be finite, nonnegative, one value per element")
        self.S = S
        self.updates += 1

    def rates(self) -> RateField:
        ne = self.mesh.n_elements
        if self.params.mode == "constant-rates":
            a2 = self.constant_rate if self.params.alpha2 is None else self.params.alpha2[0]
            return RateField.constant(ne, self.constant_rate, a2)
        if self.S is None:
            raise StaleStateError("stress-mapped rates requested before mechanics was solved")
        return rate_map(self.S, self.params)

    def occupancy(self) -> float:
        return 0.0 if self.S is None else occupancy(self.S, self.params)


def couple_step(state: PoroState, mesh: Mesh, mech: MechParams,
                params: StimulusParams) -> RateField:
    """Stress, stimulus and rates from one mechanics snapshot."""
    c = Coupler(mesh, mech, params)
    if params.mode == "stress-mapped":
        c.update(state)
    return c.rates()
