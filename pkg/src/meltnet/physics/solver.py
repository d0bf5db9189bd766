"""Explicit finite-difference conduction solver with a moving Gaussian source.

Grid axes are ``(x, y, z)`` with ``z = 0`` the top (irradiated) surface and z
growing downward. The beam travels along +x. Cells are cubes of edge
``cell_size`` and values live at cell centres.

The update is written in conservative enthalpy form,
``E_new = E + dt * (div(k grad T) + source)``, followed by ``T = E^-1(E_new)``,
so the summed enthalpy changes only through the source and vaporization.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..exceptions import ConfigurationError, SimulationInstabilityError
from .materials import ANCHOR_LOW, EnthalpyModel, MaterialProperties, get_material, interpolate_property

SOLVER_VERSION = "1"
STABILITY_SAFETY = 0.9
ABSORPTIVITY_CEILING = 0.70
ABSORPTIVITY_RATE = 0.66


def gaussian_flux(power, beam_radius, r):
    """Surface heat flux P / (pi r0^2) * exp(-2 r^2 / r0^2) in W/m^2.

    Integrated over the plane this gives P / 2; :class:`SimulationConfig`
    has a ``renormalize_flux`` switch that doubles it to deliver P.
    """
    r = np.asarray(r, dtype=np.float64)
    return power / (beam_radius**2 * math.pi) * np.exp(-2.0 * r**2 / beam_radius**2)


def scaling_parameter_verbatim(min_absorptivity, power, velocity, beam_radius, diffusivity, melting_enthalpy):
    """The keyhole scaling variable exactly as printed, radical factor included.

    In SI units this lands around 1e-7 for ordinary process parameters, so the
    resulting absorptivity is essentially zero.
    """
    a_m, p, v, r0, d, h_m = min_absorptivity, power, velocity, beam_radius, diffusivity, melting_enthalpy
    return (a_m * p * d) / (math.pi * v * h_m * r0**2 * math.sqrt(d * r0**2 / v)) * (r0 * math.sqrt(d * r0 / v))


def scaling_parameter_normalized_enthalpy(min_absorptivity, power, velocity, beam_radius, diffusivity, melting_enthalpy):
    """Dimensionless normalized enthalpy A_m P / (pi H_m sqrt(D v r0^3))."""
    return (min_absorptivity * power) / (
        math.pi * melting_enthalpy * math.sqrt(diffusivity * velocity * beam_radius**3)
    )


SCALING_MODELS = {
    "verbatim": scaling_parameter_verbatim,
    "normalized_enthalpy": scaling_parameter_normalized_enthalpy,
}


def absorptivity_from_scaling(y):
    return ABSORPTIVITY_CEILING * (1.0 - np.exp(-ABSORPTIVITY_RATE * np.asarray(y, dtype=np.float64)))


def absorptivity(material: MaterialProperties, power, velocity, beam_radius, diffusivity=None, model: str = "verbatim"):
    """Keyhole-enhanced absorptivity A = 0.70 (1 - exp(-0.66 y)).

    ``diffusivity`` defaults to the interpolated value at the melting point.
    ``model`` picks the scaling variable y (see :data:`SCALING_MODELS`).
    """
    if velocity <= 0:
        raise ConfigurationError(f"scan velocity must be positive, got {velocity}")
    if beam_radius <= 0:
        raise ConfigurationError(f"beam radius must be positive, got {beam_radius}")
    if power < 0:
        raise ConfigurationError(f"laser power must be non-negative, got {power}")
    if diffusivity is None:
        rho, cp, k = interpolate_property(material, material.t_melt)
        diffusivity = k / (rho * cp)
    try:
        scaling = SCALING_MODELS[model]
    except KeyError:
        raise ConfigurationError(f"unknown absorptivity model {model!r}") from None
    y = scaling(material.min_absorptivity, power, velocity, beam_radius, diffusivity, material.melting_enthalpy)
    return float(absorptivity_from_scaling(y))


@dataclass
class SimulationConfig:
    """One process case. Lengths in metres, times in seconds, power in watts.

    ``beam_start`` is the initial beam x position in cells; ``beam_y`` defaults
    to the y mid-plane.
    """

    power: float = 200.0
    velocity: float = 0.8
    material: str = "Ti64"
    nx: int = 128
    ny: int = 64
    nz: int = 32
    cell_size: float = 10e-6
    beam_radius: float = 50e-6
    frame_interval: float = 5e-6
    frame_count: int = 100
    ambient_temperature: float = 293.0
    beam_start: float = 20.0
    beam_y: float | None = None
    absorptivity_model: str = "normalized_enthalpy"
    fixed_absorptivity: float | None = None
    renormalize_flux: bool = False
    constant_properties: bool = False
    latent_heat: bool = True
    carve: bool = True
    allow_exit: bool = False

    def validate(self) -> None:
        if self.cell_size <= 0:
            raise ConfigurationError("cell_size must be positive")
        if self.frame_count < 1:
            raise ConfigurationError("frame_count must be >= 1")
        if min(self.nx, self.ny, self.nz) < 1:
            raise ConfigurationError("grid dimensions must be >= 1")
        if self.beam_radius <= 0 or self.velocity <= 0 or self.frame_interval <= 0:
            raise ConfigurationError("beam_radius, velocity and frame_interval must be positive")
        if self.power < 0:
            raise ConfigurationError("power must be non-negative")
        if self.absorptivity_model not in SCALING_MODELS:
            raise ConfigurationError(f"unknown absorptivity model {self.absorptivity_model!r}")
        if not self.allow_exit:
            end = self.beam_x(self.frame_count * self.frame_interval)
            if not 0.0 <= self.beam_start * self.cell_size <= self.nx * self.cell_size or end > self.nx * self.cell_size:
                raise ConfigurationError(
                    f"beam leaves the domain (ends at x={end * 1e6:.1f} um, domain {self.nx * self.cell_size * 1e6:.1f} um);"
                    " set allow_exit to permit it"
                )

    def beam_x(self, t: float) -> float:
        return self.beam_start * self.cell_size + self.velocity * t

    @property
    def beam_y_position(self) -> float:
        cells = self.ny / 2.0 if self.beam_y is None else self.beam_y
        return cells * self.cell_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        return cls(**d)


@dataclass
class SimulationState:
    temperature: np.ndarray
    enthalpy: np.ndarray
    void: np.ndarray
    time: float = 0.0

    @classmethod
    def ambient(cls, config: SimulationConfig) -> "SimulationState":
        shape = (config.nx, config.ny, config.nz)
        return cls(
            temperature=np.full(shape, float(config.ambient_temperature)),
            enthalpy=np.zeros(shape),
            void=np.zeros(shape, dtype=bool),
        )


def max_diffusivity(material: MaterialProperties, config: SimulationConfig | None = None) -> float:
    """Largest k / (rho Cp) over [298 K, T_vap] (latent heat not included)."""
    if config is not None and config.constant_properties:
        rho, cp, k = interpolate_property(material, ANCHOR_LOW)
        return k / (rho * cp)
    t = np.concatenate([np.linspace(ANCHOR_LOW, material.t_vaporization, 4001), [1923.0]])
    rho, cp, k = interpolate_property(material, t)
    return float(np.max(k / (rho * cp)))


def stable_timestep(config: SimulationConfig, material: MaterialProperties, safety: float = STABILITY_SAFETY) -> float:
    return safety * config.cell_size**2 / (6.0 * max_diffusivity(material, config))


def substep_count(config: SimulationConfig, material: MaterialProperties) -> int:
    return math.ceil(config.frame_interval / stable_timestep(config, material))


class HeatSolver:
    """Holds the per-case constants (property model, source footprint, dt)."""

    def __init__(self, config: SimulationConfig, material: MaterialProperties | None = None):
        config.validate()
        self.config = config
        self.material = material if material is not None else get_material(config.material)
        self.model = EnthalpyModel(
            self.material,
            reference_temperature=config.ambient_temperature,
            latent_heat=config.latent_heat,
            constant_properties=config.constant_properties,
        )
        self.substeps = substep_count(config, self.material)
        self.dt = config.frame_interval / self.substeps
        if config.fixed_absorptivity is not None:
            self.absorptivity = float(config.fixed_absorptivity)
        else:
            self.absorptivity = absorptivity(
                self.material, config.power, config.velocity, config.beam_radius, model=config.absorptivity_model
            )
        dx = config.cell_size
        self._xc = (np.arange(config.nx) + 0.5) * dx
        # y offsets from the beam line built in index units first so mirrored
        # cells get bit-identical distances
        yb_cells = config.beam_y_position / dx
        self._dy2 = ((np.arange(config.ny) + 0.5 - yb_cells) * dx) ** 2

    def absorbed_flux(self, t: float) -> np.ndarray:
        """(nx, ny) absorbed surface flux in W/m^2 with the beam at time ``t``."""
        c = self.config
        dx2 = (self._xc - c.beam_x(t)) ** 2
        r = np.sqrt(dx2[:, None] + self._dy2[None, :])
        q = gaussian_flux(c.power, c.beam_radius, r) * self.absorptivity
        if c.renormalize_flux:
            q = 2.0 * q
        return q

    def step(self, state: SimulationState, dt: float | None = None) -> SimulationState:
        """Advance one explicit substep in place and return ``state``."""
        c = self.config
        dt = self.dt if dt is None else dt
        dx = c.cell_size
        T, E, void = state.temperature, state.enthalpy, state.void
        solid = ~void
        k = self.model.conductivity(T)

        heat = np.zeros_like(T)
        for axis in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[axis] = slice(None, -1)
            hi[axis] = slice(1, None)
            lo, hi = tuple(lo), tuple(hi)
            open_face = solid[lo] & solid[hi]
            flux = np.where(open_face, 0.5 * (k[lo] + k[hi]) * (T[hi] - T[lo]), 0.0)
            heat[lo] += flux
            heat[hi] -= flux
        heat /= dx * dx

        if c.power > 0:
            q = self.absorbed_flux(state.time + 0.5 * dt)
            top = np.argmax(solid, axis=2)
            has_metal = solid.any(axis=2)
            ix, iy = np.nonzero(has_metal)
            heat[ix, iy, top[ix, iy]] += q[ix, iy] / dx

        E_new = np.where(solid, E + dt * heat, 0.0)
        T_new = np.where(solid, self.model.temperature(E_new), c.ambient_temperature)
        state.enthalpy = E_new
        state.temperature = T_new
        state.time += dt
        self._check(state)
        return state

    def _check(self, state: SimulationState) -> None:
        T = state.temperature
        limit = 10.0 * self.material.t_vaporization
        bad = ~np.isfinite(T) | (np.abs(T) > limit)
        if bad.any():
            where = tuple(int(i) for i in np.argwhere(bad)[0])
            raise SimulationInstabilityError(
                f"unstable update at t={state.time:.3e} s, cell {where}: T={T[where]!r} "
                f"(P={self.config.power} W, V={self.config.velocity} m/s, dt={self.dt:.3e} s)"
            )


def step_heat_equation(state: SimulationState, config: SimulationConfig, material: MaterialProperties, dt: float) -> SimulationState:
    return HeatSolver(config, material).step(state, dt)


def carve_keyhole(state: SimulationState, material: MaterialProperties, ambient_temperature: float = 293.0) -> SimulationState:
    """Turn every metal cell hotter than T_vap into void at ambient temperature."""
    hot = (~state.void) & (state.temperature > material.t_vaporization)
    if hot.any():
        state.void |= hot
        state.temperature[hot] = ambient_temperature
        state.enthalpy[hot] = 0.0
    return state


@dataclass
class CaseResult:
    config: SimulationConfig
    frames: np.ndarray  # (frames, nx, ny, nz) float32 kelvin
    voids: np.ndarray  # (frames, nx, ny, nz) bool
    substeps: int
    dt: float
    absorptivity: float
    material: MaterialProperties = field(repr=False, default=None)

    def frame_time(self, index: int) -> float:
        return (index + 1) * self.config.frame_interval

    def beam_cell(self, index: int) -> tuple[float, float]:
        """Beam centre in (fractional) cell coordinates at frame ``index``."""
        c = self.config
        return c.beam_x(self.frame_time(index)) / c.cell_size, c.beam_y_position / c.cell_size

    def metadata(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "material": self.material.to_dict(),
            "solver_version": SOLVER_VERSION,
            "substeps_per_frame": self.substeps,
            "substep_dt": self.dt,
            "absorptivity": self.absorptivity,
            "frame_times": [self.frame_time(i) for i in range(self.config.frame_count)],
        }


def run_case(config: SimulationConfig, material: MaterialProperties | None = None) -> CaseResult:
    """Simulate one case and return every frame at float32 precision.

    Frame k holds the state at t = (k + 1) * frame_interval. Carving (if
    enabled) is applied at each frame boundary before the frame is recorded.
    """
    solver = HeatSolver(config, material)
    state = SimulationState.ambient(config)
    shape = (config.frame_count, config.nx, config.ny, config.nz)
    frames = np.empty(shape, dtype=np.float32)
    voids = np.empty(shape, dtype=bool)
    for f in range(config.frame_count):
        for s in range(solver.substeps):
            # keep the clock exact: accumulated dt drifts from (f+1)*interval
            state.time = f * config.frame_interval + s * solver.dt
            try:
                solver.step(state)
            except SimulationInstabilityError as exc:
                raise SimulationInstabilityError(f"frame {f}: {exc}") from exc
        state.time = (f + 1) * config.frame_interval
        if config.carve:
            carve_keyhole(state, solver.material, config.ambient_temperature)
        frames[f] = state.temperature
        voids[f] = state.void
    return CaseResult(config, frames, voids, solver.substeps, solver.dt, solver.absorptivity, solver.material)
