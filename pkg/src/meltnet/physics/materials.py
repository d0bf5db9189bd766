"""Alloy property tables and the temperature-dependent property model."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..exceptions import ConfigurationError

ANCHOR_LOW = 298.0
ANCHOR_HIGH = 1923.0


@dataclass(frozen=True)
class MaterialProperties:
    """Two-anchor property table for one alloy.

    Density, specific heat and conductivity are given at 298 K and 1923 K and
    interpolated linearly in between (clamped outside). ``t_vaporization``,
    ``min_absorptivity`` and the default ``melting_enthalpy`` are modelling
    choices, not measured data.
    """

    name: str
    density_298: float
    density_1923: float
    specific_heat_298: float
    specific_heat_1923: float
    conductivity_298: float
    conductivity_1923: float
    t_liquidus: float
    t_solidus: float
    latent_fusion: float
    latent_vaporization: float
    t_vaporization: float
    min_absorptivity: float = 0.3
    melting_enthalpy: float | None = None

    def __post_init__(self):
        numeric = {k: v for k, v in self.__dict__.items() if k != "name" and v is not None}
        bad = [k for k, v in numeric.items() if not v > 0]
        if bad:
            raise ConfigurationError(f"{self.name}: non-positive material parameters {bad}")
        if not self.t_vaporization > max(self.t_liquidus, self.t_solidus) > ANCHOR_LOW:
            raise ConfigurationError(f"{self.name}: need t_vaporization > max(T_L, T_S) > 298 K")
        if self.melting_enthalpy is None:
            mean_cp = 0.5 * (self.specific_heat_298 + self.specific_heat_1923)
            h_m = self.density_298 * (mean_cp * (self.t_melt - ANCHOR_LOW) + self.latent_fusion)
            object.__setattr__(self, "melting_enthalpy", h_m)

    @property
    def t_melt(self) -> float:
        """Melting point used for melt masks: mean of liquidus and solidus."""
        return 0.5 * (self.t_liquidus + self.t_solidus)

    @property
    def mushy_range(self) -> tuple[float, float]:
        # the SS316L table lists solidus above liquidus, so order them here
        return min(self.t_liquidus, self.t_solidus), max(self.t_liquidus, self.t_solidus)

    def with_overrides(self, **kwargs) -> "MaterialProperties":
        if "melting_enthalpy" not in kwargs:
            kwargs["melting_enthalpy"] = None
        return replace(self, **kwargs)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


TI64 = MaterialProperties(
    name="Ti64",
    density_298=4420.0,
    density_1923=3920.0,
    specific_heat_298=546.0,
    specific_heat_1923=831.0,
    conductivity_298=7.0,
    conductivity_1923=33.4,
    t_liquidus=1923.0,
    t_solidus=1873.0,
    latent_fusion=2.86e5,
    latent_vaporization=6.0e4,
    t_vaporization=3315.0,
)

SS316L = MaterialProperties(
    name="SS316L",
    density_298=7950.0,
    density_1923=7249.0,
    specific_heat_298=470.0,
    specific_heat_1923=726.0,
    conductivity_298=13.4,
    conductivity_1923=29.0,
    t_liquidus=1694.0,
    t_solidus=1717.0,
    latent_fusion=2.6e5,
    latent_vaporization=6.0e4,
    t_vaporization=3090.0,
)

MATERIALS = {"Ti64": TI64, "SS316L": SS316L}


def get_material(name: str) -> MaterialProperties:
    key = {k.lower(): k for k in MATERIALS}.get(name.lower().replace("-", "").replace("ti6al4v", "ti64"))
    if key is None:
        raise ConfigurationError(f"unknown material {name!r}; known: {sorted(MATERIALS)}")
    return MATERIALS[key]


def _lerp(t, low: float, high: float):
    frac = (np.clip(t, ANCHOR_LOW, ANCHOR_HIGH) - ANCHOR_LOW) / (ANCHOR_HIGH - ANCHOR_LOW)
    return low + frac * (high - low)


def interpolate_property(material: MaterialProperties, temperature):
    """(density, specific heat, conductivity) at ``temperature``.

    Linear between the 298 K and 1923 K anchors and constant outside them.
    Works elementwise on arrays.
    """
    t = np.asarray(temperature, dtype=np.float64)
    rho = _lerp(t, material.density_298, material.density_1923)
    cp = _lerp(t, material.specific_heat_298, material.specific_heat_1923)
    k = _lerp(t, material.conductivity_298, material.conductivity_1923)
    if np.ndim(rho) == 0:
        return float(rho), float(cp), float(k)
    return rho, cp, k


def thermal_diffusivity(material: MaterialProperties, temperature):
    rho, cp, k = interpolate_property(material, temperature)
    return k / (rho * cp)


@dataclass
class EnthalpyModel:
    """Volumetric enthalpy E(T) = integral from T_ref to T of rho(s) * Cp_eff(s) ds.

    ``Cp_eff`` adds ``L_f / (T_hi - T_lo)`` over the mushy interval (apparent
    heat capacity). With ``constant_properties`` every property is frozen at
    its 298 K value and latent heat is dropped, which makes E linear in T.

    E is piecewise cubic in T; :meth:`temperature` inverts it exactly per piece
    with a few Newton steps.
    """

    material: MaterialProperties
    reference_temperature: float = 293.0
    latent_heat: bool = True
    constant_properties: bool = False
    _breaks: np.ndarray = field(init=False, repr=False)
    _polys: list = field(init=False, repr=False)
    _e_breaks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = self.material
        lo, hi = m.mushy_range
        if self.constant_properties:
            breaks = [ANCHOR_LOW]
        else:
            breaks = [ANCHOR_LOW, ANCHOR_HIGH]
            if self.latent_heat:
                breaks += [lo, hi]
        self._breaks = np.array(sorted(set(breaks)))
        # interval i spans (breaks[i-1], breaks[i]); interval 0 is below the first break
        polys = []
        edges = np.concatenate([[-np.inf], self._breaks, [np.inf]])
        for a, b in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (a + b) if np.isfinite(a) and np.isfinite(b) else (b - 1.0 if np.isfinite(b) else a + 1.0)
            polys.append(self._integrand_poly(mid).integ())
        # shift antiderivatives so E is continuous and E(reference) == 0
        for i, b in enumerate(self._breaks):
            polys[i + 1] = polys[i + 1] - (polys[i + 1](b) - polys[i](b))
        self._polys = polys
        offset = self._eval_raw(np.array([self.reference_temperature]))[0]
        self._polys = [p - offset for p in polys]
        self._e_breaks = self._eval_raw(self._breaks)

    def _integrand_poly(self, t_mid: float) -> np.polynomial.Polynomial:
        m = self.material
        P = np.polynomial.Polynomial
        if self.constant_properties:
            return P([m.density_298 * m.specific_heat_298])
        span = ANCHOR_HIGH - ANCHOR_LOW
        if t_mid <= ANCHOR_LOW:
            rho, cp = P([m.density_298]), P([m.specific_heat_298])
        elif t_mid >= ANCHOR_HIGH:
            rho, cp = P([m.density_1923]), P([m.specific_heat_1923])
        else:
            drho = (m.density_1923 - m.density_298) / span
            dcp = (m.specific_heat_1923 - m.specific_heat_298) / span
            rho = P([m.density_298 - drho * ANCHOR_LOW, drho])
            cp = P([m.specific_heat_298 - dcp * ANCHOR_LOW, dcp])
        lo, hi = m.mushy_range
        if self.latent_heat and lo < t_mid < hi:
            cp = cp + m.latent_fusion / (hi - lo)
        return rho * cp

    def _interval(self, t: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._breaks, t, side="left")

    def _eval_raw(self, t: np.ndarray) -> np.ndarray:
        idx = self._interval(t)
        out = np.empty_like(t, dtype=np.float64)
        for i, p in enumerate(self._polys):
            sel = idx == i
            if sel.any():
                out[sel] = p(t[sel])
        return out

    def enthalpy(self, temperature) -> np.ndarray:
        t = np.asarray(temperature, dtype=np.float64)
        return self._eval_raw(t.reshape(-1)).reshape(t.shape)

    def heat_capacity(self, temperature) -> np.ndarray:
        """rho(T) * Cp_eff(T), the derivative dE/dT."""
        t = np.asarray(temperature, dtype=np.float64)
        flat = t.reshape(-1)
        idx = self._interval(flat)
        out = np.empty_like(flat)
        for i, p in enumerate(self._polys):
            sel = idx == i
            if sel.any():
                out[sel] = p.deriv()(flat[sel])
        return out.reshape(t.shape)

    def conductivity(self, temperature) -> np.ndarray:
        if self.constant_properties:
            return np.full(np.shape(temperature), self.material.conductivity_298)
        return _lerp(np.asarray(temperature, dtype=np.float64), self.material.conductivity_298, self.material.conductivity_1923)

    def temperature(self, enthalpy) -> np.ndarray:
        """Inverse of :meth:`enthalpy`."""
        e = np.asarray(enthalpy, dtype=np.float64)
        flat = e.reshape(-1)
        idx = np.searchsorted(self._e_breaks, flat, side="left")
        out = np.empty_like(flat)
        edges = np.concatenate([[-np.inf], self._breaks, [np.inf]])
        for i, p in enumerate(self._polys):
            sel = idx == i
            if not sel.any():
                continue
            target = flat[sel]
            a, b = edges[i], edges[i + 1]
            dp = p.deriv()
            if p.degree() <= 1:
                out[sel] = (target - p.coef[0]) / p.coef[1]
                continue
            # start from the chord between the interval ends, then Newton
            ea, eb = p(a), p(b)
            t = a + (target - ea) * (b - a) / (eb - ea)
            for _ in range(8):
                step = (p(t) - target) / dp(t)
                t = np.clip(t - step, a, b)
                if np.all(np.abs(step) <= 1e-12 * np.maximum(np.abs(t), 1.0)):
                    break
            out[sel] = t
        return out.reshape(e.shape)
