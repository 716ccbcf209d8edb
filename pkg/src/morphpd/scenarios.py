"""Load histories and the bundled benchmark configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import ParameterError

SCENARIO_NAMES = ("branch_plate", "blast_disk", "porous_plate")


def ramp_traction(t, sigma0, t0):
    """Linear rise to ``sigma0`` over ``t0``, constant afterwards."""
    if t0 <= 0:
        raise ParameterError("ramp time must be positive")
    t = np.asarray(t, dtype=float)
    out = np.where(t <= t0, sigma0 * t / t0, sigma0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RampTraction:
    sigma0: float
    t0: float

    def __call__(self, t):
        return ramp_traction(t, self.sigma0, self.t0)


@dataclass(frozen=True)
class StepTraction:
    sigma0: float

    def __call__(self, t):
        return self.sigma0


@dataclass(frozen=True)
class ExplosionLoad:
    """Blast pressure P0 * P_u(t) * P_d(t) with rise rate m_u and decay rate m_d.

    ``alpha1`` and ``alpha2`` set how far the two factors have relaxed at
    t = 0; they fix the shifts ``t_u`` and ``t_d``.
    """

    P0: float
    m_u: float
    m_d: float
    alpha1: float = 1e-7
    alpha2: float = 1e-3

    def __post_init__(self):
        if self.m_u <= 0 or self.m_d <= 0:
            raise ParameterError("rise and decay rates must be positive")
        if not (0 < self.alpha1 < 1 and 0 < self.alpha2 < 1):
            raise ParameterError("alpha1 and alpha2 must lie in (0, 1)")

    @property
    def g(self):
        return int(round(math.sqrt(2 * math.e) * self.m_u / self.m_d))

    @property
    def t_u(self):
        g = self.g
        return (-math.log(self.alpha1)) ** (1.0 / (2 * g)) / (math.e / (2 * g) * self.m_u)

    @property
    def t_d(self):
        """Peak time."""
        g = self.g
        a = (-math.log(self.alpha1)) ** (1.0 / (2 * g)) - (-math.log(1.0 - self.alpha2)) ** (1.0 / (2 * g))
        return a / (math.e / (2 * g) * self.m_u)

    def rise(self, t):
        g = self.g
        return np.exp(-((math.e / (2 * g) * self.m_u * (np.asarray(t, dtype=float) - self.t_u)) ** (2 * g)))

    def decay(self, t):
        return np.exp(-((math.sqrt(2 * math.e) / 2 * self.m_d * (np.asarray(t, dtype=float) - self.t_d)) ** 2))

    def __call__(self, t):
        out = self.P0 * self.rise(t) * self.decay(t)
        return float(out) if np.ndim(out) == 0 else out


def explosion_load(t, P0, m_u, m_d, alpha1=1e-7, alpha2=1e-3):
    return ExplosionLoad(P0, m_u, m_d, alpha1, alpha2)(t)


def builtin_path(name):
    """Path of a bundled file in the package data directory."""
    return resources.files("morphpd") / "data" / name


def builtin_files():
    """Every bundled config file, including extra variants such as the fixed-strip run."""
    return sorted((p for p in (resources.files("morphpd") / "data").iterdir() if p.name.endswith(".ini")),
                  key=lambda p: p.name)


def builtin_scenarios(desk=None):
    """Bundled configurations, full scale and desk scale.

    ``desk`` filters: True for desk-scale variants only, False for the
    full-scale ones, None for all.
    """
    from .config import load_config

    out = []
    for name in SCENARIO_NAMES:
        for variant in ("", "_desk"):
            if desk is not None and desk != bool(variant):
                continue
            out.append(load_config(builtin_path(f"{name}{variant}.ini"), resolve=False))
    return out


def read_pores(path):
    """Pore file: one ``x y radius`` line per pore (mm), '#' comments allowed."""
    rows = []
    with open(path) as fh:
        for k, line in enumerate(fh, 1):
            s = line.split("#", 1)[0].split()
            if not s:
                continue
            if len(s) != 3:
                raise ParameterError(f"pore file line {k}: expected 'x y radius'")
            rows.append(tuple(float(v) for v in s))
    return rows
