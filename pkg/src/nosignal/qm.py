"""Quantum reference predictions for polarization-entangled photon pairs.

Basis order is (HH, HV, VH, VV). Outcome +1 means "transmitted along the
polarizer direction"; the projector for angle theta is |theta><theta| with
|theta> = cos(theta)|H> + sin(theta)|V>.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Setting, SettingPair

# Fit of the non-maximally entangled state quoted for the Giustina et al. data.
FITTED_R = 0.297
FITTED_V = 0.965


@dataclass(frozen=True, eq=False)
class TwoPhotonState:
    r: float
    V: float
    rho: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.rho)


def build_rho(r: float, V: float) -> TwoPhotonState:
    """Damped two-photon state with amplitude ratio ``r`` and visibility ``V``.

    V is taken real; a complex V is not supported.
    """
    if not (0.0 < r <= 1.0):
        raise ValueError(f"r must lie in (0, 1], got {r}")
    if not (0.0 < V <= 1.0):
        raise ValueError(f"V must lie in (0, 1], got {V}")
    rho = np.zeros((4, 4), dtype=complex)
    rho[1, 1] = 1.0
    rho[1, 2] = rho[2, 1] = V * r
    rho[2, 2] = r * r
    rho /= 1.0 + r * r
    rho.flags.writeable = False
    return TwoPhotonState(float(r), float(V), rho)


def rho_eigenvalues_closed_form(r: float, V: float) -> np.ndarray:
    """Sorted eigenvalues {0, 0, (1 + r^2 +- sqrt((1-r^2)^2 + 4V^2r^2)) / (2(1+r^2))}."""
    root = math.sqrt((1 - r * r) ** 2 + 4 * V * V * r * r)
    n = 2 * (1 + r * r)
    return np.sort([0.0, 0.0, (1 + r * r - root) / n, (1 + r * r + root) / n])


def _angle(s) -> float:
    return math.radians(s.angle if isinstance(s, Setting) else float(s))


def projector(theta, outcome: int) -> np.ndarray:
    t = _angle(theta)
    v = np.array([math.cos(t), math.sin(t)])
    plus = np.outer(v, v)
    if outcome == 1:
        return plus
    if outcome == -1:
        return np.eye(2) - plus
    raise ValueError(f"outcome must be -1 or +1, got {outcome}")


def predict_joint(state: TwoPhotonState, alpha, beta) -> dict[tuple[int, int], float]:
    """Born-rule P(a, b | alpha, beta) = tr(rho Pi_a(alpha) (x) Pi_b(beta))."""
    out = {}
    for a in (1, -1):
        for b in (1, -1):
            op = np.kron(projector(alpha, a), projector(beta, b))
            out[(a, b)] = float(np.real(np.trace(state.rho @ op)))
    return out


def correlation(state: TwoPhotonState, alpha, beta) -> float:
    p = predict_joint(state, alpha, beta)
    return p[(1, 1)] + p[(-1, -1)] - p[(1, -1)] - p[(-1, 1)]


def marginal(state: TwoPhotonState, alpha, beta, side: str = "A") -> dict[int, float]:
    p = predict_joint(state, alpha, beta)
    if side == "A":
        return {a: p[(a, 1)] + p[(a, -1)] for a in (1, -1)}
    return {b: p[(1, b)] + p[(-1, b)] for b in (1, -1)}


def singlet_correlation(alpha, beta) -> float:
    """Ideal photon-singlet correlation -cos 2(alpha - beta)."""
    return -math.cos(2.0 * (_angle(alpha) - _angle(beta)))


@dataclass
class CorrelationTable:
    entries: dict[SettingPair, float] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.entries.items():
            if abs(v) > 1.0 + 1e-12:
                raise ValueError(f"correlation {v} for {k} outside [-1, 1]")

    def __setitem__(self, key: SettingPair, value: float):
        if abs(value) > 1.0 + 1e-12:
            raise ValueError(f"correlation {value} outside [-1, 1]")
        self.entries[key] = float(value)

    def __getitem__(self, key: SettingPair) -> float:
        return self.entries[key]

    @classmethod
    def from_function(cls, fn, alice: list, bob: list) -> "CorrelationTable":
        table = cls()
        for a in alice:
            for b in bob:
                sa = a if isinstance(a, Setting) else Setting(a)
                sb = b if isinstance(b, Setting) else Setting(b)
                table[SettingPair(sa, sb)] = fn(sa, sb)
        return table

    def to_dict(self) -> dict:
        return {f"{k.alice.angle:g},{k.bob.angle:g}": v for k, v in self.entries.items()}


def _as_setting(s) -> Setting:
    return s if isinstance(s, Setting) else Setting(s)


def chsh(table: CorrelationTable | Mapping[SettingPair, float], x, xp, y, yp) -> float:
    """S = E(x,y) + E(x,y') + E(x',y) - E(x',y')."""
    entries = table.entries if isinstance(table, CorrelationTable) else table
    x, xp, y, yp = map(_as_setting, (x, xp, y, yp))

    def e(a, b):
        try:
            return entries[SettingPair(a, b)]
        except KeyError:
            raise KeyError(f"no correlation for setting pair ({a}, {b})") from None

    return e(x, y) + e(x, yp) + e(xp, y) - e(xp, yp)


def sample_joint(state: TwoPhotonState, alpha, beta, n: int, rng: np.random.Generator
                 ) -> np.ndarray:
    """Draw ``n`` outcome pairs from ``predict_joint``; returns an (n, 2) array."""
    p = predict_joint(state, alpha, beta)
    cells = list(p)
    probs = np.clip(np.array([p[c] for c in cells]), 0.0, None)
    idx = rng.choice(len(cells), size=n, p=probs / probs.sum())
    return np.array(cells, dtype=np.int8)[idx]
