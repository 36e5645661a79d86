"""Fourier-series curve family c(s, theta) with analytic s- and
theta-derivatives, arc-length machinery and replanning re-initialization.

Each coordinate is a truncated sine series in the normalized parameter
s in [0, 1]:

    c_i(s) = a0_i + sum_g a_g^i * sin(4 pi^2 g f_i s + phi_g^i)

Only the ratio of the base frequencies shapes the curve, so f2 is a fixed
constant (1/(2 pi), giving the second coordinate a base period of exactly 1
in s) and f1 is a free parameter. The parameter vector packs as
theta = [f1, A1, A2, Phi1, Phi2].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

F2_DEFAULT = 1.0 / (2.0 * np.pi)
FOUR_PI_SQ = 4.0 * np.pi ** 2


class DegenerateCurveError(ValueError):
    """Curve with (numerically) zero arc length."""


@dataclass(frozen=True)
class CurveParams:
    f1: float
    a1: np.ndarray     # (gamma1 + 1,) amplitudes, a1[0] is the offset
    a2: np.ndarray
    phi1: np.ndarray   # (gamma1,) phases
    phi2: np.ndarray
    f2: float = F2_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "a1", np.asarray(self.a1, dtype=float))
        object.__setattr__(self, "a2", np.asarray(self.a2, dtype=float))
        object.__setattr__(self, "phi1", np.asarray(self.phi1, dtype=float))
        object.__setattr__(self, "phi2", np.asarray(self.phi2, dtype=float))
        if self.phi1.shape[0] != self.a1.shape[0] - 1 or self.phi2.shape[0] != self.a2.shape[0] - 1:
            raise ValueError("phase count must match amplitude count minus the offset")
        if self.a1.shape[0] < 2 or self.a2.shape[0] < 2:
            raise ValueError("at least one harmonic per coordinate")
        if self.f2 <= 0:
            raise ValueError("f2 must be positive")

    @property
    def gamma1(self) -> int:
        return self.a1.shape[0] - 1

    @property
    def gamma2(self) -> int:
        return self.a2.shape[0] - 1

    @property
    def size(self) -> int:
        return 1 + self.a1.shape[0] + self.a2.shape[0] + self.phi1.shape[0] + self.phi2.shape[0]

    def pack(self) -> np.ndarray:
        return np.concatenate([[self.f1], self.a1, self.a2, self.phi1, self.phi2])

    @classmethod
    def unpack(cls, theta, gamma1: int, gamma2: int, f2: float = F2_DEFAULT) -> "CurveParams":
        theta = np.asarray(theta, dtype=float)
        i = 1
        a1 = theta[i:i + gamma1 + 1]; i += gamma1 + 1
        a2 = theta[i:i + gamma2 + 1]; i += gamma2 + 1
        phi1 = theta[i:i + gamma1]; i += gamma1
        phi2 = theta[i:i + gamma2]
        return cls(float(theta[0]), a1, a2, phi1, phi2, f2)


def _coord_terms(f, amps, phis, s):
    """(arg, w_g) for one coordinate; arg has shape (gamma, n)."""
    g = np.arange(1, amps.shape[0])
    w = FOUR_PI_SQ * f * g          # angular rates per harmonic
    arg = w[:, None] * s[None, :] + phis[:, None]
    return arg, w


def eval(params: CurveParams, s):
    """Curve position and its first/second s-derivatives.

    Scalar s gives (2,) arrays; array s of shape (n,) gives (2, n).
    s is clamped into [0, 1].
    """
    scalar = np.isscalar(s) or np.ndim(s) == 0
    s = np.atleast_1d(np.clip(np.asarray(s, dtype=float), 0.0, 1.0))
    c = np.empty((2, s.shape[0]))
    cp = np.empty_like(c)
    cpp = np.empty_like(c)
    for i, (f, amps, phis) in enumerate(
        [(params.f1, params.a1, params.phi1), (params.f2, params.a2, params.phi2)]
    ):
        arg, w = _coord_terms(f, amps, phis, s)
        sin_a = np.sin(arg)
        cos_a = np.cos(arg)
        a = amps[1:, None]
        c[i] = amps[0] + (a * sin_a).sum(0)
        cp[i] = (w[:, None] * a * cos_a).sum(0)
        cpp[i] = -((w ** 2)[:, None] * a * sin_a).sum(0)
    if scalar:
        return c[:, 0], cp[:, 0], cpp[:, 0]
    return c, cp, cpp


def grad_theta(params: CurveParams, s):
    """Gradients of (c, c', c'') with respect to the packed parameter vector.

    Returns three arrays of shape (2, size) for scalar s, (2, size, n) for
    array s. Only f1 is free; f2 rows are identically zero.
    """
    scalar = np.isscalar(s) or np.ndim(s) == 0
    s = np.atleast_1d(np.clip(np.asarray(s, dtype=float), 0.0, 1.0))
    n = s.shape[0]
    a_dim = params.size
    gc = np.zeros((2, a_dim, n))
    gcp = np.zeros_like(gc)
    gcpp = np.zeros_like(gc)

    offs_a = [1, 1 + params.gamma1 + 1]
    offs_phi = [1 + params.gamma1 + params.gamma2 + 2,
                1 + params.gamma1 + params.gamma2 + 2 + params.gamma1]
    for i, (f, amps, phis) in enumerate(
        [(params.f1, params.a1, params.phi1), (params.f2, params.a2, params.phi2)]
    ):
        g = np.arange(1, amps.shape[0])
        arg, w = _coord_terms(f, amps, phis, s)
        sin_a, cos_a = np.sin(arg), np.cos(arg)
        a = amps[1:, None]
        if i == 0:
            # d(arg)/df1 = 4 pi^2 g s ; d(w)/df1 = 4 pi^2 g
            darg = FOUR_PI_SQ * g[:, None] * s[None, :]
            dw = FOUR_PI_SQ * g
            gc[0, 0] = (a * cos_a * darg).sum(0)
            gcp[0, 0] = (dw[:, None] * a * cos_a - w[:, None] * a * sin_a * darg).sum(0)
            gcpp[0, 0] = (-2.0 * (w * dw)[:, None] * a * sin_a
                          - (w ** 2)[:, None] * a * cos_a * darg).sum(0)
        o = offs_a[i]
        gc[i, o] = 1.0                                   # offset a0
        gc[i, o + 1:o + 1 + g.size] = sin_a
        gcp[i, o + 1:o + 1 + g.size] = w[:, None] * cos_a
        gcpp[i, o + 1:o + 1 + g.size] = -(w ** 2)[:, None] * sin_a
        o = offs_phi[i]
        gc[i, o:o + g.size] = a * cos_a
        gcp[i, o:o + g.size] = -w[:, None] * a * sin_a
        gcpp[i, o:o + g.size] = -(w ** 2)[:, None] * a * cos_a
    if scalar:
        return gc[:, :, 0], gcp[:, :, 0], gcpp[:, :, 0]
    return gc, gcp, gcpp


@dataclass(frozen=True)
class ArcTable:
    s: np.ndarray          # (n_s + 1,) uniform grid
    cumulative: np.ndarray  # arc length up to s[i]
    alpha: float

    def length_at(self, s: float) -> float:
        return float(np.interp(s, self.s, self.cumulative))


def arc_table(params: CurveParams, n_s: int = 1000) -> ArcTable:
    """Cumulative arc length by per-cell Simpson quadrature of |c'|."""
    if n_s < 100:
        raise ValueError("n_s must be at least 100")
    s = np.linspace(0.0, 1.0, n_s + 1)
    mid = 0.5 * (s[:-1] + s[1:])
    _, cp_nodes, _ = eval(params, s)
    _, cp_mid, _ = eval(params, mid)
    f_nodes = np.linalg.norm(cp_nodes, axis=0)
    f_mid = np.linalg.norm(cp_mid, axis=0)
    h = s[1] - s[0]
    cells = h / 6.0 * (f_nodes[:-1] + 4.0 * f_mid + f_nodes[1:])
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    alpha = float(cum[-1])
    if alpha < 1e-9:
        raise DegenerateCurveError("curve has (numerically) zero length")
    return ArcTable(s, cum, alpha)


def grad_alpha(params: CurveParams, n_s: int = 1000) -> np.ndarray:
    """d alpha / d theta by differentiating the quadrature under the integral."""
    s = np.linspace(0.0, 1.0, n_s + 1)
    mid = 0.5 * (s[:-1] + s[1:])
    h = s[1] - s[0]

    def integrand(sv):
        _, cp, _ = eval(params, sv)
        _, gcp, _ = grad_theta(params, sv)
        norm = np.linalg.norm(cp, axis=0)
        norm = np.where(norm < 1e-12, 1e-12, norm)
        return np.einsum("in,ian->an", cp, gcp) / norm[None, :]

    f_nodes = integrand(s)
    f_mid = integrand(mid)
    cells = h / 6.0 * (f_nodes[:, :-1] + 4.0 * f_mid + f_nodes[:, 1:])
    return cells.sum(axis=1)


def reinitialize(params: CurveParams, s_minus: float, c_target=None) -> CurveParams:
    """Parameters of a fresh curve whose s=0 state matches the old curve at
    s_minus: phases shift by the accumulated angle and offsets absorb the
    position, so position and tangent carry over exactly.
    """
    s_minus = float(np.clip(s_minus, 0.0, 1.0))
    c_old, _, _ = eval(params, s_minus)
    if c_target is None:
        c_target = c_old
    c_target = np.asarray(c_target, dtype=float)
    new_phis, new_a0 = [], []
    for i, (f, amps, phis) in enumerate(
        [(params.f1, params.a1, params.phi1), (params.f2, params.a2, params.phi2)]
    ):
        g = np.arange(1, amps.shape[0])
        phi_new = FOUR_PI_SQ * f * g * s_minus + phis
        a0_new = c_target[i] - np.sum(amps[1:] * np.sin(phi_new))
        new_phis.append(phi_new)
        new_a0.append(a0_new)
    a1 = params.a1.copy(); a1[0] = new_a0[0]
    a2 = params.a2.copy(); a2[0] = new_a0[1]
    return replace(params, a1=a1, a2=a2, phi1=new_phis[0], phi2=new_phis[1])
