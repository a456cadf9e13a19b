"""Strain-driven microplane material point.

The macroscopic strain tensor is projected onto 28 microplanes, a plane-level
law with boundary curves is evaluated, and the stress tensor is reassembled by
the virtual-work integral over the hemisphere.

The plane-level law is a surrogate with the same parameter roles as the M4
concrete model (k1 strain scale, k2 friction, k3/k4 volumetric boundary, c20
post-peak slope).  It lives entirely in `microplane_law`, so a different law
can be slotted in without touching the drivers.

Sign convention inside this module: tension positive.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from microcal.params import ParameterVector

# Degree-9 antipodally symmetric rule: 4 + 12 + 12 directions on the hemisphere.
_A = 0.2505628137647321   # (a, a, b) family
_C = 0.18615671159757083  # (c, d, d) family
_W1 = 0.03214287664566967
_W2 = 0.040948947281499073
_W3 = 0.03167009383661105

# Fixed constants of the surrogate boundaries, in units of k1 (strains) and
# E*k1 (stresses).  They shape the curves and are not calibration targets.
TENSILE_STRENGTH = 2.0
TENSILE_ONSET = 2.0
TENSILE_DECAY = 8.0
DEVIATORIC_PLATEAU = 8.0
DEVIATORIC_SPREAD = 5.0
FRICTION_SLOPE = 0.3
FRICTION_COHESION = 3.0
FRICTION_RESIDUAL = 0.3
FRICTION_SATURATION = 0.1


class ModelError(ValueError):
    """Raised when the material point cannot be evaluated for the given parameters."""


@dataclass(frozen=True)
class MicroplaneSystem:
    normals: np.ndarray   # (28, 3)
    l: np.ndarray         # (28, 3)
    m: np.ndarray         # (28, 3)
    weights: np.ndarray   # (28,), sums to one
    N: np.ndarray         # (28, 3, 3) n (x) n
    L: np.ndarray         # (28, 3, 3) sym(l (x) n)
    M: np.ndarray         # (28, 3, 3) sym(m (x) n)

    def __len__(self) -> int:
        return len(self.weights)


def _tangents(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # axis least aligned with n keeps the cross product well conditioned
    e = np.zeros(3)
    e[int(np.argmin(np.abs(n)))] = 1.0
    l = np.cross(e, n)
    l /= np.linalg.norm(l)
    m = np.cross(n, l)
    return l, m


def _sym_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * (np.einsum("pi,pj->pij", a, b) + np.einsum("pi,pj->pij", b, a))


def build_integration_scheme() -> MicroplaneSystem:
    """Return the fixed 28-plane hemisphere quadrature."""
    normals, weights = [], []
    s = 1.0 / np.sqrt(3.0)
    for sx, sy in itertools.product((1.0, -1.0), repeat=2):
        normals.append((sx * s, sy * s, s))
        weights.append(_W1)
    b = np.sqrt(1.0 - 2.0 * _A * _A)
    d = np.sqrt(0.5 * (1.0 - _C * _C))
    for base, w in (((_A, _A, b), _W2), ((_C, d, d), _W3)):
        seen = []
        for perm in itertools.permutations(range(3)):
            v = [base[i] for i in perm]
            for signs in itertools.product((1.0, -1.0), repeat=2):
                p = (signs[0] * v[0], signs[1] * v[1], v[2])
                if p not in seen:
                    seen.append(p)
        normals.extend(seen)
        weights.extend([w] * len(seen))
    n = np.array(normals)
    w = np.array(weights)
    w = w / w.sum()
    lm = [_tangents(row) for row in n]
    l = np.array([t[0] for t in lm])
    m = np.array([t[1] for t in lm])
    return MicroplaneSystem(
        normals=n,
        l=l,
        m=m,
        weights=w,
        N=np.einsum("pi,pj->pij", n, n),
        L=_sym_outer(l, n),
        M=_sym_outer(m, n),
    )


SYSTEM = build_integration_scheme()


@dataclass(frozen=True)
class PlaneStrains:
    epsN: np.ndarray
    epsV: np.ndarray
    epsD: np.ndarray
    epsL: np.ndarray
    epsM: np.ndarray


@dataclass(frozen=True)
class PlaneStresses:
    sigV: np.ndarray
    sigD: np.ndarray
    sigL: np.ndarray
    sigM: np.ndarray

    @property
    def sigN(self) -> np.ndarray:
        return self.sigV + self.sigD


@dataclass(frozen=True)
class PlaneHistory:
    """Largest volumetric compaction reached per plane and the stress it carried."""

    eps_v_min: np.ndarray
    sig_v_min: np.ndarray
    activated: bool = False

    @classmethod
    def fresh(cls, n_planes: int = 28) -> "PlaneHistory":
        return cls(np.zeros(n_planes), np.zeros(n_planes), False)


def as_tensor(eps) -> np.ndarray:
    """Accept a 3x3 array or 6 Voigt components (11, 22, 33, 23, 13, 12)."""
    a = np.asarray(eps, dtype=float)
    if a.shape == (6,):
        xx, yy, zz, yz, xz, xy = a
        a = np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 tensor or 6 components, got shape {a.shape}")
    return 0.5 * (a + a.T)


def to_voigt(t: np.ndarray) -> np.ndarray:
    return np.array([t[0, 0], t[1, 1], t[2, 2], t[1, 2], t[0, 2], t[0, 1]])


def project_strain(eps, system: MicroplaneSystem = SYSTEM) -> PlaneStrains:
    flat = as_tensor(eps).ravel()
    n = len(system)
    epsN = system.N.reshape(n, 9) @ flat
    epsV = np.full(n, (flat[0] + flat[4] + flat[8]) / 3.0)
    return PlaneStrains(
        epsN=epsN,
        epsV=epsV,
        epsD=epsN - epsV,
        epsL=system.L.reshape(n, 9) @ flat,
        epsM=system.M.reshape(n, 9) @ flat,
    )


def elastic_moduli(p: ParameterVector) -> tuple[float, float, float]:
    """Plane moduli (E_V, E_D, E_T) reproducing isotropic elasticity (E, nu)."""
    if p.nu >= 0.25:
        raise ModelError(f"nu={p.nu} >= 0.25 gives a non-positive shear modulus on the planes")
    ev = p.E / (1.0 - 2.0 * p.nu)
    return ev, ev, ev * (1.0 - 4.0 * p.nu) / (1.0 + p.nu)


def volumetric_boundary(epsV, p: ParameterVector):
    """Magnitude of the compressive volumetric boundary (positive)."""
    return p.E * p.k1 * p.k3 * np.exp(-np.asarray(epsV) / (p.k1 * p.k4))


def deviatoric_softening(epsD, p: ParameterVector):
    """Lorentzian decay in (0, 1] past the deviatoric plateau; c20 sets its width."""
    x = np.maximum(-np.asarray(epsD) - DEVIATORIC_PLATEAU * p.k1, 0.0)
    x = x / (DEVIATORIC_SPREAD * p.c20 * p.k1)
    return 1.0 / (1.0 + x * x)


def deviatoric_boundary(epsD, p: ParameterVector):
    """Magnitude of the compressive deviatoric boundary (positive)."""
    return DEVIATORIC_PLATEAU * p.E * p.k1 * deviatoric_softening(epsD, p)


def tensile_boundary(epsN, p: ParameterVector):
    x = np.maximum(np.asarray(epsN) - TENSILE_ONSET * p.k1, 0.0) / (TENSILE_DECAY * p.k1)
    return TENSILE_STRENGTH * p.E * p.k1 * np.exp(-x)


def friction_cap(sigN, epsD, p: ParameterVector):
    """Shear limit: hyperbolic in the confinement, saturating at a level set by k2.

    Cohesion and part of the friction soften with deviatoric compression, which
    produces a peak in confined tests.
    """
    _, _, et = elastic_moduli(p)
    g = deviatoric_softening(epsD, p)
    cohesion = FRICTION_COHESION * p.E * p.k1 * g
    mu = FRICTION_SLOPE * (FRICTION_RESIDUAL + (1.0 - FRICTION_RESIDUAL) * g)
    c = mu * np.maximum(cohesion - np.asarray(sigN), 0.0)
    s = FRICTION_SATURATION * et * p.k1 * p.k2
    return s * c / (s + c)


def microplane_law(
    s: PlaneStrains, p: ParameterVector, h: PlaneHistory | None = None
) -> tuple[PlaneStresses, PlaneHistory]:
    """Elastic predictor capped by the boundary curves; returns stresses and updated history."""
    ev, ed, et = elastic_moduli(p)
    if h is None:
        h = PlaneHistory.fresh(len(s.epsV))

    virgin = np.maximum(ev * s.epsV, -volumetric_boundary(s.epsV, p))
    # linear unloading from the deepest compaction reached so far
    unloading = (h.eps_v_min < 0.0) & (s.epsV > h.eps_v_min)
    sigV = np.where(unloading, h.sig_v_min + ev * (s.epsV - h.eps_v_min), virgin)
    active = bool(np.any(virgin > ev * s.epsV))

    trial_d = ed * s.epsD
    sigD = np.maximum(trial_d, -deviatoric_boundary(s.epsD, p))
    active |= bool(np.any(sigD > trial_d))
    f_n = tensile_boundary(s.epsN, p)
    over = sigV + sigD > f_n
    sigD = np.where(over, f_n - sigV, sigD)
    active |= bool(np.any(over))

    sigL = et * s.epsL
    sigM = et * s.epsM
    tau = np.hypot(sigL, sigM)
    cap = friction_cap(sigV + sigD, s.epsD, p)
    scale = np.where(tau > cap, cap / np.where(tau > 0.0, tau, 1.0), 1.0)
    active |= bool(np.any(scale < 1.0))

    compacting = s.epsV < h.eps_v_min
    h_new = PlaneHistory(
        eps_v_min=np.where(compacting, s.epsV, h.eps_v_min),
        sig_v_min=np.where(compacting, sigV, h.sig_v_min),
        activated=h.activated or active,
    )
    return PlaneStresses(sigV, sigD, sigL * scale, sigM * scale), h_new


def assemble_stress(ps: PlaneStresses, system: MicroplaneSystem = SYSTEM) -> np.ndarray:
    """Virtual-work reassembly: sigma = 3 sum_p w_p [sigN N + sigL L + sigM M]."""
    n = len(system)
    w = 3.0 * system.weights
    flat = (
        (w * ps.sigN) @ system.N.reshape(n, 9)
        + (w * ps.sigL) @ system.L.reshape(n, 9)
        + (w * ps.sigM) @ system.M.reshape(n, 9)
    )
    return flat.reshape(3, 3)


def evaluate_step(
    eps, p: ParameterVector, h: PlaneHistory | None = None, system: MicroplaneSystem = SYSTEM
) -> tuple[np.ndarray, PlaneHistory]:
    """Macroscopic stress for total strain `eps` given committed history `h`."""
    ps, h_new = microplane_law(project_strain(eps, system), p, h)
    return assemble_stress(ps, system), h_new
