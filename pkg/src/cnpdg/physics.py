"""Ion systems, species elimination, nondimensionalization, and electrode kinetics.

The electroneutral multi-ion model carries m species; electroneutrality
eliminates one of them (index `eliminated_index`) and a charge-conservation
equation for the potential replaces its mass balance.  Everything the
assembly consumes is collected, already nondimensionalized, into a
TransportProblem.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constants import FARADAY, GAS_CONSTANT
from .mesh import BoundaryTag, ChannelSpec


class ElectroneutralityViolated(ValueError):
    def __init__(self, residual: float):
        self.residual = residual
        super().__init__(f"inlet charge density sum z_k*c_k_in = {residual:g} != 0")


class EliminatedSpeciesNeutral(ValueError):
    pass


@dataclass(frozen=True)
class Species:
    name: str
    z: int
    D: float  # m^2/s
    c_in: float  # mol/m^3 (any unit, consistent across the system)

    def __post_init__(self):
        if self.D <= 0:
            raise ValueError(f"species {self.name}: diffusivity must be positive")
        if self.c_in < 0:
            raise ValueError(f"species {self.name}: inlet concentration must be >= 0")


@dataclass(frozen=True)
class IonSystem:
    species: tuple[Species, ...]
    eliminated_index: int
    T: float = 298.15
    F: float = FARADAY
    R: float = GAS_CONSTANT

    @property
    def m(self) -> int:
        return len(self.species)

    @property
    def retained(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.m) if i != self.eliminated_index)

    def charges(self) -> np.ndarray:
        return np.array([s.z for s in self.species], dtype=float)

    def diffusivities(self) -> np.ndarray:
        return np.array([s.D for s in self.species])

    def inlet_concentrations(self) -> np.ndarray:
        return np.array([s.c_in for s in self.species])

    def mobilities(self) -> np.ndarray:
        """mu_k = D_k / (R T)."""
        return self.diffusivities() / (self.R * self.T)


def validate_system(sys: IonSystem) -> None:
    if sys.m < 2:
        raise ValueError("need at least two species")
    if not 0 <= sys.eliminated_index < sys.m:
        raise ValueError("eliminated_index out of range")
    z = sys.charges()
    c = sys.inlet_concentrations()
    residual = float(np.sum(z * c))
    scale = float(np.max(np.abs(z * c)))
    if abs(residual) > 1e-12 * max(scale, 1.0):
        raise ElectroneutralityViolated(residual)
    if sys.species[sys.eliminated_index].z == 0:
        raise EliminatedSpeciesNeutral("eliminated species must carry charge")


@dataclass(frozen=True)
class CnpCoefficients:
    """Dimensional charge-equation coefficients after eliminating species m.

    Cross-diffusion a_k = F z_k (D_k - D_m) per retained species; conductivity
    kappa(c) = sum_k z_k (z_k mu_k - z_m mu_m) F^2 c_k over retained species;
    recovery c_m = sum_k w_k c_k with w_k = -z_k / z_m.
    """

    a: np.ndarray
    kappa_weights: np.ndarray
    recovery_weights: np.ndarray

    def kappa(self, c_retained: np.ndarray) -> np.ndarray:
        return np.tensordot(self.kappa_weights, np.asarray(c_retained), axes=(0, 0))

    def recover_eliminated(self, c_retained: np.ndarray) -> np.ndarray:
        return np.tensordot(self.recovery_weights, np.asarray(c_retained), axes=(0, 0))


def eliminate(sys: IonSystem) -> CnpCoefficients:
    validate_system(sys)
    z = sys.charges()
    D = sys.diffusivities()
    mu = sys.mobilities()
    mi = sys.eliminated_index
    ret = list(sys.retained)
    a = sys.F * z[ret] * (D[ret] - D[mi])
    kw = z[ret] * (z[ret] * mu[ret] - z[mi] * mu[mi]) * sys.F**2
    w = -z[ret] / z[mi]
    return CnpCoefficients(a=a, kappa_weights=kw, recovery_weights=w)


@dataclass(frozen=True)
class ButlerVolmerParams:
    """Electron-transfer kinetics Ox + n e- -> Red at an electrode.

    j0_profile gives the exchange current density (A/m^2) at a position array;
    a float means a uniform density.  c_r_star=None models a solid reductant
    with unit activity.  phi_app maps BoundaryTag -> applied potential (V).
    """

    j0_profile: Callable[[np.ndarray], np.ndarray] | float
    c_o_star: float
    gamma: float
    alpha1: float
    alpha2: float
    n_electrons: int
    phi_app: dict
    oxidant: int
    reductant: int | None = None
    c_r_star: float | None = None

    def __post_init__(self):
        if not (0 < self.alpha1 <= 1 and 0 < self.alpha2 <= 1):
            raise ValueError("transfer coefficients must lie in (0, 1]")
        if self.n_electrons < 1:
            raise ValueError("electron count must be >= 1")
        if self.gamma <= 0:
            raise ValueError("rate exponent gamma must be positive")

    def j0_at(self, pts: np.ndarray) -> np.ndarray:
        if callable(self.j0_profile):
            return np.asarray(self.j0_profile(pts))
        return np.full(len(pts), float(self.j0_profile))


def _rate_power(c: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """(max(c,0))^gamma and its derivative w.r.t. c; clipped region has slope 0."""
    c = np.asarray(c, dtype=float)
    cc = np.maximum(c, 0.0)
    if gamma < 1.0 and np.any(cc == 0.0):
        raise ValueError("rate exponent gamma < 1 is singular at zero concentration")
    val = cc**gamma
    der = np.where(c > 0.0, gamma * cc ** (gamma - 1.0), 0.0)
    return val, der


def butler_volmer(
    c_o,
    c_r,
    phi,
    params: ButlerVolmerParams,
    *,
    phi_app: float | None = None,
    j0: float | np.ndarray | None = None,
    T: float = 298.15,
    F: float = FARADAY,
    R: float = GAS_CONSTANT,
):
    """Current density J_n (A/m^2) and its derivatives w.r.t. c_o and phi.

    Negative concentrations are clipped to zero inside the rate powers.
    """
    if phi_app is None:
        (phi_app,) = set(params.phi_app.values())
    if j0 is None:
        if callable(params.j0_profile):
            raise ValueError("position-dependent j0 must be resolved by the caller")
        j0 = float(params.j0_profile)
    c_o = np.asarray(c_o, dtype=float)
    phi = np.asarray(phi, dtype=float)
    beta = params.n_electrons * F / (R * T)
    delta = phi_app - phi
    ea = np.exp(params.alpha1 * beta * delta)
    ec = np.exp(-params.alpha2 * beta * delta)
    if params.c_r_star is None:
        r_pow = np.ones_like(ea)
    else:
        r_pow, _ = _rate_power(np.asarray(c_r, dtype=float) / params.c_r_star, params.gamma)
    o_pow, o_der = _rate_power(c_o / params.c_o_star, params.gamma)
    J = j0 * (r_pow * ea - o_pow * ec)
    dJ_dc = -j0 * ec * o_der / params.c_o_star
    dJ_dphi = -j0 * beta * (params.alpha1 * r_pow * ea + params.alpha2 * o_pow * ec)
    return J, dJ_dc, dJ_dphi


@dataclass(frozen=True)
class Nondimensionalization:
    """Scales: length L (m), velocity u_avg (m/s), concentration c_ref."""

    L: float
    u_avg: float
    c_ref: float
    thermal_voltage: float  # R T / F

    def __post_init__(self):
        if min(self.L, self.u_avg, self.c_ref, self.thermal_voltage) <= 0:
            raise ValueError("all scales must be positive")

    def d_hat(self, D) -> np.ndarray:
        return np.asarray(D) / (self.L * self.u_avg)

    def phi_hat(self, phi) -> np.ndarray:
        return np.asarray(phi) / self.thermal_voltage

    def phi(self, phi_hat) -> np.ndarray:
        return np.asarray(phi_hat) * self.thermal_voltage

    def x_hat(self, x) -> np.ndarray:
        return np.asarray(x) / self.L

    def x(self, x_hat) -> np.ndarray:
        return np.asarray(x_hat) * self.L

    def u_hat(self, u) -> np.ndarray:
        return np.asarray(u) / self.u_avg

    def u(self, u_hat) -> np.ndarray:
        return np.asarray(u_hat) * self.u_avg


@dataclass(frozen=True)
class ElectrodeKinetics:
    """Nondimensional Butler-Volmer flux for one electrode tag.

    ghat(c, phi) = (j0_hat/n) * [A exp(alpha1 n d) - max(c,0)^gamma exp(-alpha2 n d)]
    with d = phi_app_hat - phi; A folds the reductant activity and the
    (c*/c_in)^gamma ratio of the oxidant.  j0_hat includes the 1/(u_avg F)
    species-flux scale and the (c_in)^(gamma-1)/(c*)^gamma factor.
    """

    j0_hat: Callable[[np.ndarray], np.ndarray]
    anodic_prefactor: float
    gamma: float
    alpha1: float
    alpha2: float
    n_electrons: int
    phi_app_hat: float
    oxidant_field: int  # retained-species field index
    oxidant_global: int  # index into the full species list

    def flux(self, c_ox_hat, phi_hat, j0_hat_vals):
        """(ghat, dghat/dc_ox, dghat/dphi), vectorized."""
        delta = self.phi_app_hat - np.asarray(phi_hat, dtype=float)
        an = self.alpha1 * self.n_electrons
        cn = self.alpha2 * self.n_electrons
        ea = np.exp(an * delta)
        ec = np.exp(-cn * delta)
        o_pow, o_der = _rate_power(np.asarray(c_ox_hat, dtype=float), self.gamma)
        scale = np.asarray(j0_hat_vals) / self.n_electrons
        g = scale * (self.anodic_prefactor * ea - o_pow * ec)
        dg_dc = -scale * ec * o_der
        dg_dphi = -scale * (an * self.anodic_prefactor * ea + cn * o_pow * ec)
        return g, dg_dc, dg_dphi


@dataclass(frozen=True)
class TransportProblem:
    """Everything the assembly needs, in nondimensional variables.

    Fields are ordered (phi, c_1, ..., c_{m-1}) where the concentrations are
    the retained species in system order.  The eliminated concentration is
    recovered as c_m = sum_j recovery_weights[j] * c_j.
    """

    dim: int
    names: tuple[str, ...]
    z_ret: np.ndarray  # (m-1,)
    d_ret: np.ndarray  # (m-1,)
    z_elim: float
    d_elim: float
    recovery_weights: np.ndarray  # (m-1,)
    a_hat: np.ndarray  # (m-1,) cross-diffusion in the charge equation
    kappa_weights: np.ndarray  # (m-1,) kappa_hat(c) = sum_j kw[j] c_j
    charge_w_ret: np.ndarray  # (m-1,) z_j c_j_in / c_ref
    charge_w_elim: float
    velocity: Callable[[np.ndarray], np.ndarray]
    inlet_value: np.ndarray  # (m-1,) nondimensional inlet concentrations (ones)
    kinetics: dict  # BoundaryTag -> ElectrodeKinetics
    reactions: tuple | None = None  # per retained species, pts -> values
    reaction_elim: Callable | None = None  # eliminated species, pts -> values
    charge_forcing: Callable | None = None
    dirichlet: dict | None = None  # field name -> pts -> values (EXTERIOR faces)

    @property
    def n_fields(self) -> int:
        return 1 + len(self.z_ret)

    def kappa_hat(self, c_hat_fields: np.ndarray) -> np.ndarray:
        """c_hat_fields: (m-1, ...) stacked retained concentrations."""
        return np.tensordot(self.kappa_weights, np.asarray(c_hat_fields), axes=(0, 0))

    def recover_eliminated(self, c_hat_fields: np.ndarray) -> np.ndarray:
        return np.tensordot(self.recovery_weights, np.asarray(c_hat_fields), axes=(0, 0))


def nondimensionalize(
    sys: IonSystem,
    L: float,
    u_avg: float,
    c_ref: float | None = None,
    *,
    velocity_hat: Callable[[np.ndarray], np.ndarray],
    dim: int = 3,
    kinetics_params: ButlerVolmerParams | None = None,
) -> tuple[TransportProblem, Nondimensionalization]:
    """Build the nondimensional problem from a dimensional ion system.

    velocity_hat is the already-scaled velocity on the scaled geometry.
    """
    validate_system(sys)
    if c_ref is None:
        c_ref = float(np.max(sys.inlet_concentrations()))
    scales = Nondimensionalization(
        L=L, u_avg=u_avg, c_ref=c_ref, thermal_voltage=sys.R * sys.T / sys.F
    )
    z = sys.charges()
    c_in = sys.inlet_concentrations()
    dh = scales.d_hat(sys.diffusivities())
    mi = sys.eliminated_index
    ret = list(sys.retained)
    if c_in[mi] <= 0:
        raise ValueError("eliminated species needs a positive inlet concentration")

    z_ret, d_ret, cin_ret = z[ret], dh[ret], c_in[ret]
    w = -z_ret * cin_ret / (z[mi] * c_in[mi])
    a_hat = z_ret * (d_ret - dh[mi]) * (cin_ret / c_ref)
    kw = z_ret * (z_ret * d_ret - z[mi] * dh[mi]) * (cin_ret / c_ref)
    charge_w_ret = z_ret * cin_ret / c_ref
    charge_w_elim = float(z[mi] * c_in[mi] / c_ref)

    kinetics = {}
    if kinetics_params is not None:
        bp = kinetics_params
        ox = bp.oxidant
        if ox == mi:
            raise ValueError("the oxidant must be a retained species")
        if bp.reductant is not None and bp.c_r_star is not None:
            raise NotImplementedError(
                "dissolved reductants are not supported; use c_r_star=None (solid, unit activity)"
            )
        cin_o = c_in[ox]
        j0_scale = cin_o ** (bp.gamma - 1.0) / (u_avg * sys.F * bp.c_o_star**bp.gamma)
        prefactor = (bp.c_o_star / cin_o) ** bp.gamma

        def make_j0_hat(profile):
            if callable(profile):
                return lambda pts_hat: np.asarray(profile(scales.x(pts_hat))) * j0_scale
            return lambda pts_hat: np.full(len(pts_hat), float(profile) * j0_scale)

        ox_field = ret.index(ox)
        for tag, phi_app in bp.phi_app.items():
            kinetics[int(tag)] = ElectrodeKinetics(
                j0_hat=make_j0_hat(bp.j0_profile),
                anodic_prefactor=prefactor,
                gamma=bp.gamma,
                alpha1=bp.alpha1,
                alpha2=bp.alpha2,
                n_electrons=bp.n_electrons,
                phi_app_hat=float(scales.phi_hat(phi_app)),
                oxidant_field=ox_field,
                oxidant_global=ox,
            )

    names = ("phi",) + tuple(f"c_{sys.species[i].name}" for i in ret)
    problem = TransportProblem(
        dim=dim,
        names=names,
        z_ret=z_ret.astype(float),
        d_ret=d_ret,
        z_elim=float(z[mi]),
        d_elim=float(dh[mi]),
        recovery_weights=w,
        a_hat=a_hat,
        kappa_weights=kw,
        charge_w_ret=charge_w_ret,
        charge_w_elim=charge_w_elim,
        velocity=velocity_hat,
        inlet_value=np.ones(len(ret)),
        kinetics=kinetics,
    )
    return problem, scales


def parabolic_velocity(h: float, u_avg: float, dim: int = 3) -> Callable[[np.ndarray], np.ndarray]:
    """u_x = (6 u_avg / h^2) y (h - y), u_y = u_z = 0."""
    if h <= 0:
        raise ValueError("electrode gap must be positive")

    def u(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), dim))
        y = pts[:, 1]
        out[:, 0] = 6.0 * u_avg / h**2 * y * (h - y)
        return out

    return u


def exchange_current_profile(z, w: float, j0_bar: float):
    """J0(z) = (3/5) J0_bar [2 - ((z - w/2)/(w/2))^2]; width-average J0_bar."""
    z = np.asarray(z, dtype=float)
    if np.any(z < -1e-12 * w) or np.any(z > w * (1 + 1e-12)):
        raise ValueError("width coordinate outside [0, w]")
    t = (z - w / 2.0) / (w / 2.0)
    return 0.6 * j0_bar * (2.0 - t**2)


def bortels_cuso4_system() -> IonSystem:
    """CuSO4 + H2SO4 electrolyte; concentrations in mol/m^3; H+ eliminated."""
    return IonSystem(
        species=(
            Species(name="Cu", z=2, D=7.20e-10, c_in=10.0),
            Species(name="SO4", z=-2, D=10.65e-10, c_in=1010.0),
            Species(name="H", z=1, D=93.12e-10, c_in=2000.0),
        ),
        eliminated_index=2,
        T=298.15,
    )


# ---------------------------------------------------------------------------
# manufactured problem: smooth trig fields on the unit box, two ions z = +-2


def _mms_c1(pts: np.ndarray) -> np.ndarray:
    return np.cos(pts[:, 0]) + np.sin(pts[:, 1]) + 3.0


def _mms_phi(pts: np.ndarray) -> np.ndarray:
    return np.sin(pts[:, 0]) + np.cos(pts[:, 1]) + 3.0


MMS_D = (5.0e-6, 1.0e-5)
MMS_Z = (2.0, -2.0)


def mms_problem(dim: int) -> tuple[TransportProblem, dict]:
    """Manufactured two-ion problem (already nondimensional, F = RT = 1).

    Returns the problem and the exact fields {"phi", "c_1", "c_2"}.  The
    volumetric forcings come from applying the strong operators to the exact
    fields; boundary data is the exact solution on all (EXTERIOR) faces.
    """
    d1, d2 = MMS_D
    z1, z2 = MMS_Z
    a1 = z1 * (d1 - d2)
    kw = z1 * (z1 * d1 - z2 * d2)

    def velocity(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), dim))
        out[:, 0] = 6.0 * pts[:, 1] * (1.0 - pts[:, 1])
        return out

    def bracket(pts: np.ndarray) -> np.ndarray:
        # div(c1 grad phi) for the exact fields
        x, y = pts[:, 0], pts[:, 1]
        grad_dot = -np.sin(x) * np.cos(x) - np.sin(y) * np.cos(y)
        lap_phi = -np.sin(x) - np.cos(y)
        return grad_dot + _mms_c1(pts) * lap_phi

    def reaction_c1(pts: np.ndarray) -> np.ndarray:
        x, y = pts[:, 0], pts[:, 1]
        lap_c1 = -np.cos(x) - np.sin(y)
        adv = 6.0 * y * (1.0 - y) * (-np.sin(x))
        return adv - z1 * d1 * bracket(pts) - d1 * lap_c1

    def reaction_c2(pts: np.ndarray) -> np.ndarray:
        # the eliminated concentration equals c_1 here, so only z and D change
        x, y = pts[:, 0], pts[:, 1]
        lap_c2 = -np.cos(x) - np.sin(y)
        adv = 6.0 * y * (1.0 - y) * (-np.sin(x))
        return adv - z2 * d2 * bracket(pts) - d2 * lap_c2

    def charge_forcing(pts: np.ndarray) -> np.ndarray:
        x, y = pts[:, 0], pts[:, 1]
        lap_c1 = -np.cos(x) - np.sin(y)
        return -a1 * lap_c1 - kw * bracket(pts)

    problem = TransportProblem(
        dim=dim,
        names=("phi", "c_1"),
        z_ret=np.array([z1]),
        d_ret=np.array([d1]),
        z_elim=z2,
        d_elim=d2,
        recovery_weights=np.array([1.0]),
        a_hat=np.array([a1]),
        kappa_weights=np.array([kw]),
        charge_w_ret=np.array([z1]),
        charge_w_elim=z2,
        velocity=velocity,
        inlet_value=np.ones(1),
        kinetics={},
        reactions=(reaction_c1,),
        reaction_elim=reaction_c2,
        charge_forcing=charge_forcing,
        dirichlet={"phi": _mms_phi, "c_1": _mms_c1},
    )
    exact = {"phi": _mms_phi, "c_1": _mms_c1, "c_2": _mms_c1}
    return problem, exact


def reactor_problem(
    channel: ChannelSpec | None = None,
    u_avg: float = 0.03,
    j0_bar: float = 30.0,
    phi_app_anode: float = 0.0,
    phi_app_cathode: float = 0.03,
    L_ref: float | None = None,
    c_ref: float | None = None,
    system: IonSystem | None = None,
    gamma: float = 1.0,
    alpha1: float = 0.5,
    alpha2: float = 0.5,
    n_electrons: int = 2,
) -> tuple[TransportProblem, Nondimensionalization, ChannelSpec]:
    """Parallel-plate electrodeposition benchmark.

    Returns the nondimensional problem, the scales, and the channel spec
    rescaled to nondimensional lengths (ready for build_channel_mesh).
    system defaults to the copper-sulfate electrolyte; a custom system
    must list the electrode-reacting species first.
    """
    if channel is None:
        channel = ChannelSpec(
            L_a=0.05, L=0.02, L_b=0.05, h=0.01, w=0.06, nx=64, ny=16, nz=8
        )
    sys = system if system is not None else bortels_cuso4_system()
    if sys.eliminated_index == 0:
        raise ValueError(
            "the electrode-reacting species (index 0) must be retained, "
            "not eliminated"
        )
    if L_ref is None:
        L_ref = channel.h
    oxidant = sys.species[0]
    bv = ButlerVolmerParams(
        j0_profile=lambda pts: exchange_current_profile(pts[:, 2], channel.w, j0_bar),
        c_o_star=oxidant.c_in,
        gamma=gamma,
        alpha1=alpha1,
        alpha2=alpha2,
        n_electrons=n_electrons,
        phi_app={
            BoundaryTag.ELECTRODE_ANODE: phi_app_anode,
            BoundaryTag.ELECTRODE_CATHODE: phi_app_cathode,
        },
        oxidant=0,
    )
    h_hat = channel.h / L_ref

    def velocity_hat(pts_hat: np.ndarray) -> np.ndarray:
        pts_hat = np.atleast_2d(pts_hat)
        out = np.zeros((len(pts_hat), 3))
        y = pts_hat[:, 1]
        out[:, 0] = 6.0 / h_hat**2 * y * (h_hat - y)
        return out

    problem, scales = nondimensionalize(
        sys,
        L=L_ref,
        u_avg=u_avg,
        c_ref=c_ref,
        velocity_hat=velocity_hat,
        dim=3,
        kinetics_params=bv,
    )
    channel_hat = ChannelSpec(
        L_a=channel.L_a / L_ref,
        L=channel.L / L_ref,
        L_b=channel.L_b / L_ref,
        h=channel.h / L_ref,
        w=channel.w / L_ref,
        nx=channel.nx,
        ny=channel.ny,
        nz=channel.nz,
        grading_strength=channel.grading_strength,
    )
    return problem, scales, channel_hat
