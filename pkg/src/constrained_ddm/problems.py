"""Catalog of model problems, their exact solutions and a finite-difference solver.

Every problem exposes the same small interface used by the trainer:

* ``pde_residual(bundle, x, extras)``: governing-equation residual, (N, c).
* ``boundary_residual(bundle, x, normal, extras)``: exterior condition, (N, c).
* ``interface_fields(bundle, x, normal, tangent, extras)``: list of the
  transmitted fields (Dirichlet values, then normal flux, then tangential
  derivative), each (N, c).
* ``data_residual(bundle, x, extras)`` for problems with measurements.

``bundle`` is a :class:`DerivativeBundle` of the network outputs. The exact
solutions are also available as bundles (``exact_bundle``) so the residual
code can be checked by substitution.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from . import geometry
from .autodiff import tape
from .autodiff.jets import DerivativeBundle
from .geometry import Box
from .network import ConfigurationError

PI = math.pi


def _bundle(value, gradient, hessian) -> DerivativeBundle:
    return DerivativeBundle(tape.constant(value), tape.constant(gradient), tape.constant(hessian))


def _col(a) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).reshape(-1, 1)


@dataclass
class Problem:
    """Base problem: real scalar field, Dirichlet exterior data."""

    name: str
    box: Box
    n_outputs: int = 1
    components: int = 1
    extras: tuple[str, ...] = ()
    positive_extras: tuple[str, ...] = ()
    geometry_kind: str = "box"
    defaults: dict = field(default_factory=dict)

    # names of the interface weights, Dirichlet terms first
    @property
    def interface_names(self) -> tuple[str, ...]:
        return ("alpha", "beta", "gamma")

    @property
    def has_exact(self) -> bool:
        return True

    @property
    def has_measurements(self) -> bool:
        return False

    @property
    def field_names(self) -> tuple[str, ...]:
        return ("u",)

    # -- exact data -----------------------------------------------------
    def exact(self, x) -> np.ndarray:
        """Exact fields (N, n_fields) used for error metrics."""
        return np.asarray(self.exact_bundle(np.atleast_2d(x)).value.value)

    def exact_bundle(self, x) -> DerivativeBundle:
        raise NotImplementedError

    def exact_extras(self, x) -> dict:
        return {}

    def source(self, x) -> np.ndarray:
        raise NotImplementedError

    def boundary_value(self, x) -> np.ndarray:
        return self.exact(x)

    # -- residuals ------------------------------------------------------
    def pde_residual(self, bundle: DerivativeBundle, x, extras=None) -> tape.Node:
        # -lap(u) = s
        return -bundle.laplacian() - _col(self.source(x))

    def boundary_residual(self, bundle: DerivativeBundle, x, normal, extras=None) -> tape.Node:
        return bundle.value - self.boundary_value(x)

    def flux(self, bundle: DerivativeBundle, normal, extras=None) -> tape.Node:
        return bundle.directional(normal)

    def interface_fields(self, bundle: DerivativeBundle, x, normal, tangent, extras=None) -> list:
        return [bundle.value, self.flux(bundle, normal, extras), bundle.directional(tangent)]

    def data_residual(self, bundle: DerivativeBundle, x, extras=None) -> tape.Node:
        raise ConfigurationError(f"{self.name} has no measurements")

    def measurement_points(self, region, count: int, rng) -> np.ndarray | None:
        return None

    # -- evaluation -----------------------------------------------------
    def evaluation_points(self) -> np.ndarray:
        n = int(self.defaults.get("eval_grid", 128))
        b = self.box
        xs, ys = np.linspace(b.x0, b.x1, n), np.linspace(b.y0, b.y1, n)
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def reference(self, x) -> np.ndarray:
        return self.exact(x)


class _SineSumPoisson(Problem):
    """u = sin(a x) cos(b y) + cos(b x) sin(b y), -lap(u) = s, u = g on the boundary."""

    def __init__(self, name: str, a: float, b: float, defaults: dict):
        super().__init__(name=name, box=Box(-1.0, 1.0, -1.0, 1.0), defaults=defaults)
        self.a, self.b = a, b

    def exact_bundle(self, x):
        x = np.atleast_2d(x)
        a, b = self.a, self.b
        px, py = x[:, 0], x[:, 1]
        sa, ca = np.sin(a * px), np.cos(a * px)
        sbx, cbx = np.sin(b * px), np.cos(b * px)
        sby, cby = np.sin(b * py), np.cos(b * py)
        u = sa * cby + cbx * sby
        ux = a * ca * cby - b * sbx * sby
        uy = -b * sa * sby + b * cbx * cby
        uxx = -a * a * sa * cby - b * b * cbx * sby
        uyy = -b * b * sa * cby - b * b * cbx * sby
        return _bundle(u[:, None], np.stack([ux, uy])[:, :, None], np.stack([uxx, uyy])[:, :, None])

    def source(self, x):
        x = np.atleast_2d(x)
        a, b = self.a, self.b
        return (a * a + b * b) * np.sin(a * x[:, 0]) * np.cos(b * x[:, 1]) + 2 * b * b * np.cos(b * x[:, 0]) * np.sin(
            b * x[:, 1]
        )


def poisson_low() -> Problem:
    return _SineSumPoisson(
        "poisson-low",
        4 * PI,
        2 * PI,
        defaults=dict(
            decomposition=(2, 2),
            hidden_layers=3,
            units=20,
            points=(80 * 80, 80),
            outer=500,
            inner_cap=100,
            epoch_min=50,
        ),
    )


def poisson_multiscale() -> Problem:
    return _SineSumPoisson(
        "poisson-multiscale",
        40 * PI,
        2 * PI,
        defaults=dict(
            decomposition=(8, 8),
            hidden_layers=3,
            units=20,
            points=(640 * 640, 640),
            outer=5000,
            inner_cap=100,
            epoch_min=50,
        ),
    )


class StepSourcePoisson(Problem):
    """-lap(u) = 1 on the centre square, 0 elsewhere, u = 0 on the boundary of [0,1]^2."""

    def __init__(self):
        super().__init__(
            name="step-source",
            box=Box(0.0, 1.0, 0.0, 1.0),
            defaults=dict(
                layout="frame",
                hidden_layers=2,
                units=20,
                points=(400, 80, 80),
                outer=1000,
                inner_cap=100,
                epoch_min=50,
                lbfgs_lr=0.1,
                fd_mesh=400,
            ),
        )
        self.inner = Box(0.25, 0.75, 0.25, 0.75)
        self._ref = None

    @property
    def has_exact(self) -> bool:
        return False

    def source(self, x):
        x = np.atleast_2d(x)
        return self.inner.contains(x).astype(np.float64)

    def boundary_value(self, x):
        return np.zeros((len(np.atleast_2d(x)), 1))

    def helmholtz_form(self):
        # lap(u) + 0 u = -s
        return 0.0, lambda x: -self.source(x)

    def reference(self, x):
        if self._ref is None:
            self._ref = fd_reference(self, int(self.defaults["fd_mesh"]))
        return self._ref.interpolate(x)[:, None]


class HelmholtzPlaneWave(Problem):
    """-lap(u) - k^2 u = 0 with jku + du/dn = g; plane-wave exact solution, (Re, Im) outputs."""

    def __init__(self, k: float, theta_wave: float, defaults: dict):
        super().__init__(
            name="helmholtz-complex",
            box=Box(0.0, 1.0, 0.0, 1.0),
            n_outputs=2,
            components=2,
            defaults=defaults,
        )
        self.k = float(k)
        self.theta_wave = float(theta_wave)
        self.k1 = self.k * math.cos(self.theta_wave)
        self.k2 = self.k * math.sin(self.theta_wave)

    @property
    def field_names(self):
        return ("re", "im")

    def exact_bundle(self, x):
        x = np.atleast_2d(x)
        phase = self.k1 * x[:, 0] + self.k2 * x[:, 1]
        c, s = np.cos(phase), np.sin(phase)
        value = np.column_stack([c, s])
        grad = np.stack([np.column_stack([-self.k1 * s, self.k1 * c]), np.column_stack([-self.k2 * s, self.k2 * c])])
        hess = np.stack([-(self.k1**2) * value, -(self.k2**2) * value])
        return _bundle(value, grad, hess)

    def source(self, x):
        return np.zeros(len(np.atleast_2d(x)))

    def pde_residual(self, bundle, x, extras=None):
        return -bundle.laplacian() - (self.k**2) * bundle.value

    def boundary_target(self, x, normal) -> np.ndarray:
        """g = j (k + k1 n_x + k2 n_y) u_exact as (Re, Im) columns."""
        x, normal = np.atleast_2d(x), np.atleast_2d(normal)
        u = self.exact(x)
        w = self.k + self.k1 * normal[:, 0] + self.k2 * normal[:, 1]
        # j w (ur + j ui) = -w ui + j w ur
        return np.column_stack([-w * u[:, 1], w * u[:, 0]])

    def boundary_residual(self, bundle, x, normal, extras=None):
        v = bundle.value
        jku = v[:, ::-1] * np.array([-self.k, self.k])
        return jku + bundle.directional(normal) - self.boundary_target(x, normal)


def helmholtz_complex(k: float = PI * 2**4, theta_wave: float = PI / 3) -> HelmholtzPlaneWave:
    return HelmholtzPlaneWave(
        k,
        theta_wave,
        defaults=dict(
            decomposition=(4, 4),
            hidden_layers=3,
            units=20,
            points=(128 * 128, 128),
            outer=2000,
            inner_cap=100,
            epoch_min=50,
        ),
    )


class HelmholtzPointSource(Problem):
    """lap(u) + k^2 u = Gaussian source, u = 0 on the boundary of [0,1]^2."""

    def __init__(self, level: int, defaults: dict):
        super().__init__(name="helmholtz-point-source", box=Box(0.0, 1.0, 0.0, 1.0), defaults=defaults)
        self.level = int(level)
        self.k = 2**self.level * PI / 1.6
        self.sigma = 0.8 / 2**self.level
        self._ref = None

    @property
    def has_exact(self) -> bool:
        return False

    def source(self, x):
        x = np.atleast_2d(x)
        r2 = np.sum((x - 0.5) ** 2, axis=1)
        return np.exp(-r2 / (2 * self.sigma**2)) / (2 * PI * self.sigma**2)

    def boundary_value(self, x):
        return np.zeros((len(np.atleast_2d(x)), 1))

    def pde_residual(self, bundle, x, extras=None):
        return bundle.laplacian() + (self.k**2) * bundle.value - _col(self.source(x))

    def helmholtz_form(self):
        return self.k**2, self.source

    def reference(self, x):
        if self._ref is None:
            self._ref = fd_reference(self, int(self.defaults.get("fd_mesh", 360)))
        return self._ref.interpolate(x)[:, None]


def helmholtz_point_source(level: int = 5) -> HelmholtzPointSource:
    return HelmholtzPointSource(
        level,
        defaults=dict(
            decomposition=(4, 4),
            hidden_layers=3,
            units=20,
            points=(160 * 160, 160),
            outer=30000,
            inner_cap=100,
            epoch_min=50,
            fd_mesh=360,
        ),
    )


class MultilayerConduction(Problem):
    """div(kappa grad u) = f with piecewise-constant trainable conductivity split at x = 0.5."""

    KAPPA = (3.0 / 22.0, 1.0)
    SPLIT = 0.5

    def __init__(self, defaults: dict):
        super().__init__(
            name="inverse-multilayer",
            box=Box(0.0, 1.0, 0.0, 1.0),
            extras=("kappa",),
            positive_extras=("kappa",),
            defaults=defaults,
        )

    @property
    def has_measurements(self) -> bool:
        return True

    def _left(self, x):
        return np.atleast_2d(x)[:, 0] < self.SPLIT

    def exact_bundle(self, x, side=None):
        x = np.atleast_2d(x)
        px, py = x[:, 0], x[:, 1]
        left = self._left(x) if side is None else np.full(len(x), side == 0)
        u_l = 88 * (px**2 - px**3) * py
        u_r = (53 * px - 50 * px**2 - 3) * py
        ux_l = 88 * (2 * px - 3 * px**2) * py
        ux_r = (53 - 100 * px) * py
        uy_l = 88 * (px**2 - px**3)
        uy_r = 53 * px - 50 * px**2 - 3
        uxx_l = 88 * (2 - 6 * px) * py
        uxx_r = -100 * py
        pick = lambda a, b: np.where(left, a, b)  # noqa: E731
        u = pick(u_l, u_r)
        g = np.stack([pick(ux_l, ux_r), pick(uy_l, uy_r)])
        h = np.stack([pick(uxx_l, uxx_r), np.zeros_like(px)])
        return _bundle(u[:, None], g[:, :, None], h[:, :, None])

    def kappa(self, x, side=None) -> np.ndarray:
        left = self._left(x) if side is None else np.full(len(np.atleast_2d(x)), side == 0)
        return np.where(left, self.KAPPA[0], self.KAPPA[1])

    def exact_extras(self, x):
        return {"kappa": tape.constant(_col(self.kappa(x)))}

    def source(self, x):
        x = np.atleast_2d(x)
        return np.where(self._left(x), (24 - 72 * x[:, 0]) * x[:, 1], -100 * x[:, 1])

    def pde_residual(self, bundle, x, extras=None):
        return extras["kappa"] * bundle.laplacian() - _col(self.source(x))

    def flux(self, bundle, normal, extras=None):
        return bundle.directional(normal) * extras["kappa"]

    def sensors(self) -> np.ndarray:
        ys = np.linspace(0.2, 0.8, 5)
        left = np.column_stack([np.full(5, 0.45), ys])
        right = np.column_stack([np.full(5, 0.55), ys])
        return np.vstack([left, right])

    def measurement_points(self, region, count, rng):
        pts = self.sensors()
        return pts[region.contains(pts)]

    def data_residual(self, bundle, x, extras=None):
        return bundle.value - self.exact(x)


def inverse_multilayer() -> MultilayerConduction:
    return MultilayerConduction(
        defaults=dict(
            decomposition=(1, 2),
            hidden_layers=3,
            units=20,
            points=(64 * 64, 64),
            outer=500,
            inner_cap=100,
            epoch_min=50,
            eta={"M": 1.0},
        ),
    )


class ButterflyConduction(Problem):
    """div(k grad u) = f on the butterfly with a two-output (u, k) network."""

    def __init__(self, defaults: dict):
        ax, ay = geometry.BUTTERFLY_AX, geometry.BUTTERFLY_AY
        super().__init__(
            name="inverse-butterfly",
            box=Box(-2 * ax, 2 * ax, -2 * ay, 2 * ay),
            n_outputs=2,
            geometry_kind="butterfly",
            defaults=defaults,
        )
        theta = np.linspace(0, 2 * PI, 4001)
        pts = geometry.butterfly_point(theta)
        pad = 1e-9
        self.box = Box(pts[:, 0].min() - pad, pts[:, 0].max() + pad, pts[:, 1].min() - pad, pts[:, 1].max() + pad)

    @property
    def interface_names(self):
        return ("alpha_u", "alpha_k", "beta", "gamma")

    @property
    def has_measurements(self) -> bool:
        return True

    @property
    def field_names(self):
        return ("u", "k")

    def exact_bundle(self, x):
        x = np.atleast_2d(x)
        px, py = x[:, 0], x[:, 1]
        e_m, e_p = np.exp(-0.1 * py), np.exp(0.1 * py)
        s, c = np.sin(0.5 * px), np.cos(0.5 * px)
        u, k = 20 * e_m, 20 + e_p * s
        zeros = np.zeros_like(px)
        value = np.column_stack([u, k])
        grad = np.stack([np.column_stack([zeros, 0.5 * e_p * c]), np.column_stack([-2 * e_m, 0.1 * e_p * s])])
        hess = np.stack([np.column_stack([zeros, -0.25 * e_p * s]), np.column_stack([0.2 * e_m, 0.01 * e_p * s])])
        return _bundle(value, grad, hess)

    def source(self, x):
        return 4 * np.exp(-0.1 * np.atleast_2d(x)[:, 1])

    def pde_residual(self, bundle, x, extras=None):
        u, k = bundle.output(0), bundle.output(1)
        grad_dot = tape.sum(u.gradient * k.gradient, axis=0)
        return k.value * u.laplacian() + grad_dot - _col(self.source(x))

    def boundary_residual(self, bundle, x, normal, extras=None):
        # conductivity is the only field known on the boundary
        return bundle.value[:, 1:2] - self.exact(x)[:, 1:2]

    def flux(self, bundle, normal, extras=None):
        return bundle.output(0).directional(normal) * bundle.value[:, 1:2]

    def interface_fields(self, bundle, x, normal, tangent, extras=None):
        u = bundle.output(0)
        return [bundle.value[:, 0:1], bundle.value[:, 1:2], self.flux(bundle, normal), u.directional(tangent)]

    def measurement_points(self, region, count, rng):
        return region.sample(count, rng)

    def data_residual(self, bundle, x, extras=None):
        return bundle.value[:, 0:1] - self.exact(x)[:, 0:1]

    def evaluation_points(self):
        n = int(self.defaults.get("eval_grid", 256))
        b = self.box
        xs, ys = np.linspace(b.x0, b.x1, n), np.linspace(b.y0, b.y1, n)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        return pts[geometry.inside_butterfly(pts)]


def inverse_fgm_butterfly() -> ButterflyConduction:
    return ButterflyConduction(
        defaults=dict(
            decomposition=(2, 2),
            hidden_layers=1,
            units=20,
            points=(1024, 64, 16, 16),
            outer=5000,
            inner_cap=100,
            epoch_min=50,
            optimizer="adam",
            lr_model=1e-3,
            lr_interface=1e-4,
            eval_grid=256,
        ),
    )


def step_source() -> StepSourcePoisson:
    return StepSourcePoisson()


CATALOG = {
    "poisson-low": poisson_low,
    "poisson-multiscale": poisson_multiscale,
    "step-source": step_source,
    "helmholtz-complex": helmholtz_complex,
    "helmholtz-point-source": helmholtz_point_source,
    "inverse-multilayer": inverse_multilayer,
    "inverse-butterfly": inverse_fgm_butterfly,
}


def get_problem(name: str, **params) -> Problem:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


# ---------------------------------------------------------------------------
# finite-difference reference
# ---------------------------------------------------------------------------


@dataclass
class GridSolution:
    """Nodal values on an (n+1) x (n+1) uniform mesh, indexed [iy, ix]."""

    n: int
    box: Box
    values: np.ndarray

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.box.x0, self.box.x1, self.n + 1)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.box.y0, self.box.y1, self.n + 1)

    def interpolate(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        interp = RegularGridInterpolator((self.ys, self.xs), self.values, method="linear")
        return interp(np.column_stack([x[:, 1], x[:, 0]]))

    def save(self, path) -> None:
        b = self.box
        header = struct.pack("<q4d", self.n, b.x0, b.x1, b.y0, b.y1)
        Path(path).write_bytes(header + np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GridSolution":
        raw = Path(path).read_bytes()
        hsize = struct.calcsize("<q4d")
        n, x0, x1, y0, y1 = struct.unpack("<q4d", raw[:hsize])
        values = np.frombuffer(raw[hsize:], dtype="<f8").reshape(n + 1, n + 1).copy()
        return cls(int(n), Box(x0, x1, y0, y1), values)


def fd_solve(k2: float, rhs, n: int, box: Box, boundary=None) -> GridSolution:
    """Solve lap(u) + k2 u = rhs with Dirichlet data by the 5-point stencil on n x n cells."""
    if n < 2:
        raise ConfigurationError("mesh needs at least 2 cells per side")
    hx, hy = box.width / n, box.height / n
    xs = np.linspace(box.x0, box.x1, n + 1)
    ys = np.linspace(box.y0, box.y1, n + 1)
    m = n - 1
    xi, yi = np.meshgrid(xs[1:-1], ys[1:-1])
    interior = np.column_stack([xi.ravel(), yi.ravel()])
    ex, ey = np.ones(m), np.ones(m)
    dxx = sp.diags([ex[:-1], -2 * ex, ex[:-1]], [-1, 0, 1]) / hx**2
    dyy = sp.diags([ey[:-1], -2 * ey, ey[:-1]], [-1, 0, 1]) / hy**2
    eye = sp.identity(m)
    # unknowns ordered with x fastest
    a = sp.kron(eye, dxx) + sp.kron(dyy, eye) + k2 * sp.identity(m * m)
    b = np.asarray(rhs(interior), dtype=np.float64).ravel().copy()
    full = np.zeros((n + 1, n + 1))
    if boundary is not None:
        gx, gy = np.meshgrid(xs, ys)
        full = np.asarray(boundary(np.column_stack([gx.ravel(), gy.ravel()])), dtype=np.float64).reshape(n + 1, n + 1)
        full[1:-1, 1:-1] = 0.0
        lift = np.zeros((m, m))
        lift[:, 0] += full[1:-1, 0] / hx**2
        lift[:, -1] += full[1:-1, -1] / hx**2
        lift[0, :] += full[0, 1:-1] / hy**2
        lift[-1, :] += full[-1, 1:-1] / hy**2
        b -= lift.ravel()
    sol = spla.spsolve(a.tocsc(), b)
    full[1:-1, 1:-1] = sol.reshape(m, m)
    return GridSolution(n, box, full)


def fd_reference(problem, n: int) -> GridSolution:
    """Finite-difference solution of a problem exposing ``helmholtz_form``."""
    if not hasattr(problem, "helmholtz_form"):
        raise ConfigurationError(f"{problem.name} has no finite-difference form")
    k2, rhs = problem.helmholtz_form()
    return fd_solve(k2, rhs, n, problem.box)
