"""Symmetric domains, their grids, Dirichlet eigenbases and fractional powers.

Two kinds of eigenbasis are provided:

* :class:`TensorSineBasis` -- closed-form sine products on an interval or a
  rectangle centred at the origin.  Sums over modes are carried out axis by
  axis, so ``J`` counts one-dimensional modes per axis.
* :class:`GridBasis` -- the complete eigendecomposition of the symmetric
  ghost-point five-point Laplacian on a masked lattice (used for the ellipse).
  Because every discrete mode is kept, fractional sums need no truncation and
  the singular free part is represented by the lattice heat kernel.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import ive

KINDS = ("interval", "rectangle", "ellipse")
MIN_CELLS = 16
THETA_MIN = 1e-3


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class FractionalParams:
    s: float
    N: int
    c_fund: float
    kappa: float


def fractional_params(N: int, s: float) -> FractionalParams:
    """Order ``s``, dimension ``N`` and the derived kernel constants.

    ``c_fund`` is the coefficient of ``|x-t|^(2s-N)`` in the free Green
    function; ``kappa`` normalises the conormal trace of the extension so that
    it returns ``lambda^s`` on an eigenfunction.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got s={s}")
    if N not in (1, 2):
        raise ValueError(f"only N in {{1, 2}} is supported, got N={N}")
    if not N > 2.0 * s:
        raise ValueError(f"the constraint N > 2s is violated (N={N}, s={s})")
    c_fund = math.gamma((N - 2 * s) / 2) / (2 ** (2 * s) * math.pi ** (N / 2) * math.gamma(s))
    kappa = 2 ** (2 * s - 1) * math.gamma(s) / math.gamma(1 - s)
    return FractionalParams(s=float(s), N=int(N), c_fund=c_fund, kappa=kappa)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------
@dataclass(frozen=True)
class DomainSpec:
    kind: str
    half_extents: tuple
    spacing: float


@dataclass(frozen=True)
class BoundarySamples:
    points: np.ndarray  # (m, N)
    normals: np.ndarray  # (m, N), outward, unit


@dataclass(frozen=True)
class Domain:
    kind: str
    half_extents: tuple

    @property
    def N(self) -> int:
        return len(self.half_extents)

    @property
    def symmetry_axes(self) -> tuple:
        return (True,) * self.N

    @property
    def diameter(self) -> float:
        return 2.0 * math.sqrt(sum(a * a for a in self.half_extents))

    def level(self, x) -> np.ndarray:
        """Negative inside, zero on the boundary, positive outside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ext = np.asarray(self.half_extents)
        if self.kind == "ellipse":
            return np.sum((x / ext) ** 2, axis=1) - 1.0
        return np.max(np.abs(x) - ext, axis=1)

    def contains(self, x) -> np.ndarray:
        return self.level(x) < 0.0

    def distance_to_boundary(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ext = np.asarray(self.half_extents)
        if self.kind != "ellipse":
            return np.min(ext - np.abs(x), axis=1)
        b = self.boundary_samples(8192).points
        d = np.sqrt(((x[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1)
        return np.where(self.contains(x), d, -d)

    def normal(self, x) -> np.ndarray:
        """Outward unit normal at boundary points (faces only for boxes)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ext = np.asarray(self.half_extents)
        if self.kind == "ellipse":
            n = x / ext**2
        else:
            gap = np.abs(np.abs(x) - ext)
            n = np.zeros_like(x)
            ax = np.argmin(gap, axis=1)
            n[np.arange(len(x)), ax] = np.sign(x[np.arange(len(x)), ax])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def boundary_samples(self, m: int = 512) -> BoundarySamples:
        ext = self.half_extents
        if self.kind == "interval":
            pts = np.array([[-ext[0]], [ext[0]]])
        elif self.kind == "ellipse":
            th = 2 * np.pi * np.arange(m) / m
            pts = np.column_stack([ext[0] * np.cos(th), ext[1] * np.sin(th)])
        else:
            q = max(m // 4, 2)
            u = -1 + (2 * np.arange(q) + 1) / q  # face midpoints, no corners
            a, b = ext
            pts = np.concatenate([
                np.column_stack([np.full(q, a), b * u]),
                np.column_stack([np.full(q, -a), b * u]),
                np.column_stack([a * u, np.full(q, b)]),
                np.column_stack([a * u, np.full(q, -b)]),
            ])
        return BoundarySamples(points=pts, normals=self.normal(pts))


@dataclass(frozen=True)
class ConditionReport:
    axis: int
    max_value: float
    witness: tuple
    passed: bool


def verify_normal_condition(obj, axis: int, tol: float = 1e-12) -> ConditionReport:
    """Check the directional convexity condition along ``axis`` (0-based).

    The quantity reported is ``x_i * n_i`` with ``n`` the *inward* normal,
    maximised over the boundary samples; it is non-positive for every domain
    that is convex in the ``x_i`` direction.
    """
    if isinstance(obj, Domain):
        bs = obj.boundary_samples()
    elif isinstance(obj, Grid):
        bs = obj.boundary
    else:
        bs = obj
    vals = -bs.points[:, axis] * bs.normals[:, axis]
    k = int(np.argmax(vals))
    vmax = float(vals[k])
    return ConditionReport(axis=axis, max_value=vmax,
                           witness=tuple(float(v) for v in bs.points[k]),
                           passed=vmax <= tol)


@dataclass(frozen=True)
class ArmSet:
    """Grid edges that leave the domain: node -> boundary point along an axis."""

    node: np.ndarray  # flat interior index
    axis: np.ndarray
    direction: np.ndarray  # +1 / -1
    theta: np.ndarray  # boundary distance in units of the spacing
    point: np.ndarray  # (m, N) boundary intersection
    normal: np.ndarray  # (m, N) outward normal there


@dataclass
class Grid:
    domain: Domain
    spacing: tuple
    axes: list  # lattice coordinates per axis
    mask: np.ndarray  # interior lattice nodes
    index: np.ndarray  # lattice -> flat interior index (-1 outside)
    points: np.ndarray  # (n, N)
    arms: ArmSet
    boundary: BoundarySamples
    lattice_index: np.ndarray = field(repr=False)  # (n, N) integer lattice coords

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def N(self) -> int:
        return self.domain.N

    @property
    def h(self) -> float:
        return min(self.spacing)

    def lattice(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full(self.mask.shape + values.shape[1:], fill, dtype=float)
        out[self.mask] = values
        return out

    def node_index(self, t, tol: float = 1e-9) -> int:
        t = np.asarray(t, dtype=float)
        d = np.abs(self.points - t).max(axis=1)
        k = int(np.argmin(d))
        if d[k] > tol * self.h:
            raise ValueError(f"point {tuple(t)} is not a grid node")
        return k

    def laplacian(self) -> sp.csr_matrix:
        """The symmetric five-point Dirichlet Laplacian of this grid (cached)."""
        A = self.__dict__.get("_laplacian")
        if A is None:
            A = self.__dict__["_laplacian"] = grid_laplacian(self)
        return A

    def neighbour(self, k: int, offset) -> int:
        """Flat index of the node at lattice offset from node ``k`` (-1 if outside)."""
        idx = self.lattice_index[k] + np.asarray(offset)
        if np.any(idx < 0) or np.any(idx >= np.array(self.mask.shape)):
            return -1
        return int(self.index[tuple(idx)])


def build_domain(spec: DomainSpec) -> tuple[Domain, Grid]:
    kind = spec.kind
    if kind not in KINDS:
        raise ValueError(f"unknown domain kind {kind!r}")
    ext = tuple(float(a) for a in spec.half_extents)
    want = {"interval": 1, "rectangle": 2, "ellipse": 2}[kind]
    if len(ext) != want:
        raise ValueError(f"{kind} needs {want} half-extent(s), got {len(ext)}")
    if any(a <= 0 for a in ext):
        raise ValueError("half-extents must be positive")
    h = float(spec.spacing)
    if h <= 0:
        raise ValueError("spacing must be positive")
    if min(ext) / h < MIN_CELLS - 1e-9:
        raise ValueError(f"spacing {h} resolves the smallest half-extent by fewer than {MIN_CELLS} cells")
    domain = Domain(kind, ext)
    if kind == "ellipse":
        grid = _ellipse_grid(domain, h)
    else:
        grid = _box_grid(domain, h)
    return domain, grid


def _finish_grid(domain, spacing, axes, mask, arms_raw, boundary):
    index = np.full(mask.shape, -1, dtype=int)
    index[mask] = np.arange(mask.sum())
    lat = np.argwhere(mask)
    pts = np.column_stack([axes[i][lat[:, i]] for i in range(domain.N)])
    node, axis, direction, theta, point = (np.array(v) for v in zip(*arms_raw))
    arms = ArmSet(node=index[tuple(np.array(node).T)], axis=axis.astype(int),
                  direction=direction.astype(int), theta=theta,
                  point=np.atleast_2d(point), normal=domain.normal(np.atleast_2d(point)))
    return Grid(domain=domain, spacing=tuple(spacing), axes=axes, mask=mask, index=index,
                points=pts, arms=arms, boundary=boundary, lattice_index=lat)


def _box_grid(domain: Domain, h: float) -> Grid:
    axes, spacing = [], []
    for a in domain.half_extents:
        m = int(round(a / h))
        hi = a / m
        x = np.arange(-m, m + 1) * hi
        x[0], x[-1] = -a, a
        axes.append(x)
        spacing.append(hi)
    shape = tuple(len(x) for x in axes)
    mask = np.zeros(shape, dtype=bool)
    mask[tuple(slice(1, -1) for _ in shape)] = True
    arms = []
    for lat in np.argwhere(mask):
        for ax in range(domain.N):
            for d in (-1, 1):
                nb = lat.copy()
                nb[ax] += d
                if not mask[tuple(nb)]:
                    p = np.array([axes[i][nb[i]] for i in range(domain.N)])
                    arms.append((tuple(lat), ax, d, 1.0, p))
    if domain.kind == "interval":
        boundary = domain.boundary_samples()
    else:
        # boundary lattice nodes on the faces (corners excluded)
        pts = []
        for ax in range(2):
            o = 1 - ax
            for side in (0, -1):
                for j in range(1, len(axes[o]) - 1):
                    p = [0.0, 0.0]
                    p[ax] = axes[ax][side]
                    p[o] = axes[o][j]
                    pts.append(p)
        pts = np.array(pts)
        boundary = BoundarySamples(points=pts, normals=domain.normal(pts))
    return _finish_grid(domain, spacing, axes, mask, arms, boundary)


def _ellipse_grid(domain: Domain, h: float) -> Grid:
    a, b = domain.half_extents
    axes = [np.arange(-math.ceil(a / h), math.ceil(a / h) + 1) * h,
            np.arange(-math.ceil(b / h), math.ceil(b / h) + 1) * h]
    X, Y = np.meshgrid(*axes, indexing="ij")
    mask = (X / a) ** 2 + (Y / b) ** 2 < 1.0 - 1e-12
    arms = []
    for lat in np.argwhere(mask):
        x = np.array([axes[0][lat[0]], axes[1][lat[1]]])
        for ax in range(2):
            o = 1 - ax
            ext, oext = (a, b) if ax == 0 else (b, a)
            for d in (-1, 1):
                nb = lat.copy()
                nb[ax] += d
                if not mask[tuple(nb)]:
                    edge = ext * math.sqrt(max(0.0, 1.0 - (x[o] / oext) ** 2))
                    theta = max((edge - d * x[ax]) / h, THETA_MIN)
                    p = x.copy()
                    p[ax] = d * edge
                    arms.append((tuple(lat), ax, d, theta, p))
    return _finish_grid(domain, (h, h), axes, mask, arms, domain.boundary_samples(1024))


def grid_laplacian(grid: Grid) -> sp.csr_matrix:
    """Symmetric five-point Dirichlet Laplacian (positive definite).

    Cut arms use the ghost value obtained by linear extrapolation through the
    boundary point, which keeps the matrix symmetric.
    """
    n, N = grid.n, grid.N
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for k in range(n):
        for ax in range(N):
            h2 = grid.spacing[ax] ** 2
            for d in (-1, 1):
                off = np.zeros(N, dtype=int)
                off[ax] = d
                j = grid.neighbour(k, off)
                if j >= 0:
                    rows.append(k)
                    cols.append(j)
                    vals.append(-1.0 / h2)
                    diag[k] += 1.0 / h2
    arms = grid.arms
    for k, ax, th in zip(arms.node, arms.axis, arms.theta):
        diag[k] += 1.0 / (th * grid.spacing[ax] ** 2)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)) + sp.diags(diag)
    return A.tocsr()


def arm_rhs(grid: Grid, arm_values: np.ndarray) -> np.ndarray:
    """Right-hand side produced by Dirichlet data on the cut arms.

    ``arm_values`` has shape ``(n_arms, ...)``; the result ``(n, ...)``.
    """
    arms = grid.arms
    h2 = np.array(grid.spacing)[arms.axis] ** 2
    coef = 1.0 / (arms.theta * h2)
    out = np.zeros((grid.n,) + arm_values.shape[1:])
    np.add.at(out, arms.node, coef.reshape((-1,) + (1,) * (arm_values.ndim - 1)) * arm_values)
    return out


# --------------------------------------------------------------------------
# eigenbases
# --------------------------------------------------------------------------
class SineBasis1D:
    """Dirichlet eigenfunctions of ``-d^2/dx^2`` on ``(-a, a)``.

    Written in parity form (cosines for odd j, sines for even j) so that
    reflection symmetry holds exactly in floating point.
    """

    def __init__(self, a: float, M: int):
        self.a = float(a)
        self.M = int(M)
        j = np.arange(1, M + 1)
        self.k = j * np.pi / (2 * a)
        self.eigenvalues = self.k**2
        self.is_cos = (j % 2) == 1
        self.sign = np.where(self.is_cos, (-1.0) ** ((j - 1) // 2), (-1.0) ** (j // 2))
        self.norm = 1.0 / math.sqrt(a)

    @property
    def next_eigenvalue(self) -> float:
        return ((self.M + 1) * np.pi / (2 * self.a)) ** 2

    def values(self, x, deriv: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        kx = self.k * x
        c, s = np.cos(kx), np.sin(kx)
        if deriv == 0:
            v = np.where(self.is_cos, c, s)
        elif deriv == 1:
            v = self.k * np.where(self.is_cos, -s, c)
        elif deriv == 2:
            v = -self.k**2 * np.where(self.is_cos, c, s)
        else:
            raise ValueError("deriv must be 0, 1 or 2")
        return self.sign * self.norm * v

    def antiderivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)[..., None]
        kx = self.k * x
        v = np.where(self.is_cos, np.sin(kx), -np.cos(kx)) / self.k
        return self.sign * self.norm * v


class TensorSineBasis:
    kind = "tensor"

    def __init__(self, domain: Domain, J: int, grid: Grid | None = None):
        self.domain = domain
        self.N = domain.N
        self.J = int(J)
        self.axes = [SineBasis1D(a, J) for a in domain.half_extents]
        self.grid = grid
        self.spacing = grid.h if grid is not None else min(domain.half_extents) / 32
        lam = self.axes[0].eigenvalues
        mi = np.arange(J)[:, None]
        if self.N == 2:
            l2 = lam[:, None] + self.axes[1].eigenvalues[None, :]
            order = np.argsort(l2, axis=None, kind="stable")
            self.multi_index = np.column_stack(np.unravel_index(order, l2.shape))
            self.eigenvalues = l2.ravel()[order]
        else:
            self.multi_index = mi
            self.eigenvalues = lam.copy()

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda_1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def truncation_eigenvalue(self) -> float:
        """Smallest eigenvalue whose mode is missing from the tensor box."""
        lam1 = [ax.eigenvalues[0] for ax in self.axes]
        tot = sum(lam1)
        return min(tot - l1 + ax.next_eigenvalue for l1, ax in zip(lam1, self.axes))

    # -- pointwise evaluation ---------------------------------------------
    def values(self, x, modes=None, deriv=None) -> np.ndarray:
        """Mode values at points ``x`` (P, N); ``deriv`` is a per-axis order tuple."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mi = self.multi_index if modes is None else self.multi_index[np.asarray(modes)]
        deriv = deriv or (0,) * self.N
        out = np.ones((len(x), len(mi)))
        for i, ax in enumerate(self.axes):
            out *= ax.values(x[:, i], deriv[i])[:, mi[:, i]]
        return out

    def gradients(self, x, modes=None) -> np.ndarray:
        return np.stack([self.values(x, modes, tuple(int(i == k) for i in range(self.N)))
                         for k in range(self.N)], axis=-1)

    # -- heat kernels -----------------------------------------------------
    def _axis_heat(self, tau, ax, x, t, dx=0, dt=0):
        e = np.exp(-np.outer(tau, self.axes[ax].eigenvalues))
        return e @ (self.axes[ax].values(x, dx) * self.axes[ax].values(t, dt)).T

    def heat_diag(self, tau, t, order: int = 0):
        """Diagonal heat kernel p(tau, t, t) and its t-derivatives.

        Returns ``p`` (Q,), and for ``order >= 1`` the gradient (Q, N), for
        ``order >= 2`` the Hessian (Q, N, N).
        """
        tau = np.asarray(tau, dtype=float)
        t = np.asarray(t, dtype=float)
        p, dp, ddp = [], [], []
        for i, ax in enumerate(self.axes):
            e = np.exp(-np.outer(tau, ax.eigenvalues))
            v0, v1, v2 = (ax.values(t[i], d) for d in range(3))
            p.append(e @ (v0 * v0))
            dp.append(e @ (2 * v0 * v1))
            ddp.append(e @ (2 * (v1 * v1 + v0 * v2)))
        P = np.prod(p, axis=0)
        if order == 0:
            return P
        grad = np.empty((len(tau), self.N))
        hess = np.empty((len(tau), self.N, self.N))
        for i in range(self.N):
            rest = np.prod([p[k] for k in range(self.N) if k != i], axis=0) if self.N > 1 else 1.0
            grad[:, i] = dp[i] * rest
            hess[:, i, i] = ddp[i] * rest
            for k in range(self.N):
                if k != i:
                    others = [p[m] for m in range(self.N) if m not in (i, k)]
                    hess[:, i, k] = dp[i] * dp[k] * (np.prod(others, axis=0) if others else 1.0)
        if order == 1:
            return P, grad
        return P, grad, hess

    def heat_kernel(self, tau, x, t, dx=None, dt=None) -> np.ndarray:
        """p(tau, x, t) for points x (P, N): shape (Q, P); optional derivative orders."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        dx = dx or (0,) * self.N
        dt = dt or (0,) * self.N
        out = np.ones((len(np.atleast_1d(tau)), len(x)))
        for i in range(self.N):
            out *= self._axis_heat(np.atleast_1d(tau), i, x[:, i], t[i], dx[i], dt[i])
        return out

    def free_heat(self, tau):
        return (4 * np.pi * np.asarray(tau)) ** (-self.N / 2)

    # -- fractional Green series -----------------------------------------
    def series(self, x, weights_axis, s: float, damping: float = 0.0) -> np.ndarray:
        """sum_{multi j} prod_i w_i[p, j_i] * lambda_j^{-s} e^{-damping lambda_j}.

        ``weights_axis`` holds one (P, J) array per axis.
        """
        if self.N == 1:
            lam = self.axes[0].eigenvalues
            return weights_axis[0] @ (lam**-s * np.exp(-damping * lam))
        l1, l2 = self.axes[0].eigenvalues, self.axes[1].eigenvalues
        U, V = weights_axis
        out = np.zeros(len(U))
        block = 512
        for i in range(0, len(l1), block):
            L = l1[i:i + block, None] + l2[None, :]
            C = L**-s * np.exp(-damping * L)
            out += np.einsum("pj,pj->p", U[:, i:i + block] @ C, V)
        return out

    def green_series(self, x, t, s: float, damping: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        w = [ax.values(x[:, i]) * ax.values(t[i]) for i, ax in enumerate(self.axes)]
        return self.series(x, w, s, damping)

    def ball_weights(self, x, t, rho: float, n_outer: int | None = None):
        """Per-axis weights for sum_j <eta_rho, phi_j> phi_j(x) (eta = normalised ball indicator)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.asarray(t, dtype=float)
        if self.N == 1:
            ax = self.axes[0]
            c = (ax.antiderivative(t[0] + rho) - ax.antiderivative(t[0] - rho)) / (2 * rho)
            return [ax.values(x[:, 0]) * c]
        # 2-D disc: the ball coefficients do not factor, so diagonalise the
        # outer integral with Gauss-Legendre nodes and keep the inner one exact.
        ax1, ax2 = self.axes
        n_outer = n_outer or max(128, int(4 * ax1.k[-1] * rho))
        g, w = np.polynomial.legendre.leggauss(n_outer)
        # substitute x1 = t1 + rho sin(phi) to remove the square-root endpoint singularity
        phi = g * np.pi / 2
        wq = w * np.pi / 2 * rho * np.cos(phi)
        x1 = t[0] + rho * np.sin(phi)
        half = rho * np.cos(phi)
        inner = ax2.antiderivative(t[1] + half) - ax2.antiderivative(t[1] - half)  # (Q, J)
        X1 = ax1.values(x1) * wq[:, None] / (np.pi * rho**2)  # (Q, J)
        # coefficient matrix C[j, k] = sum_q X1[q, j] inner[q, k]
        C = X1.T @ inner
        U = ax1.values(x[:, 0])  # (P, J)
        V = ax2.values(x[:, 1])  # (P, J)
        return [U, V, C]

    def ball_series(self, x, t, rho, s, damping=0.0):
        w = self.ball_weights(x, t, rho)
        if self.N == 1:
            return self.series(x, w, s, damping)
        U, V, C = w
        l1, l2 = self.axes[0].eigenvalues, self.axes[1].eigenvalues
        L = l1[:, None] + l2[None, :]
        K = C * L**-s * np.exp(-damping * L)
        return np.einsum("pj,pj->p", U @ K, V)

    def ball_coefficients(self, t, rho) -> np.ndarray:
        """<eta_rho, phi_j> in the flat (sorted) mode order."""
        t = np.asarray(t, dtype=float)
        w = self.ball_weights(t[None, :], t, rho)
        if self.N == 1:
            ax = self.axes[0]
            return (ax.antiderivative(t[0] + rho) - ax.antiderivative(t[0] - rho)) / (2 * rho)
        C = w[2]
        return C[self.multi_index[:, 0], self.multi_index[:, 1]]


class GridBasis:
    """All eigenpairs of the symmetric grid Laplacian of a masked lattice."""

    kind = "grid"

    def __init__(self, domain: Domain, grid: Grid, J: int, refine: bool = True):
        if J < 1:
            raise ValueError("J must be at least 1")
        if J > grid.n // 4:
            raise ValueError(f"J={J} exceeds a quarter of the {grid.n} grid modes")
        self.domain = domain
        self.grid = grid
        self.N = grid.N
        self.J = int(J)
        self.spacing = grid.h
        self.cell = float(np.prod(grid.spacing))
        self.operator = grid.laplacian()
        lam, V = scipy.linalg.eigh(self.operator.toarray())
        if lam[0] <= 0:
            raise RuntimeError("grid Laplacian is not positive definite")
        self.eigenvalues = lam
        self.vectors = V
        self.extrapolated_eigenvalues = lam[:J].copy()
        if refine:
            self.extrapolated_eigenvalues = self._richardson(J)

    def _richardson(self, J):
        _, fine = build_domain(DomainSpec(self.domain.kind, self.domain.half_extents, self.spacing / 2))
        A = fine.laplacian().tocsc()
        try:
            mu = spla.eigsh(A, k=J, sigma=0.0, which="LM", tol=1e-12, return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:  # pragma: no cover - defensive
            raise RuntimeError("shift-invert Lanczos did not converge on the refined grid") from exc
        mu = np.sort(mu)
        return (4 * mu - self.eigenvalues[:J]) / 3

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    @property
    def lambda_1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def truncation_eigenvalue(self) -> float:
        return math.inf

    def node(self, t) -> int:
        return self.grid.node_index(t)

    def _rows(self, k: int, offsets):
        """Eigenfunction values at lattice offsets from node k (zero outside)."""
        out = np.zeros((len(offsets), self.n_modes))
        for r, off in enumerate(offsets):
            j = self.grid.neighbour(k, off)
            if j >= 0:
                out[r] = self.vectors[j]
        return out / math.sqrt(self.cell)

    def values(self, x, modes=None, deriv=None) -> np.ndarray:
        if deriv and any(deriv):
            raise NotImplementedError("grid eigenfunction derivatives are taken by stencils")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        cols = slice(None) if modes is None else np.asarray(modes)
        out = []
        for p in x:
            try:
                out.append(self.vectors[self.node(p), cols] / math.sqrt(self.cell))
            except ValueError:
                out.append(self._interp(p, cols))
        return np.array(out)

    def _interp(self, p, cols):
        from scipy.interpolate import RegularGridInterpolator

        V = self.vectors[:, cols] / math.sqrt(self.cell)
        lat = self.grid.lattice(V)
        f = RegularGridInterpolator(self.grid.axes, lat, method="cubic")
        return f(p[None, :])[0]

    def _stencil(self, t, m: int = 1):
        k = self.node(t)
        N = self.N
        E = m * np.eye(N, dtype=int)
        offs = [np.zeros(N, dtype=int)]
        for i in range(N):
            offs += [E[i], -E[i], 2 * E[i], -2 * E[i]]
            for j in range(i + 1, N):
                offs += [E[i] + E[j], E[i] - E[j], -E[i] + E[j], -E[i] - E[j]]
        return k, offs

    def stencil_values(self, t, m: int = 1):
        """phi_j, central first differences and composite second differences at node t.

        ``m`` scales the stencil to m grid steps.  The second differences use
        the doubled step so that the singular free part cancels exactly in the
        diagonal heat kernel.  Returns ``None`` when the stencil leaves the grid.
        """
        k, offs = self._stencil(t, m)
        if any(self.grid.neighbour(k, o) < 0 for o in offs):
            return None
        rows = self._rows(k, offs)
        at = {tuple(o): rows[r] for r, o in enumerate(offs)}
        h = [m * hi for hi in self.grid.spacing]
        N = self.N
        E = m * np.eye(N, dtype=int)
        v0 = at[(0,) * N]
        d1 = np.stack([(at[tuple(E[i])] - at[tuple(-E[i])]) / (2 * h[i]) for i in range(N)])
        d2 = np.empty((N, N, self.n_modes))
        for i in range(N):
            d2[i, i] = (at[tuple(2 * E[i])] - 2 * v0 + at[tuple(-2 * E[i])]) / (4 * h[i] ** 2)
            for j in range(i + 1, N):
                d2[i, j] = (at[tuple(E[i] + E[j])] - at[tuple(E[i] - E[j])]
                            - at[tuple(-E[i] + E[j])] + at[tuple(-E[i] - E[j])]) / (4 * h[i] * h[j])
                d2[j, i] = d2[i, j]
        return v0, d1, d2

    def _stencil_moments(self, t, e, m):
        st = self.stencil_values(t, m)
        if st is None:
            return None
        v0, d1, d2 = st
        grad = np.stack([e @ (2 * v0 * d1[i]) for i in range(self.N)], axis=-1)
        hess = np.empty((e.shape[0], self.N, self.N))
        for i in range(self.N):
            for j in range(self.N):
                hess[:, i, j] = e @ (2 * (d1[i] * d1[j] + v0 * d2[i, j]))
        return grad, hess

    def heat_diag(self, tau, t, order: int = 0):
        """Diagonal heat kernel and its stencil derivatives at the node t.

        Derivatives combine stencils of one and two grid steps by Richardson
        extrapolation when the wider stencil fits inside the grid.
        """
        tau = np.asarray(tau, dtype=float)
        e = np.exp(-np.outer(tau, self.eigenvalues))
        k = self.node(t)
        v0 = self.vectors[k] / math.sqrt(self.cell)
        P = e @ (v0 * v0)
        if order == 0:
            return P
        one = self._stencil_moments(t, e, 1)
        if one is None:
            raise ValueError(f"derivative stencil at {tuple(t)} leaves the grid")
        two = self._stencil_moments(t, e, 2)
        if two is None:
            grad, hess = one
        else:
            grad = (4 * one[0] - two[0]) / 3
            hess = (4 * one[1] - two[1]) / 3
        if order == 1:
            return P, grad
        return P, grad, hess

    def free_heat(self, tau):
        """Heat kernel of the infinite five-point lattice at the origin."""
        tau = np.asarray(tau, dtype=float)
        out = np.ones_like(tau)
        for hi in self.grid.spacing:
            out = out * ive(0, 2 * tau / hi**2) / hi
        return out

    def free_heat_offset(self, tau, offset):
        tau = np.asarray(tau, dtype=float)
        out = np.ones_like(tau)
        for hi, m in zip(self.grid.spacing, offset):
            out = out * ive(abs(int(m)), 2 * tau / hi**2) / hi
        return out

    def green_series(self, x, t, s: float, damping: float = 0.0) -> np.ndarray:
        lam = self.eigenvalues
        vt = self.values(np.asarray(t)[None, :])[0]
        vx = self.values(x)
        return vx @ (vt * lam**-s * np.exp(-damping * lam))

    def heat_kernel(self, tau, x, t, dx=None, dt=None) -> np.ndarray:
        if (dx and any(dx)) or (dt and any(dt)):
            raise NotImplementedError("use stencil differences on grid bases")
        e = np.exp(-np.outer(np.atleast_1d(tau), self.eigenvalues))
        vt = self.values(np.asarray(t)[None, :])[0]
        return e @ (self.values(x) * vt).T


def eigenbasis(domain: Domain, grid: Grid, J: int, refine: bool = True):
    """Closed-form sine basis for boxes, complete grid basis for the ellipse.

    For boxes ``J`` counts modes per axis (the basis holds ``J**N``
    functions); for the ellipse it is the number of reported eigenvalues.
    """
    if J < 1:
        raise ValueError("J must be at least 1")
    if domain.kind in ("interval", "rectangle"):
        return TensorSineBasis(domain, J, grid)
    return GridBasis(domain, grid, J, refine=refine)


def apply_fractional(basis, coeffs, s: float) -> np.ndarray:
    """Coefficients of (-Delta)^s u for u = sum a_j phi_j (s = 1 allowed)."""
    if not 0.0 < s <= 1.0:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    a = np.asarray(coeffs, dtype=float)
    if len(a) > basis.n_modes:
        raise ValueError("more coefficients than basis modes")
    return a * basis.eigenvalues[: len(a)] ** s


def h0s_norm_sq(basis, coeffs, s: float) -> float:
    a = np.asarray(coeffs, dtype=float)
    return float(np.sum(a * a * basis.eigenvalues[: len(a)] ** s))


def export_eigenvalues(basis, path) -> None:
    lam = getattr(basis, "extrapolated_eigenvalues", None)
    lam = basis.eigenvalues[: basis.J] if lam is None else lam
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["j", "lambda_j"])
        for j, v in enumerate(lam, start=1):
            w.writerow([j, repr(float(v))])


def export_eigenfunctions(basis, grid: Grid, modes, path) -> None:
    vals = basis.values(grid.points, np.asarray(modes))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_index", "x1", "x2"] + [f"phi_{m + 1}" for m in modes])
        for k, p in enumerate(grid.points):
            x2 = p[1] if grid.N > 1 else 0.0
            w.writerow([k, repr(float(p[0])), repr(float(x2))] + [repr(float(v)) for v in vals[k]])
