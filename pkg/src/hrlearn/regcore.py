"""High-order regularization (HR) for linear inverse problems.

Everything here operates on a :class:`RegProblem`, i.e. the Gram matrix
``G = H^T H`` and the cross matrix ``H^T Y`` of a least-squares problem.
The HR estimate truncates the Neumann series of ``(I - F)^{-1}`` with the
regularization factor ``F = R (G + R)^{-1}`` (standard mode) or
``F = G (G + R)^{-1}`` (swapped mode, for rank-deficient Gram matrices)::

    beta = (G + R)^{-1} (I + F + ... + F^c) H^T Y

With ``c = 0`` and ``R = mu_bar * I`` this is plain ridge regression.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence, Union

import numpy as np
import scipy.linalg as la

from .errors import (
    DimensionMismatch,
    HrError,
    InvalidStrategy,
    NonPsd,
    SingularGram,
    SingularSum,
    SpectralViolation,
)

PSD_TOL = 1e-10
SINGULAR_TOL = 1e-12


class Mode(str, enum.Enum):
    STANDARD = "standard"
    SWAPPED = "swapped"


def _symmetrize(A):
    return 0.5 * (A + A.T)


@dataclass(frozen=True)
class EigenDecomp:
    """Eigenpairs of a symmetric PSD matrix, eigenvalues in descending order."""

    vectors: np.ndarray
    values: np.ndarray

    def compose(self, diag) -> np.ndarray:
        """Return ``P diag(d) P^T`` in this eigenbasis."""
        P = self.vectors
        return _symmetrize((P * np.asarray(diag, dtype=float)) @ P.T)


class RegProblem:
    """Gram and cross matrices of a least-squares problem.

    The Gram matrix is symmetrized on construction. Its eigendecomposition is
    computed on first access and cached; eigenvalues within
    ``-1e-10 * lambda_max`` of zero are clamped to zero, anything more negative
    raises :class:`NonPsd`.
    """

    def __init__(self, gram, cross):
        gram = np.array(gram, dtype=float)
        cross = np.array(cross, dtype=float)
        if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
            raise DimensionMismatch(f"gram must be square, got shape {gram.shape}")
        if cross.shape[0] != gram.shape[0]:
            raise DimensionMismatch(
                f"cross has {cross.shape[0]} rows, gram is {gram.shape[0]}x{gram.shape[0]}"
            )
        self.gram = _symmetrize(gram)
        self.cross = cross
        self.gram.setflags(write=False)
        self.cross.setflags(write=False)

    @classmethod
    def from_data(cls, H, Y) -> "RegProblem":
        H = np.asarray(H, dtype=float)
        Y = np.asarray(Y, dtype=float)
        return cls(H.T @ H, H.T @ Y)

    @property
    def n(self) -> int:
        return self.gram.shape[0]

    @cached_property
    def eig(self) -> EigenDecomp:
        w, V = np.linalg.eigh(self.gram)
        w, V = w[::-1], V[:, ::-1]
        lam_max = max(abs(w[0]), abs(w[-1]))
        if w[-1] < -PSD_TOL * lam_max:
            raise NonPsd(f"gram has eigenvalue {w[-1]:.3e} (lambda_max {lam_max:.3e})")
        w = np.where(w < 0.0, 0.0, w)
        w.setflags(write=False)
        V.setflags(write=False)
        return EigenDecomp(vectors=V, values=w)

    @property
    def rank_cutoff(self) -> float:
        # rcond rule for a square matrix: n * eps * sigma_max
        return self.n * np.finfo(float).eps * self.eig.values[0]

    @cached_property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eig.values > self.rank_cutoff))

    @property
    def rank_deficient(self) -> bool:
        return self.rank < self.n

    @cached_property
    def gram_pinv(self) -> np.ndarray:
        w = self.eig.values
        inv = np.zeros_like(w)
        keep = w > self.rank_cutoff
        inv[keep] = 1.0 / w[keep]
        return self.eig.compose(inv)

    def gram_inverse(self) -> np.ndarray:
        """Inverse of a positive definite Gram matrix (raises SingularGram otherwise)."""
        w = self.eig.values
        if w[-1] <= SINGULAR_TOL * w[0]:
            raise SingularGram(f"gram is singular: lambda_n={w[-1]:.3e}, lambda_1={w[0]:.3e}")
        return self.eig.compose(1.0 / w)

    def gram_cond(self) -> float:
        w = self.eig.values
        return math.inf if w[-1] <= 0.0 else float(w[0] / w[-1])


def route_mode(problem: RegProblem) -> Mode:
    """Swapped mode for rank-deficient Gram matrices, standard otherwise."""
    return Mode.SWAPPED if problem.rank_deficient else Mode.STANDARD


# Regularization strategies ---------------------------------------------------


@dataclass(frozen=True)
class Scalar:
    """``R = mu_bar * I``."""

    mu_bar: float


@dataclass(frozen=True)
class EigShiftClamp:
    """``lambda_R_i = max(mu_bar - lambda_i, 0)`` in the Gram eigenbasis."""

    mu_bar: float


@dataclass(frozen=True)
class EigComplement:
    """``lambda_R_i = mu_bar - lambda_i`` with ``mu_bar > lambda_1``, so ``G + R = mu_bar I``."""

    mu_bar: float


@dataclass(frozen=True)
class ResidualTarget:
    """``R^{-1} = G^+ + Sigma_{n-k} + mu I``; ``tail`` fills the Gram null space."""

    mu: float
    tail: tuple = ()


@dataclass(frozen=True)
class Custom:
    matrix: np.ndarray = field(repr=False)


RegStrategy = Union[Scalar, EigShiftClamp, EigComplement, ResidualTarget, Custom]


def in_eigenbasis(strategy: RegStrategy) -> bool:
    """True when the materialized R shares the Gram eigenbasis (so the two commute)."""
    return not isinstance(strategy, Custom)


def materialize(strategy: RegStrategy, problem: RegProblem) -> np.ndarray:
    """Build the regularization matrix ``R`` for ``problem``."""
    n = problem.n
    if isinstance(strategy, Scalar):
        if strategy.mu_bar < 0:
            raise InvalidStrategy("mu_bar must be nonnegative")
        return strategy.mu_bar * np.eye(n)

    if isinstance(strategy, Custom):
        R = np.array(strategy.matrix, dtype=float)
        if R.shape != (n, n):
            raise DimensionMismatch(f"custom R has shape {R.shape}, expected {(n, n)}")
        R = _symmetrize(R)
        w = np.linalg.eigvalsh(R)
        scale = max(np.max(np.abs(w)), np.finfo(float).tiny)
        if w[0] < -PSD_TOL * scale:
            raise NonPsd(f"custom R has eigenvalue {w[0]:.3e}")
        return R

    lam = problem.eig.values
    if isinstance(strategy, EigShiftClamp):
        if strategy.mu_bar < 0:
            raise InvalidStrategy("mu_bar must be nonnegative")
        return problem.eig.compose(np.maximum(strategy.mu_bar - lam, 0.0))

    if isinstance(strategy, EigComplement):
        if not strategy.mu_bar > lam[0]:
            raise InvalidStrategy(
                f"EigComplement needs mu_bar > lambda_1 = {lam[0]:.6g}, got {strategy.mu_bar:.6g}"
            )
        return problem.eig.compose(strategy.mu_bar - lam)

    if isinstance(strategy, ResidualTarget):
        k = problem.rank
        tail = np.asarray(strategy.tail, dtype=float)
        if tail.shape != (n - k,):
            raise InvalidStrategy(f"tail needs {n - k} entries (n - rank), got {tail.size}")
        if strategy.mu < 0 or np.any(tail < 0):
            raise InvalidStrategy("mu and tail must be nonnegative")
        r_inv = np.empty(n)
        r_inv[:k] = 1.0 / lam[:k] + strategy.mu
        r_inv[k:] = tail + strategy.mu
        if np.any(r_inv <= 0):
            raise InvalidStrategy("R^{-1} is singular: need mu > 0 or positive tail entries")
        return problem.eig.compose(1.0 / r_inv)

    raise InvalidStrategy(f"unknown strategy {strategy!r}")


# Configuration and diagnostics -------------------------------------------------


@dataclass(frozen=True)
class HrConfig:
    order: int = 1
    mode: Mode = Mode.STANDARD
    spectral_tolerance: float = 1.0 - 1e-9

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be >= 0")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True)
class HrDiagnostics:
    spectral_radius: float
    cond: float
    residual_norm: float
    err_lower: float
    err_upper: float
    objective: float


# Core operations ---------------------------------------------------------------


class _Factor:
    """Cholesky of ``A = G + R`` and the regularization factor ``F`` for one mode."""

    def __init__(self, problem: RegProblem, R, config: HrConfig):
        R = np.asarray(R, dtype=float)
        if R.shape != problem.gram.shape:
            raise DimensionMismatch(f"R has shape {R.shape}, expected {problem.gram.shape}")
        self.problem = problem
        self.R = _symmetrize(R)
        self.config = config
        A = _symmetrize(problem.gram + self.R)
        w = np.linalg.eigvalsh(A)
        if not w[0] > SINGULAR_TOL * max(abs(w[-1]), np.finfo(float).tiny):
            raise SingularSum(f"gram + R is singular: eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]")
        try:
            self.chol = la.cho_factor(A)
        except la.LinAlgError as exc:
            raise SingularSum(str(exc)) from exc
        self.A = A
        self.sum_eigs = w
        self.M = self.R if config.mode is Mode.STANDARD else problem.gram
        # M and A are symmetric, so M A^{-1} = (A^{-1} M)^T
        self.F = la.cho_solve(self.chol, self.M).T

    def solve(self, B):
        return la.cho_solve(self.chol, B)

    @cached_property
    def factor_eigs(self) -> np.ndarray:
        # eigenvalues of M A^{-1} equal those of the pencil M v = lambda A v
        return la.eigh(self.M, self.A, eigvals_only=True)

    @property
    def spectral_radius(self) -> float:
        e = self.factor_eigs
        return float(max(abs(e[0]), abs(e[-1])))

    def check_spectral(self):
        # order 0 never evaluates the series, so F plays no role in the solve
        if self.config.order == 0:
            return
        rho = self.spectral_radius
        if rho >= self.config.spectral_tolerance:
            raise SpectralViolation(
                f"spectral radius of F is {rho:.12g} >= {self.config.spectral_tolerance!r}"
                f" ({self.config.mode.value} mode)"
            )

    def series(self) -> np.ndarray:
        """``I + F + ... + F^c`` by Horner accumulation."""
        n = self.problem.n
        S = np.eye(n)
        for _ in range(self.config.order):
            S = self.F @ S
            S[np.diag_indices(n)] += 1.0
        return S

    @cached_property
    def approx_inverse(self) -> np.ndarray:
        return self.solve(self.series())

    def residual(self) -> np.ndarray:
        if self.config.mode is Mode.STANDARD:
            Ginv = self.problem.gram_inverse()
            return Ginv @ np.linalg.matrix_power(self.F, self.config.order + 1)
        return self.problem.gram_pinv - self.approx_inverse


def reg_factor(problem: RegProblem, R, config: HrConfig = HrConfig(), enforce: bool = False):
    """Regularization factor ``F(R)`` for the configured mode."""
    fac = _Factor(problem, R, config)
    if enforce:
        fac.check_spectral()
    return fac.F


def spectral_radius(problem: RegProblem, R, config: HrConfig = HrConfig()) -> float:
    return _Factor(problem, R, config).spectral_radius


def factor_eigenvalues(problem: RegProblem, R, config: HrConfig = HrConfig()) -> np.ndarray:
    """Eigenvalues of ``F(R)`` in ascending order (real, since F is similar to a symmetric matrix)."""
    return _Factor(problem, R, config).factor_eigs.copy()


def approx_inverse_map(problem: RegProblem, R, config: HrConfig = HrConfig()) -> np.ndarray:
    """``F_aim = (G + R)^{-1} sum_{i<=c} F^i``, the HR approximation of ``G^{-1}`` (or ``G^+``)."""
    fac = _Factor(problem, R, config)
    fac.check_spectral()
    return fac.approx_inverse


def approx_residual(problem: RegProblem, R, config: HrConfig = HrConfig()) -> np.ndarray:
    """Gap between the (pseudo-)inverse of the Gram matrix and ``F_aim``.

    Standard mode returns ``G^{-1} F^{c+1}`` and requires a positive definite
    Gram matrix; swapped mode returns ``G^+ - F_aim``.
    """
    fac = _Factor(problem, R, config)
    return fac.residual()


def cond_number(problem: RegProblem, R) -> float:
    """``lambda_max(G + R) / lambda_min(G + R)``."""
    A = _symmetrize(problem.gram + np.asarray(R, dtype=float))
    w = np.linalg.eigvalsh(A)
    if not w[0] > SINGULAR_TOL * max(abs(w[-1]), np.finfo(float).tiny):
        raise SingularSum(f"gram + R is singular: eigenvalues in [{w[0]:.3e}, {w[-1]:.3e}]")
    return float(w[-1] / w[0])


def _norm(x) -> float:
    return float(np.linalg.norm(x))


def error_bounds(problem: RegProblem, R, config: HrConfig = HrConfig()) -> tuple[float, float]:
    """Lower and upper bounds on ``||beta_hr - beta_opt||``.

    Both share the numerator ``||(G + R)^{-1} F^{c+1} H^T Y||`` and divide it by
    ``1 - lambda_min(F)`` and ``1 - lambda_max(F)`` respectively. The bounds are
    sharp when R commutes with the Gram matrix (every eigenbasis strategy).
    """
    fac = _Factor(problem, R, config)
    lam = fac.factor_eigs
    if lam[-1] >= 1.0:
        raise SpectralViolation(f"lambda_max(F) = {lam[-1]:.12g} >= 1")
    v = problem.cross
    for _ in range(config.order + 1):
        v = fac.F @ v
    num = _norm(fac.solve(v))
    return num / (1.0 - lam[0]), num / (1.0 - lam[-1])


def objective(problem: RegProblem, R, config: HrConfig = HrConfig()) -> float:
    """``Obj(R) = ||F_ar(R)||_2 * Cond(R)``."""
    fac = _Factor(problem, R, config)
    res = np.linalg.norm(fac.residual(), 2)
    return float(res * (fac.sum_eigs[-1] / fac.sum_eigs[0]))


def hr_solve(problem: RegProblem, strategy: RegStrategy, config: HrConfig = HrConfig()):
    """HR estimate of the output weights plus diagnostics.

    Returns
    -------
    beta : ndarray
        ``F_aim @ cross``, same trailing shape as ``problem.cross``.
    diag : HrDiagnostics
        Quantities that are undefined for this problem/mode (e.g. the residual
        for a singular Gram matrix in standard mode) are NaN.
    """
    R = materialize(strategy, problem)
    return hr_solve_matrix(problem, R, config)


def hr_solve_matrix(problem: RegProblem, R, config: HrConfig = HrConfig()):
    fac = _Factor(problem, R, config)
    fac.check_spectral()
    beta = fac.approx_inverse @ problem.cross
    return beta, _diagnostics(fac)


def _diagnostics(fac: _Factor) -> HrDiagnostics:
    cond = float(fac.sum_eigs[-1] / fac.sum_eigs[0])
    try:
        res = float(np.linalg.norm(fac.residual(), 2))
    except SingularGram:
        res = math.nan
    lo = hi = math.nan
    if fac.config.mode is Mode.STANDARD and not math.isnan(res):
        try:
            lo, hi = error_bounds(fac.problem, fac.R, fac.config)
        except SpectralViolation:
            pass
    return HrDiagnostics(
        spectral_radius=fac.spectral_radius,
        cond=cond,
        residual_norm=res,
        err_lower=lo,
        err_upper=hi,
        objective=res * cond,
    )


# Objective sweep ---------------------------------------------------------------


def offset_complement(mu_bar: float, problem: RegProblem) -> EigComplement:
    """``lambda_R_i = lambda_1 - lambda_i + mu_bar``, the second selection plotted against mu_bar."""
    return EigComplement(problem.eig.values[0] + mu_bar)


STRATEGY_BUILDERS: dict[str, Callable[[float, RegProblem], RegStrategy]] = {
    "scalar": lambda mu_bar, problem: Scalar(mu_bar),
    "eig_shift_clamp": lambda mu_bar, problem: EigShiftClamp(mu_bar),
    "eig_complement": lambda mu_bar, problem: EigComplement(mu_bar),
    "offset_complement": offset_complement,
}


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    c: int
    mu_bar: float
    objective: float
    cond: float
    residual_norm: float
    feasible: bool = True


def sweep_objective(
    problem: RegProblem,
    strategies: Sequence[str],
    orders: Sequence[int],
    grid: Sequence[float],
    mode: Mode | None = None,
) -> list[SweepRow]:
    """Tabulate ``Obj``, ``Cond`` and ``||F_ar||`` over strategies x orders x grid.

    ``strategies`` are keys of :data:`STRATEGY_BUILDERS`. Combinations whose
    preconditions fail produce a row with ``feasible=False`` and NaN values
    instead of aborting. ``mode=None`` routes on the Gram rank.
    """
    grid = [float(g) for g in grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be ascending")
    for name in strategies:
        if name not in STRATEGY_BUILDERS:
            raise InvalidStrategy(f"unknown strategy {name!r}; choose from {sorted(STRATEGY_BUILDERS)}")
    mode = route_mode(problem) if mode is None else Mode(mode)
    rows = []
    for name in strategies:
        build = STRATEGY_BUILDERS[name]
        for c in orders:
            config = HrConfig(order=int(c), mode=mode)
            for mu_bar in grid:
                try:
                    R = materialize(build(mu_bar, problem), problem)
                    fac = _Factor(problem, R, config)
                    fac.check_spectral()
                    res = float(np.linalg.norm(fac.residual(), 2))
                    cond = float(fac.sum_eigs[-1] / fac.sum_eigs[0])
                    rows.append(SweepRow(name, int(c), mu_bar, res * cond, cond, res))
                except HrError:
                    nan = math.nan
                    rows.append(SweepRow(name, int(c), mu_bar, nan, nan, nan, feasible=False))
    return rows
