"""Extreme learning machine with batch and incremental HR training.

The hidden layer is fixed at initialization; only the output weights ``beta``
are trained. Three incremental recursions are provided:

* :func:`ielm_update` -- the regularized incremental ELM (recursive least
  squares with a ridge prior ``I / mu``),
* :func:`ihr_update` -- incremental HR, which reproduces the batch HR solution
  on all data consumed so far,
* :func:`eqlm_update` -- the approximate update used by the HR agent: an HR
  initialization followed by the incremental ELM recursion.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la
from scipy.special import expit

from . import oracle, regcore
from .errors import DimensionMismatch, IllConditioned, SingularGram
from .regcore import HrConfig, HrDiagnostics, Mode, RegProblem, RegStrategy

ACTIVATIONS = {"sigmoid": expit, "tanh": np.tanh}
BIAS_COND_LIMIT = 1e6
RESIDUAL_NEGLIGIBLE = 1e-12


@dataclass(frozen=True)
class ElmModel:
    """Single-hidden-layer network ``o = g(x W^T + b) beta``."""

    input_weights: np.ndarray  # (L, d)
    bias: np.ndarray  # (L,)
    output_weights: np.ndarray  # (L, k)
    activation: str = "sigmoid"
    seed: int | None = None

    @property
    def d(self) -> int:
        return self.input_weights.shape[1]

    @property
    def L(self) -> int:
        return self.input_weights.shape[0]

    @property
    def k(self) -> int:
        return self.output_weights.shape[1]

    def with_beta(self, beta) -> "ElmModel":
        beta = np.array(beta, dtype=float).reshape(self.L, self.k)
        return dataclasses.replace(self, output_weights=beta)


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray  # (N, d)
    targets: np.ndarray  # (N, k)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        Y = np.asarray(self.targets, dtype=float)
        if Y.ndim == 1:
            Y = Y.reshape(X.shape[0], -1)
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def init_elm(d: int, L: int, k: int, seed: int | np.random.Generator = 0,
             activation: str = "sigmoid") -> ElmModel:
    """Random input weights ~ U(-1, 1), biases ~ U(0, 1), zero output weights."""
    if min(d, L, k) < 1:
        raise ValueError("d, L and k must all be >= 1")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    W = rng.uniform(-1.0, 1.0, size=(L, d))
    b = rng.uniform(0.0, 1.0, size=L)
    return ElmModel(
        input_weights=_frozen(W),
        bias=_frozen(b),
        output_weights=np.zeros((L, k)),
        activation=activation,
        seed=None if isinstance(seed, np.random.Generator) else int(seed),
    )


def hidden_matrix(model: ElmModel, inputs) -> np.ndarray:
    """``H[j, i] = g(w_i . x_j + b_i)``."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == model.d else X.reshape(-1, model.d)
    if X.shape[-1] != model.d:
        raise DimensionMismatch(f"inputs have {X.shape[-1]} columns, model expects {model.d}")
    return ACTIVATIONS[model.activation](X @ model.input_weights.T + model.bias)


def predict(model: ElmModel, inputs) -> np.ndarray:
    return hidden_matrix(model, inputs) @ model.output_weights


def train_pinv(model: ElmModel, batch: Batch) -> ElmModel:
    """Minimum-norm least-squares output weights ``H^+ Y``."""
    H = hidden_matrix(model, batch.inputs)
    return model.with_beta(oracle.pinv(H) @ batch.targets)


def train_hr(model: ElmModel, batch: Batch, strategy: RegStrategy,
             config: HrConfig = HrConfig()) -> tuple[ElmModel, HrDiagnostics]:
    H = hidden_matrix(model, batch.inputs)
    problem = RegProblem.from_data(H, batch.targets)
    beta, diag = regcore.hr_solve(problem, strategy, config)
    return model.with_beta(beta), diag


# Incremental training ----------------------------------------------------------


@dataclass(frozen=True)
class TrainState:
    """Running state of an incremental recursion.

    ``info`` is the information matrix ``G_t + R`` (``R = I/mu`` for the
    incremental ELM), ``info_inv_approx`` the matrix propagated by the
    recursion (``A_t^{-1}`` for the incremental ELM, ``F_aim`` for incremental
    HR), ``bias_acc`` the estimation-bias accumulator of :func:`bias_correct`.
    """

    model: ElmModel
    info: np.ndarray
    info_inv_approx: np.ndarray
    beta: np.ndarray
    bias_acc: np.ndarray
    step: int
    reg: np.ndarray
    config: HrConfig
    bias_active: bool = False

    @property
    def gram(self) -> np.ndarray:
        return self.info - self.reg

    @property
    def corrected_beta(self) -> np.ndarray:
        return self.beta + self.bias_acc

    def as_model(self, corrected: bool = False) -> ElmModel:
        return self.model.with_beta(self.corrected_beta if corrected else self.beta)


def _sym(A):
    return 0.5 * (A + A.T)


def _hy(state_or_model, batch: Batch):
    model = state_or_model.model if isinstance(state_or_model, TrainState) else state_or_model
    return hidden_matrix(model, batch.inputs), batch.targets


def ielm_init(model: ElmModel, batch: Batch, mu: float) -> TrainState:
    """``A_1 = H^T H + I / mu``, ``beta = A_1^{-1} H^T Y``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    H, Y = _hy(model, batch)
    L = model.L
    R = np.eye(L) / mu
    info = _sym(H.T @ H + R)
    P = la.inv(info)
    beta = P @ (H.T @ Y)
    return TrainState(model=model, info=info, info_inv_approx=P, beta=beta,
                      bias_acc=np.zeros_like(beta), step=1, reg=R,
                      config=HrConfig(order=0, mode=Mode.STANDARD))


def _rls(P, beta, H, Y):
    # Equivalent to P' = K P, beta' = K beta + K P H^T Y with
    # K = I - P H^T (H P H^T + I)^{-1} H, using K P H^T = P H^T S^{-1}.
    n = H.shape[0]
    if n == 0:
        return P, beta
    PHt = P @ H.T
    S = H @ PHt
    S[np.diag_indices(n)] += 1.0
    gain = la.solve(S, PHt.T).T
    beta = beta + gain @ (Y - H @ beta)
    P = P - gain @ (H @ P)
    return P, beta


def ielm_update(state: TrainState, batch_ic: Batch) -> TrainState:
    """One step of the regularized incremental ELM recursion."""
    H, Y = _hy(state, batch_ic)
    P, beta = _rls(state.info_inv_approx, state.beta, H, Y)
    return dataclasses.replace(
        state,
        info=_sym(state.info + H.T @ H),
        info_inv_approx=P,
        beta=beta,
        step=state.step + 1,
    )


def _factor_for(gram, R, config) -> "regcore._Factor":
    """Spectrally checked factorization of ``gram + R``."""
    problem = RegProblem(gram, np.zeros(len(gram)))
    fac = regcore._Factor(problem, R, config)
    fac.check_spectral()
    return fac


def ihr_init(model: ElmModel, batch: Batch, strategy: RegStrategy,
             config: HrConfig = HrConfig()) -> TrainState:
    """HR initialization of the incremental recursions.

    The mode is routed on the rank of the first Gram matrix (swapped when
    rank-deficient) and kept for the rest of the run.
    """
    H, Y = _hy(model, batch)
    problem = RegProblem.from_data(H, Y)
    config = dataclasses.replace(config, mode=regcore.route_mode(problem))
    R = regcore.materialize(strategy, problem)
    fac = regcore._Factor(problem, R, config)
    fac.check_spectral()
    F_aim = fac.approx_inverse
    beta = F_aim @ problem.cross
    bias = np.zeros_like(beta)
    active = problem.gram_cond() < BIAS_COND_LIMIT
    if active:
        bias = fac.residual() @ problem.cross
    return TrainState(model=model, info=_sym(problem.gram + R), info_inv_approx=F_aim,
                      beta=beta, bias_acc=bias, step=1, reg=R, config=config,
                      bias_active=active)


def ihr_update(state: TrainState, batch_ic: Batch) -> TrainState:
    """Incremental HR: ``beta' = F_aim' F_aim^{-1} beta + F_aim' H_ic^T Y_ic``.

    ``F(R)`` is rebuilt from the accumulated Gram matrix each step, which makes
    ``beta`` equal to the batch HR solution on all data seen so far.
    """
    H, Y = _hy(state, batch_ic)
    info = _sym(state.info + H.T @ H)
    fac = _factor_for(info - state.reg, state.reg, state.config)
    F_aim = fac.approx_inverse
    try:
        lu = la.lu_factor(state.info_inv_approx, check_finite=True)
        if np.any(np.abs(np.diag(lu[0])) <= np.finfo(float).eps * np.abs(lu[0]).max()):
            raise la.LinAlgError("singular")
    except (la.LinAlgError, ValueError) as exc:
        raise SingularGram("F_aim of the previous step is singular; re-initialize") from exc
    beta = F_aim @ la.lu_solve(lu, state.beta) + F_aim @ (H.T @ Y)
    return dataclasses.replace(state, info=info, info_inv_approx=F_aim, beta=beta,
                               step=state.step + 1)


def bias_correct(state: TrainState, batch_ic: Batch) -> TrainState:
    """Advance the bias accumulator after ``ihr_update`` consumed ``batch_ic``.

    ``state`` is the post-update state. ``delta' = F_ar' F_ar^{-1} delta +
    F_ar' H_ic^T Y_ic``, so that ``beta + bias_acc`` tracks the unregularized
    least-squares solution. The first time the accumulated Gram matrix is
    well conditioned the accumulator is seeded from the current weights.
    """
    H, Y = _hy(state, batch_ic)
    gram_new = state.gram
    if not RegProblem(gram_new, np.zeros(len(gram_new))).gram_cond() < BIAS_COND_LIMIT:
        raise IllConditioned("accumulated gram condition number exceeds 1e6")
    fac_new = _factor_for(gram_new, state.reg, state.config)
    ar_new = fac_new.residual()
    if np.linalg.norm(ar_new, 2) < RESIDUAL_NEGLIGIBLE:
        return state
    if not state.bias_active:
        # cross_t = F_aim^{-1} beta_t
        cross = la.solve(state.info_inv_approx, state.beta)
        return dataclasses.replace(state, bias_acc=ar_new @ cross, bias_active=True)
    gram_old = gram_new - H.T @ H
    fac_old = _factor_for(gram_old, state.reg, state.config)
    delta = state.bias_acc
    if np.any(delta):
        delta = ar_new @ la.solve(fac_old.residual(), delta)
    return dataclasses.replace(state, bias_acc=delta + ar_new @ (H.T @ Y))


def eqlm_update(state: TrainState, batch_ic: Batch) -> TrainState:
    """Incremental ELM recursion started from an HR initialization.

    ``info_inv_approx`` holds ``A_1^{-1} sum F^i`` after :func:`ihr_init`, so
    this is only an approximation of the regularized least-squares solution
    when the order is positive.
    """
    return ielm_update(state, batch_ic)


# Serialization ------------------------------------------------------------------

_MAGIC = b"HRELM\x00\x01\x00"
_HEADER = struct.Struct("<8sqqqq16s")


def save_model(model: ElmModel, path) -> None:
    """Write ``model`` in the flat little-endian binary layout documented in README."""
    seed = -1 if model.seed is None else model.seed
    tag = model.activation.encode("ascii").ljust(16, b"\x00")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, model.d, model.L, model.k, seed, tag))
        for arr in (model.input_weights, model.bias, model.output_weights):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> ElmModel:
    data = Path(path).read_bytes()
    magic, d, L, k, seed, tag = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not an hrlearn model file")
    expected = _HEADER.size + 8 * (L * d + L + L * k)
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(float)
    W = body[: L * d].reshape(L, d)
    b = body[L * d: L * d + L]
    beta = body[L * d + L:].reshape(L, k)
    return ElmModel(
        input_weights=_frozen(W),
        bias=_frozen(b),
        output_weights=beta.copy(),
        activation=tag.rstrip(b"\x00").decode("ascii"),
        seed=None if seed < 0 else int(seed),
    )
