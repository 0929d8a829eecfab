"""Numerical verifier for the ridge-regression embedding analysis.

Two ridge problems are compared: a plain linear model on features X, and
the same model on features augmented with a constant task-embedding block
E = e 1^T. Both have closed-form solutions; when the matrix

    X^T X E^T E + E^T E X^T X + 2*lambda*E^T E + E^T E E^T E

is positive semidefinite, the augmented model's training loss cannot
exceed the plain model's, and the matching generalization upper bounds
order the same way (their complexity terms coincide). Everything here is
float64 and checked against independent residual identities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConditioningError, ShapeError, UsageError
from .numerics import ensure_finite, substream

_SWEEP_KEY = 505

# Scale-aware slack for declaring the smallest eigenvalue nonnegative.
PSD_TOL_FACTOR = 1e-8
LOSS_TOL = 1e-9


@dataclass
class RidgeInstance:
    """One problem: features X (p x n), targets Y (k x n), embedding e (q,),
    ridge weight lam. The embedding block repeats e across all n columns."""

    x: np.ndarray
    y: np.ndarray
    e: np.ndarray
    lam: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.e = np.asarray(self.e, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2 or self.e.ndim != 1:
            raise ShapeError("RidgeInstance expects 2-d x, 2-d y, 1-d e")
        if self.y.shape[1] != self.x.shape[1]:
            raise ShapeError(f"y has {self.y.shape[1]} columns, x has {self.x.shape[1]}")
        if self.lam <= 0:
            raise UsageError(f"lam must be positive, got {self.lam}")
        for name, arr in (("x", self.x), ("y", self.y), ("e", self.e)):
            ensure_finite(f"RidgeInstance.{name}", arr)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def embedding_block(self) -> np.ndarray:
        return np.outer(self.e, np.ones(self.n))

    @property
    def augmented_x(self) -> np.ndarray:
        return np.vstack([self.x, self.embedding_block])


@dataclass
class RidgeSolution:
    w_plain: np.ndarray  # p x k
    w_augmented: np.ndarray  # (p+q) x k
    train_loss_plain: float
    train_loss_augmented: float


def _solve_spd(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Stable linear solve; refuses systems conditioned beyond float64."""
    eigs = np.linalg.eigvalsh(mat)
    if eigs[0] <= 0 or eigs[-1] / eigs[0] > 1.0 / np.finfo(np.float64).eps:
        raise ConditioningError(
            f"system condition number {eigs[-1] / max(eigs[0], 0.0):.3e} exceeds float64 headroom"
        )
    return np.linalg.solve(mat, rhs)


def solve_ridge(inst: RidgeInstance) -> RidgeSolution:
    """Closed-form solutions of both problems via linear solves.

    w = (X X^T + lam I)^{-1} X Y^T for the plain model, and the same with
    the augmented feature matrix. Losses are squared Frobenius residuals.
    """
    p = inst.x.shape[0]
    xa = inst.augmented_x
    w_plain = _solve_spd(inst.x @ inst.x.T + inst.lam * np.eye(p), inst.x @ inst.y.T)
    w_aug = _solve_spd(xa @ xa.T + inst.lam * np.eye(xa.shape[0]), xa @ inst.y.T)
    r_plain = inst.y - w_plain.T @ inst.x
    r_aug = inst.y - w_aug.T @ xa
    return RidgeSolution(
        w_plain=w_plain,
        w_augmented=w_aug,
        train_loss_plain=float((r_plain * r_plain).sum()),
        train_loss_augmented=float((r_aug * r_aug).sum()),
    )


def condition_matrix(inst: RidgeInstance) -> np.ndarray:
    """The n x n matrix whose positive semidefiniteness is sufficient for
    the augmented model to win on training loss."""
    gx = inst.x.T @ inst.x
    eb = inst.embedding_block
    ge = eb.T @ eb
    return gx @ ge + ge @ gx + 2.0 * inst.lam * ge + ge @ ge


def min_eigenvalue(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])


def psd_tolerance(mat: np.ndarray) -> float:
    return PSD_TOL_FACTOR * float(np.abs(mat).max(initial=0.0))


def check_psd(mat: np.ndarray, tol: Optional[float] = None) -> bool:
    """True iff the smallest eigenvalue is >= -tol (scale-aware default)."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise UsageError(f"check_psd expects a square matrix, got {mat.shape}")
    if tol is None:
        tol = psd_tolerance(mat)
    sym_slack = max(tol, 1e-10 * max(1.0, float(np.abs(mat).max(initial=0.0))))
    if float(np.abs(mat - mat.T).max(initial=0.0)) > sym_slack:
        raise UsageError("check_psd expects a symmetric matrix")
    return min_eigenvalue(mat) >= -tol


@dataclass
class Theorem1Report:
    condition_min_eigenvalue: float
    condition_holds: bool
    loss_plain: float
    loss_augmented: float
    inequality_holds: bool
    residual_identity_error_plain: float
    residual_identity_error_augmented: float


def residual_shrink_matrices(inst: RidgeInstance) -> tuple[np.ndarray, np.ndarray]:
    """The n x n maps A and B with Y - W^T X = Y A (plain) and Y - W^T Xhat
    = Y B (augmented): A = lam (X^T X + lam I)^{-1}, B likewise with the
    embedding Gram added."""
    n = inst.n
    gx = inst.x.T @ inst.x
    eb = inst.embedding_block
    ge = eb.T @ eb
    eye = np.eye(n)
    a = inst.lam * _solve_spd(gx + inst.lam * eye, eye)
    b = inst.lam * _solve_spd(gx + ge + inst.lam * eye, eye)
    return a, b


def verify_theorem1(inst: RidgeInstance) -> Theorem1Report:
    """Solve both models, evaluate the sufficient condition, and cross-check
    the residuals against the independent shrink-matrix identities.

    Violations are reported, never raised: the condition does not always
    hold and callers need both populations.
    """
    sol = solve_ridge(inst)
    cond = condition_matrix(inst)
    min_eig = min_eigenvalue(cond)
    holds = min_eig >= -psd_tolerance(cond)
    a, b = residual_shrink_matrices(inst)
    y_norm = max(float(np.linalg.norm(inst.y)), 1e-30)
    err_plain = float(np.linalg.norm((inst.y - sol.w_plain.T @ inst.x) - inst.y @ a)) / y_norm
    err_aug = float(
        np.linalg.norm((inst.y - sol.w_augmented.T @ inst.augmented_x) - inst.y @ b)
    ) / y_norm
    return Theorem1Report(
        condition_min_eigenvalue=min_eig,
        condition_holds=holds,
        loss_plain=sol.train_loss_plain,
        loss_augmented=sol.train_loss_augmented,
        inequality_holds=sol.train_loss_plain >= sol.train_loss_augmented - LOSS_TOL,
        residual_identity_error_plain=err_plain,
        residual_identity_error_augmented=err_aug,
    )


@dataclass
class BoundInputs:
    """Ingredients of the generalization upper bound.

    weight_norm_bound is the radius of the weight-norm ball; the bound's
    second factor is read as that same radius (see the sweep report note).
    """

    n: int
    delta: float
    feature_norm_bound: float
    weight_norm_bound: float
    empirical_loss: float

    def __post_init__(self):
        if self.n < 1:
            raise UsageError("n must be >= 1")
        if not (0.0 < self.delta < 1.0):
            raise UsageError(f"delta must lie strictly in (0,1), got {self.delta}")
        if self.feature_norm_bound < 0 or self.weight_norm_bound < 0:
            raise UsageError("norm bounds must be nonnegative")
        if self.empirical_loss < 0:
            raise UsageError("empirical loss must be nonnegative")


def bound_rhs(b: BoundInputs) -> float:
    """empirical loss + 4 X* B* sqrt(1/n) + 2 X* B* sqrt(log(1/delta)/(2n))."""
    xb = b.feature_norm_bound * b.weight_norm_bound
    return (
        b.empirical_loss
        + 4.0 * xb * math.sqrt(1.0 / b.n)
        + 2.0 * xb * math.sqrt(math.log(1.0 / b.delta) / (2.0 * b.n))
    )


@dataclass
class Theorem2Report:
    rhs_plain: float
    rhs_augmented: float
    condition_holds: bool
    ordering_holds: bool


def max_feature_norm(inst: RidgeInstance) -> float:
    """max over samples of the larger of ||x_i|| and ||augmented x_i||."""
    plain = np.sqrt((inst.x * inst.x).sum(axis=0)).max()
    aug = np.sqrt((inst.augmented_x * inst.augmented_x).sum(axis=0)).max()
    return float(max(plain, aug))


def verify_theorem2_ordering(
    inst: RidgeInstance, b_plain: BoundInputs, b_augmented: BoundInputs
) -> Theorem2Report:
    """Check that the two bounds share their complexity terms and order by
    training loss whenever the training-loss condition holds."""
    for field_name in ("n", "delta", "feature_norm_bound", "weight_norm_bound"):
        if getattr(b_plain, field_name) != getattr(b_augmented, field_name):
            raise UsageError(f"bound inputs must share {field_name}")
    if b_plain.n != inst.n:
        raise UsageError(f"bound n={b_plain.n} != instance n={inst.n}")
    if b_plain.feature_norm_bound < max_feature_norm(inst) - 1e-12:
        raise UsageError(
            "feature_norm_bound must dominate both plain and augmented sample norms"
        )
    t1 = verify_theorem1(inst)
    rhs_plain = bound_rhs(b_plain)
    rhs_aug = bound_rhs(b_augmented)
    return Theorem2Report(
        rhs_plain=rhs_plain,
        rhs_augmented=rhs_aug,
        condition_holds=t1.condition_holds,
        ordering_holds=rhs_aug <= rhs_plain + LOSS_TOL,
    )


@dataclass
class SweepRow:
    instance_id: int
    seed: int
    condition_min_eigenvalue: float
    loss1: float
    loss2: float
    rhs1: float
    rhs2: float
    condition_holds: bool
    inequality_holds: bool


def random_instance(
    rng: np.random.Generator, max_dim: int = 8, lambdas: Sequence[float] = (0.1, 1.0, 10.0)
) -> RidgeInstance:
    """Random dense instance with p, q, n, k <= max_dim and uniform entries."""
    p, q, n, k = (int(rng.integers(1, max_dim + 1)) for _ in range(4))
    return RidgeInstance(
        x=rng.uniform(-1.0, 1.0, size=(p, n)),
        y=rng.uniform(-1.0, 1.0, size=(k, n)),
        e=rng.uniform(-1.0, 1.0, size=q),
        lam=float(lambdas[int(rng.integers(0, len(lambdas)))]),
    )


def run_theorem_sweep(
    count: int,
    seed: int = 42,
    max_dim: int = 8,
    lambdas: Sequence[float] = (0.1, 1.0, 10.0),
    delta: float = 0.1,
    weight_norm_bound: float = 1.0,
) -> list[SweepRow]:
    """Seeded random-instance sweep over both theorem checks.

    Instances both satisfying and violating the condition are recorded;
    the losses and bound values are reported for every instance.
    """
    if count < 1:
        raise UsageError("count must be >= 1")
    rows = []
    for idx in range(count):
        rng = substream(seed, _SWEEP_KEY, idx)
        inst = random_instance(rng, max_dim=max_dim, lambdas=lambdas)
        t1 = verify_theorem1(inst)
        xb = max_feature_norm(inst)
        b_plain = BoundInputs(
            n=inst.n,
            delta=delta,
            feature_norm_bound=xb,
            weight_norm_bound=weight_norm_bound,
            empirical_loss=t1.loss_plain / inst.n,
        )
        b_aug = BoundInputs(
            n=inst.n,
            delta=delta,
            feature_norm_bound=xb,
            weight_norm_bound=weight_norm_bound,
            empirical_loss=t1.loss_augmented / inst.n,
        )
        rows.append(
            SweepRow(
                instance_id=idx,
                seed=seed,
                condition_min_eigenvalue=t1.condition_min_eigenvalue,
                loss1=t1.loss_plain,
                loss2=t1.loss_augmented,
                rhs1=bound_rhs(b_plain),
                rhs2=bound_rhs(b_aug),
                condition_holds=t1.condition_holds,
                inequality_holds=t1.inequality_holds,
            )
        )
    return rows
