"""
Per-feature general linear model tests for confounding.

Each feature column f^j is regressed on [1, s, z_1 .. z_K] (intercept,
prediction score, confounders). A feature is confounded when the t-test of
at least one confounder coefficient gives p < alpha; the binary mask b has
b^j = 0 for confounded features and 1 otherwise.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import solve_triangular

from .tdist import t_pvalue, two_sample_t_test
from ..data.synthdata import Dataset
from ..utils.errors import (
    ContractError,
    DegreesOfFreedomError,
    ShapeError,
    SingularDesignError,
)

logger = structlog.get_logger(__name__)

INTERCEPT = "intercept"
SCORE = "score"
DEGENERATE_RSS = 1e-12
DEGENERATE_BETA = 1e-8
COLLINEAR_TOL = 1e-10
SWEEP_ALPHAS = (0.05, 0.01, 0.001)


@dataclass(frozen=True)
class FeatureMatrix:
    """N x M feature values (rows = images) with the id of the model that produced them."""
    values: np.ndarray
    model_id: str = ""

    def __post_init__(self):
        if np.ndim(self.values) != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {np.shape(self.values)}")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class GlmFit:
    """OLS coefficients and t-tests for one response column."""
    covariate_names: List[str]
    beta: np.ndarray
    se: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    residual_dof: int
    rss: float
    degenerate: bool = False

    @property
    def confounder_p_values(self) -> np.ndarray:
        return self.p_values[2:]


class GlmDesign:
    """
    QR factorization of the design [1, s, Z], shared by every feature column.

    Raises:
        DegreesOfFreedomError: N <= K + 2.
        SingularDesignError: a column lies in the span of the previous ones.
    """

    def __init__(self, s: Sequence[float], z: np.ndarray, confounder_names: Optional[Sequence[str]] = None):
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        if z.shape[0] != s.shape[0]:
            raise ShapeError(f"score has {s.shape[0]} rows, confounders have {z.shape[0]}")
        n, k = z.shape
        names = list(confounder_names) if confounder_names is not None else [f"z{i}" for i in range(k)]
        if len(names) != k:
            raise ShapeError(f"{len(names)} confounder names for {k} confounder columns")
        if n <= k + 2:
            raise DegreesOfFreedomError(f"GLM needs more than {k + 2} observations, got {n}")
        if not (np.isfinite(s).all() and np.isfinite(z).all()):
            raise ContractError("score and confounders must be finite")

        self.covariate_names = [INTERCEPT, SCORE] + names
        self.x = np.column_stack([np.ones(n), s, z])
        self.n_samples = n
        self.n_confounders = k
        self.residual_dof = n - k - 2

        self._q, self._r = np.linalg.qr(self.x)
        column_norms = np.linalg.norm(self.x, axis=0)
        for index, name in enumerate(self.covariate_names):
            if column_norms[index] == 0.0 or abs(self._r[index, index]) <= COLLINEAR_TOL * column_norms[index]:
                raise SingularDesignError(name)
        r_inv = solve_triangular(self._r, np.eye(self._r.shape[0]))
        self._unscaled_var = np.sum(r_inv ** 2, axis=1)

    def fit(self, y: Sequence[float]) -> GlmFit:
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != self.n_samples:
            raise ShapeError(f"response has {y.shape[0]} rows, design has {self.n_samples}")
        if not np.isfinite(y).all():
            raise ContractError("response contains non-finite values")
        beta = solve_triangular(self._r, self._q.T @ y)
        residual = y - self.x @ beta
        rss = float(residual @ residual)
        dof = self.residual_dof

        if rss < DEGENERATE_RSS * self.n_samples:
            nonzero = np.abs(beta) > DEGENERATE_BETA
            return GlmFit(
                covariate_names=list(self.covariate_names),
                beta=beta,
                se=np.zeros_like(beta),
                t_stats=np.where(nonzero, np.copysign(np.inf, beta), 0.0),
                p_values=np.where(nonzero, 0.0, 1.0),
                residual_dof=dof,
                rss=rss,
                degenerate=True,
            )

        se = np.sqrt(rss / dof * self._unscaled_var)
        t_stats = beta / se
        p_values = np.array([t_pvalue(float(t), dof) for t in t_stats])
        return GlmFit(list(self.covariate_names), beta, se, t_stats, p_values, dof, rss)


def fit_glm(f_j: Sequence[float], s: Sequence[float], z: np.ndarray,
            confounder_names: Optional[Sequence[str]] = None) -> GlmFit:
    """OLS fit of f_j = b0 + b1 s + sum_k b_k z_k with two-sided t-tests."""
    return GlmDesign(s, z, confounder_names).fit(f_j)


@dataclass(frozen=True, eq=False)
class FeatureTest:
    confounded: bool
    confounder_p_values: np.ndarray
    fit: GlmFit


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ContractError(f"alpha must lie in (0, 1), got {alpha}")


def test_feature(f_j: Sequence[float], s: Sequence[float], z: np.ndarray, alpha: float,
                 design: Optional[GlmDesign] = None) -> FeatureTest:
    """Confounded iff min over confounders of p < alpha; the score's p-value is not used."""
    _check_alpha(alpha)
    fit = (design or GlmDesign(s, z)).fit(f_j)
    p_conf = fit.confounder_p_values
    return FeatureTest(bool(np.min(p_conf) < alpha), p_conf, fit)


# not a pytest test function
test_feature.__test__ = False


@dataclass(eq=False)
class ConfoundMask:
    """Binary mask b (0 = confounded, removed) with the per-feature evidence."""
    bits: np.ndarray
    alpha: float
    effective_alpha: float
    min_p: np.ndarray
    fits: List[Optional[GlmFit]] = field(default_factory=list)
    zero_variance: List[int] = field(default_factory=list)
    failed: Dict[int, str] = field(default_factory=dict)
    confounder_names: List[str] = field(default_factory=list)

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "ConfoundMask":
        """A mask given directly (inline or from a file) rather than by testing."""
        array = np.asarray(bits, dtype=np.int8).reshape(-1)
        if not np.isin(array, (0, 1)).all():
            raise ContractError("mask bits must be 0 or 1")
        return cls(bits=array, alpha=float("nan"), effective_alpha=float("nan"),
                   min_p=np.full(array.shape, np.nan))

    def __len__(self) -> int:
        return int(self.bits.shape[0])

    @property
    def confounded_indices(self) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.bits == 0)]

    @property
    def confounded_count(self) -> int:
        return int(np.sum(self.bits == 0))

    def as_bitstring(self) -> str:
        return "".join(str(int(b)) for b in self.bits)

    def count_below(self, alpha: float) -> int:
        return int(np.sum(np.nan_to_num(self.min_p, nan=1.0) < alpha))


def build_confound_mask(
    features,
    s: Sequence[float],
    z: np.ndarray,
    alpha: float,
    bonferroni: bool = False,
    confounder_names: Optional[Sequence[str]] = None,
) -> ConfoundMask:
    """
    Test every feature column and assemble the mask.

    Zero-variance columns are unconfounded and listed in ``zero_variance``;
    columns whose fit fails are kept (b = 1) and listed in ``failed``. With
    ``bonferroni`` the threshold becomes alpha / (M * K).
    """
    _check_alpha(alpha)
    values = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got shape {values.shape}")
    design = GlmDesign(s, z, confounder_names)
    n_features = values.shape[1]
    effective_alpha = alpha / (n_features * design.n_confounders) if bonferroni else alpha

    bits = np.ones(n_features, dtype=np.int8)
    min_p = np.full(n_features, np.nan)
    fits: List[Optional[GlmFit]] = []
    zero_variance: List[int] = []
    failed: Dict[int, str] = {}
    for j in range(n_features):
        column = values[:, j]
        if np.isfinite(column).all() and np.ptp(column) == 0.0:
            zero_variance.append(j)
            fits.append(None)
            continue
        try:
            result = test_feature(column, s, z, effective_alpha, design=design)
        except ContractError as e:
            failed[j] = str(e)
            fits.append(None)
            continue
        fits.append(result.fit)
        min_p[j] = float(np.min(result.confounder_p_values))
        if result.confounded:
            bits[j] = 0

    mask = ConfoundMask(
        bits=bits,
        alpha=alpha,
        effective_alpha=effective_alpha,
        min_p=min_p,
        fits=fits,
        zero_variance=zero_variance,
        failed=failed,
        confounder_names=design.covariate_names[2:],
    )
    logger.info("glm.mask", features=n_features, confounded=mask.confounded_count,
                zero_variance=len(zero_variance), failed=len(failed), alpha=effective_alpha)
    return mask


def alpha_sweep(mask: ConfoundMask, n_confounders: int) -> Dict[str, int]:
    """Confounded-feature counts at standard thresholds, including Bonferroni 0.05."""
    sweep = {f"{a:g}": mask.count_below(a) for a in SWEEP_ALPHAS}
    bonferroni = 0.05 / (len(mask) * max(n_confounders, 1))
    sweep["bonferroni_0.05"] = mask.count_below(bonferroni)
    return sweep


def confounder_group_differences(dataset: Dataset, names: Sequence[str]) -> Dict[str, Tuple[float, float, int]]:
    """Two-sample t-test (Group 2 vs Group 1) of each named covariate."""
    groups = dataset.groups()
    matrix = dataset.covariate_matrix(names)
    return {
        name: two_sample_t_test(matrix[groups == 1, k], matrix[groups == 2, k])
        for k, name in enumerate(names)
    }
