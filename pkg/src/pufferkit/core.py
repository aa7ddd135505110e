"""Databases, data functions, secret graphs, distribution families and frameworks."""

import itertools
import logging
import math
from collections.abc import Mapping, Sequence
from enum import StrEnum
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .models import ConfigError, FrozenModel, ValidationError, frozen_array
from .sampling import standard_normal

logger = logging.getLogger(__name__)

PMF_TOLERANCE = 1e-12


class Database(FrozenModel):
    """An n x k real matrix: one row per individual, one column per attribute."""

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v: Any) -> np.ndarray:
        """Validate a finite 2-D matrix with n, k >= 1."""
        arr = frozen_array(v)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Database must be an n x k matrix, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Database entries must be finite")
        return arr

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "Database":
        return cls(values=rows)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def k(self) -> int:
        return int(self.values.shape[1])

    def vec(self) -> np.ndarray:
        """Row-major vectorization x(0,0), x(0,1), ..., x(n-1,k-1)."""
        return self.values.reshape(-1)


class FunctionKind(StrEnum):
    """Enumerated shapes a data function may take."""

    ROW = "row-selector"
    COMPLEMENT_ROWS = "complement-rows"
    COLUMN = "column-selector"
    COMPLEMENT_COLUMNS = "complement-columns"
    LINEAR = "linear"
    CUSTOM = "custom"
    CONSTANT = "constant"


_INDEXED_KINDS = {
    FunctionKind.ROW,
    FunctionKind.COMPLEMENT_ROWS,
    FunctionKind.COLUMN,
    FunctionKind.COMPLEMENT_COLUMNS,
}


class DataFunction(FrozenModel):
    """A query, private or public function on n x k databases."""

    kind: FunctionKind
    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    index: int | None = None
    weights: np.ndarray | None = None
    table: tuple[tuple[tuple[float, ...], tuple[float, ...]], ...] | None = None
    image: tuple[tuple[float, ...], ...] | None = None
    name: str = ""

    @field_validator("weights", mode="before")
    @classmethod
    def validate_weights(cls, v: Any) -> np.ndarray | None:
        if v is None:
            return None
        arr = frozen_array(v)
        if arr.ndim == 1:
            arr = frozen_array(arr.reshape(1, -1))
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise ValueError("Linear weights must be a finite d x (n*k) matrix")
        return arr

    @model_validator(mode="after")
    def validate_kind(self) -> "DataFunction":
        """Validate the payload matches the kind and the (n, k) shape."""
        nk = self.n * self.k
        if self.kind in _INDEXED_KINDS:
            by_row = self.kind in (FunctionKind.ROW, FunctionKind.COMPLEMENT_ROWS)
            bound = self.n if by_row else self.k
            if self.index is None or not 0 <= self.index < bound:
                raise ValueError(
                    f"{self.kind} index {self.index} out of range [0, {bound})"
                )
            if self.kind == FunctionKind.COMPLEMENT_ROWS and self.n < 2:
                raise ValueError("complement-rows needs n >= 2")
            if self.kind == FunctionKind.COMPLEMENT_COLUMNS and self.k < 2:
                raise ValueError("complement-columns needs k >= 2")
        elif self.kind == FunctionKind.LINEAR:
            if self.weights is None or self.weights.shape[1] != nk:
                raise ValueError(f"Linear weights must have {nk} columns")
        elif self.kind == FunctionKind.CUSTOM:
            if not self.table:
                raise ValueError("Custom functions need a non-empty table")
            widths = {len(out) for _, out in self.table}
            if len(widths) != 1 or 0 in widths:
                raise ValueError("Custom table outputs must share a positive length")
            if any(len(inp) != nk for inp, _ in self.table):
                raise ValueError(f"Custom table inputs must have length {nk}")
        return self

    # Constructors

    @classmethod
    def row_selector(cls, i: int, n: int, k: int) -> "DataFunction":
        return cls(kind=FunctionKind.ROW, index=i, n=n, k=k)

    @classmethod
    def complement_rows(cls, i: int, n: int, k: int) -> "DataFunction":
        return cls(kind=FunctionKind.COMPLEMENT_ROWS, index=i, n=n, k=k)

    @classmethod
    def column_selector(cls, j: int, n: int, k: int) -> "DataFunction":
        return cls(kind=FunctionKind.COLUMN, index=j, n=n, k=k)

    @classmethod
    def complement_columns(cls, j: int, n: int, k: int) -> "DataFunction":
        return cls(kind=FunctionKind.COMPLEMENT_COLUMNS, index=j, n=n, k=k)

    @classmethod
    def linear(cls, weights: Any, n: int, k: int, name: str = "") -> "DataFunction":
        return cls(kind=FunctionKind.LINEAR, weights=weights, n=n, k=k, name=name)

    @classmethod
    def constant(cls, n: int, k: int) -> "DataFunction":
        return cls(kind=FunctionKind.CONSTANT, n=n, k=k)

    @classmethod
    def custom(
        cls,
        table: Mapping[tuple[float, ...], Sequence[float]],
        n: int,
        k: int,
        image: Sequence[Sequence[float]] | None = None,
    ) -> "DataFunction":
        rows = tuple(
            (tuple(float(x) for x in inp), tuple(float(y) for y in out))
            for inp, out in table.items()
        )
        declared = None if image is None else tuple(tuple(map(float, a)) for a in image)
        return cls(kind=FunctionKind.CUSTOM, table=rows, image=declared, n=n, k=k)

    @classmethod
    def average(cls, n: int, k: int) -> "DataFunction":
        """Mean of all n*k entries (the row mean when k = 1)."""
        return cls.linear(np.full((1, n * k), 1.0 / (n * k)), n, k, name="avg")

    @classmethod
    def total(cls, n: int, k: int) -> "DataFunction":
        return cls.linear(np.ones((1, n * k)), n, k, name="sum")

    @classmethod
    def column_sum(cls, j: int, n: int, k: int, scale: float = 1.0) -> "DataFunction":
        weights = np.zeros((1, n * k))
        weights[0, j::k] = scale
        return cls.linear(weights, n, k, name=f"colsum({j})")

    # Shape and evaluation

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind in _INDEXED_KINDS:
            return f"{self.kind}({self.index})"
        return str(self.kind)

    @property
    def output_dim(self) -> int:
        n, k = self.n, self.k
        match self.kind:
            case FunctionKind.ROW:
                return k
            case FunctionKind.COMPLEMENT_ROWS:
                return (n - 1) * k
            case FunctionKind.COLUMN:
                return n
            case FunctionKind.COMPLEMENT_COLUMNS:
                return n * (k - 1)
            case FunctionKind.LINEAR:
                assert self.weights is not None
                return int(self.weights.shape[0])
            case FunctionKind.CUSTOM:
                assert self.table is not None
                return len(self.table[0][1])
        return 1

    @property
    def is_linear(self) -> bool:
        return self.kind != FunctionKind.CUSTOM

    def cells(self) -> list[int]:
        """Flattened cell indices read by a selector, in output order."""
        n, k, i = self.n, self.k, self.index
        match self.kind:
            case FunctionKind.ROW:
                return [i * k + c for c in range(k)]  # type: ignore[operator]
            case FunctionKind.COMPLEMENT_ROWS:
                return [r * k + c for r in range(n) if r != i for c in range(k)]
            case FunctionKind.COLUMN:
                return [r * k + i for r in range(n)]  # type: ignore[operator]
            case FunctionKind.COMPLEMENT_COLUMNS:
                return [r * k + c for r in range(n) for c in range(k) if c != i]
        raise ValidationError(f"{self.label} is not a selector")

    def matrix(self) -> np.ndarray:
        """The d x (n*k) matrix M with f(x) = M vec(x)."""
        nk = self.n * self.k
        if self.kind == FunctionKind.LINEAR:
            assert self.weights is not None
            return np.array(self.weights)
        if self.kind == FunctionKind.CONSTANT:
            return np.zeros((1, nk))
        if self.kind == FunctionKind.CUSTOM:
            raise ValidationError("Custom functions have no matrix form")
        cells = self.cells()
        mat = np.zeros((len(cells), nk))
        mat[np.arange(len(cells)), cells] = 1.0
        return mat

    def evaluate_many(self, values: np.ndarray) -> np.ndarray:
        """Evaluate on a stack of databases shaped (S, n, k); returns (S, d)."""
        stack = np.asarray(values, dtype=float)
        if stack.ndim != 3 or stack.shape[1:] != (self.n, self.k):
            raise ValidationError(
                f"{self.label} expects ({self.n}, {self.k}) databases, got {stack.shape[1:]}"
            )
        flat = stack.reshape(stack.shape[0], -1)
        if self.kind == FunctionKind.CUSTOM:
            assert self.table is not None
            lookup = dict(self.table)
            out = np.empty((flat.shape[0], self.output_dim))
            for s, row in enumerate(flat):
                key = tuple(float(x) for x in row)
                if key not in lookup:
                    raise ValidationError(f"Custom function undefined at {key}")
                out[s] = lookup[key]
            return out
        if self.kind == FunctionKind.CONSTANT:
            return np.zeros((flat.shape[0], 1))
        if self.kind == FunctionKind.LINEAR:
            return flat @ self.matrix().T
        return flat[:, self.cells()]

    def evaluate(self, x: Database) -> np.ndarray:
        return self.evaluate_many(x.values[np.newaxis])[0]


def evaluate_query(f: DataFunction, x: Database) -> np.ndarray:
    """Evaluate a query on a database, checking shapes."""
    if (x.n, x.k) != (f.n, f.k):
        raise ValidationError(f"Query built for {(f.n, f.k)} applied to {(x.n, x.k)}")
    return f.evaluate(x)


class BipartiteSecretGraph(FrozenModel):
    """Private functions, public functions and the edges pairing them."""

    privates: tuple[DataFunction, ...]
    publics: tuple[DataFunction, ...] = ()
    edges: tuple[tuple[int, int], ...] = ()
    allow_empty_public: bool = False

    @model_validator(mode="after")
    def validate_edges(self) -> "BipartiteSecretGraph":
        """Validate index ranges, duplicates and shape compatibility."""
        if not self.privates:
            raise ValueError("At least one private function is required")
        for g_idx, w_idx in self.edges:
            if not 0 <= g_idx < len(self.privates):
                raise ValueError(f"Edge ({g_idx},{w_idx}): private index out of range")
            if not 0 <= w_idx < len(self.publics):
                raise ValueError(f"Edge ({g_idx},{w_idx}): public index out of range")
        if len(set(self.edges)) != len(self.edges):
            raise ValueError("Duplicate edges")
        if not self.edges and not self.allow_empty_public:
            raise ValueError("Empty edge set requires allow_empty_public")
        shapes = {(f.n, f.k) for f in self.privates + self.publics}
        if len(shapes) != 1:
            raise ValueError(f"Functions disagree on database shape: {sorted(shapes)}")
        return self

    @property
    def shape(self) -> tuple[int, int]:
        g = self.privates[0]
        return g.n, g.k

    def secret_pairs(self) -> list[tuple[DataFunction, DataFunction]]:
        """Edge list (g, w); with no edges each private pairs with a constant."""
        if self.edges:
            return [(self.privates[g], self.publics[w]) for g, w in self.edges]
        const = DataFunction.constant(*self.shape)
        return [(g, const) for g in self.privates]

    def public_star(self) -> list[DataFunction]:
        """Public functions adjacent to some private function (constant if none)."""
        if not self.edges:
            return [DataFunction.constant(*self.shape)]
        used = sorted({w for _, w in self.edges})
        return [self.publics[w] for w in used]


# Distribution families


class DiscreteMember(FrozenModel):
    """One PMF over an enumerated database support."""

    index: int
    support: np.ndarray
    pmf: np.ndarray


class GaussianMember(FrozenModel):
    """vec(X) ~ N(mean, cov)."""

    index: int
    mean: np.ndarray
    cov: np.ndarray


class RowLaw(FrozenModel):
    """Law of a single database row, rows drawn i.i.d."""

    law: Literal["gaussian", "uniform", "bernoulli", "empirical"]
    dim: int = Field(..., ge=1)
    mean: tuple[float, ...] | None = None
    cov: tuple[tuple[float, ...], ...] | None = None
    low: float = 0.0
    high: float = 1.0
    p: tuple[float, ...] | None = None
    rows: np.ndarray | None = None

    @model_validator(mode="after")
    def validate_params(self) -> "RowLaw":
        if self.law == "gaussian":
            if self.mean is None or len(self.mean) != self.dim:
                raise ValueError("Gaussian row law needs a mean of length dim")
            if self.cov is not None:
                cov = np.array(self.cov, dtype=float)
                if cov.shape != (self.dim, self.dim):
                    raise ValueError("Gaussian row covariance must be dim x dim")
                if np.linalg.eigvalsh((cov + cov.T) / 2).min() < -1e-10:
                    raise ValueError("Gaussian row covariance must be PSD")
        elif self.law == "uniform":
            if not self.high > self.low:
                raise ValueError("Uniform row law needs high > low")
        elif self.law == "bernoulli":
            if self.p is None or len(self.p) != self.dim:
                raise ValueError("Bernoulli row law needs p of length dim")
            if any(not 0.0 <= q <= 1.0 for q in self.p):
                raise ValueError("Bernoulli probabilities must lie in [0, 1]")
        elif self.rows is None or np.asarray(self.rows).shape[1:] != (self.dim,):
            raise ValueError("Empirical row law needs rows shaped (count, dim)")
        return self

    def covariance(self) -> np.ndarray:
        match self.law:
            case "gaussian":
                return np.eye(self.dim) if self.cov is None else np.array(self.cov)
            case "uniform":
                return np.eye(self.dim) * (self.high - self.low) ** 2 / 12.0
            case "bernoulli":
                assert self.p is not None
                p = np.array(self.p)
                return np.diag(p * (1 - p))
        assert self.rows is not None
        return np.atleast_2d(np.cov(np.asarray(self.rows).T, bias=True))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw ``size`` rows, shape (size, dim)."""
        match self.law:
            case "gaussian":
                assert self.mean is not None
                vals, vecs = np.linalg.eigh(self.covariance())
                root = vecs * np.sqrt(np.clip(vals, 0.0, None))
                z = standard_normal(rng, (size, self.dim))
                return z @ root.T + np.array(self.mean)
            case "uniform":
                return self.low + (self.high - self.low) * rng.random((size, self.dim))
            case "bernoulli":
                assert self.p is not None
                return (rng.random((size, self.dim)) < np.array(self.p)).astype(float)
        assert self.rows is not None
        pool = np.asarray(self.rows, dtype=float)
        return pool[rng.integers(0, pool.shape[0], size)]


class SampledMember(FrozenModel):
    """Sample access to i.i.d. rows."""

    index: int
    row_law: RowLaw
    n: int
    k: int
    seed: int
    second_moment_bound: float | None = None

    def sample_databases(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.row_law.sample(rng, count * self.n).reshape(count, self.n, self.k)


FamilyMember = DiscreteMember | GaussianMember | SampledMember


class DiscreteFinite(FrozenModel):
    """Explicit PMFs over the grid alphabet^(n*k)."""

    variant: Literal["discrete"] = "discrete"
    alphabet: tuple[float, ...]
    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    pmfs: np.ndarray

    @field_validator("pmfs", mode="before")
    @classmethod
    def validate_pmfs(cls, v: Any) -> np.ndarray:
        arr = frozen_array(v)
        if arr.ndim == 1:
            arr = frozen_array(arr[np.newaxis])
        if arr.ndim != 2:
            raise ValueError("pmfs must be a (members, support) matrix")
        if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1.0) > PMF_TOLERANCE):
            raise ValueError("Every PMF must be non-negative and sum to 1")
        return arr

    @model_validator(mode="after")
    def validate_grid(self) -> "DiscreteFinite":
        if len(set(self.alphabet)) != len(self.alphabet) or not self.alphabet:
            raise ValueError("Alphabet must be non-empty with distinct symbols")
        if self.pmfs.shape[1] != self.support_size:
            raise ValueError(
                f"PMFs have {self.pmfs.shape[1]} cells, grid has {self.support_size}"
            )
        return self

    @property
    def support_size(self) -> int:
        return int(len(self.alphabet) ** (self.n * self.k))

    def support(self) -> np.ndarray:
        """All grid databases in lexicographic row-major order, (S, n, k)."""
        points = itertools.product(self.alphabet, repeat=self.n * self.k)
        return np.array(list(points), dtype=float).reshape(-1, self.n, self.k)

    def members(self) -> list[DiscreteMember]:
        support = self.support()
        return [
            DiscreteMember(index=i, support=support, pmf=pmf)
            for i, pmf in enumerate(self.pmfs)
        ]

    def image_of(self, g: DataFunction) -> list[tuple[float, ...]]:
        """Distinct values g takes on the grid."""
        values = g.evaluate_many(self.support())
        return sorted({tuple(row) for row in values.tolist()})

    @classmethod
    def uniform(cls, alphabet: Sequence[float], n: int, k: int) -> "DiscreteFinite":
        size = len(alphabet) ** (n * k)
        return cls(alphabet=tuple(alphabet), n=n, k=k, pmfs=np.full((1, size), 1.0 / size))

    @classmethod
    def point_masses(cls, alphabet: Sequence[float], n: int, k: int) -> "DiscreteFinite":
        size = len(alphabet) ** (n * k)
        return cls(alphabet=tuple(alphabet), n=n, k=k, pmfs=np.eye(size))

    @classmethod
    def product_bernoulli(
        cls, probabilities: Sequence[Sequence[float]], n: int, k: int
    ) -> "DiscreteFinite":
        """Members with independent Bernoulli(p_c) cells over the alphabet {0, 1}."""
        pmfs = []
        grid = np.array(list(itertools.product((0.0, 1.0), repeat=n * k)))
        for probs in probabilities:
            p = np.broadcast_to(np.asarray(probs, dtype=float), (n * k,))
            pmfs.append(np.prod(np.where(grid == 1.0, p, 1.0 - p), axis=1))
        return cls(alphabet=(0.0, 1.0), n=n, k=k, pmfs=np.array(pmfs))

    @classmethod
    def simplex_grid(
        cls, alphabet: Sequence[float], n: int, k: int, resolution: int
    ) -> "DiscreteFinite":
        """Every PMF whose masses are multiples of 1/resolution."""
        size = len(alphabet) ** (n * k)
        pmfs = []
        for bars in itertools.combinations(range(resolution + size - 1), size - 1):
            edges = (-1, *bars, resolution + size - 1)
            counts = [edges[i + 1] - edges[i] - 1 for i in range(size)]
            pmfs.append(np.array(counts, dtype=float) / resolution)
        logger.debug(f"Simplex grid with {len(pmfs)} members over {size} points")
        return cls(alphabet=tuple(alphabet), n=n, k=k, pmfs=np.array(pmfs))


class ProductGaussian(FrozenModel):
    """Independent N(mu_c, sigma_c^2) cells with |mu_c| <= m and sigma_c^2 <= s."""

    variant: Literal["product_gaussian"] = "product_gaussian"
    m: float = Field(..., ge=0.0, description="Mean bound")
    s: float = Field(..., gt=0.0, description="Variance bound")
    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)

    def members(self) -> list[GaussianMember]:
        """The variance-maximizing member; conditional variances are monotone in sigma_c^2."""
        nk = self.n * self.k
        return [GaussianMember(index=0, mean=np.full(nk, self.m), cov=self.s * np.eye(nk))]


class MultivariateGaussian(FrozenModel):
    """Rows i.i.d. N(mean, cov) in R^k."""

    variant: Literal["multivariate_gaussian"] = "multivariate_gaussian"
    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]
    n: int = Field(..., ge=1)

    @model_validator(mode="after")
    def validate_cov(self) -> "MultivariateGaussian":
        cov = np.array(self.cov, dtype=float)
        if cov.shape != (len(self.mean), len(self.mean)):
            raise ValueError("Covariance must be k x k with k = len(mean)")
        if not np.allclose(cov, cov.T) or np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("Covariance must be symmetric positive semidefinite")
        return self

    @property
    def k(self) -> int:
        return len(self.mean)

    def members(self) -> list[GaussianMember]:
        mean = np.tile(np.array(self.mean), self.n)
        cov = np.kron(np.eye(self.n), np.array(self.cov))
        return [GaussianMember(index=0, mean=mean, cov=cov)]


class SampleAccess(FrozenModel):
    """Seeded sampler of i.i.d. rows with a declared second-moment bound c."""

    variant: Literal["sample_access"] = "sample_access"
    row_law: RowLaw
    n: int = Field(..., ge=1)
    seed: int = 0
    second_moment_bound: float | None = None

    @field_validator("second_moment_bound")
    @classmethod
    def validate_bound(cls, v: float | None) -> float | None:
        if v is not None and not (math.isfinite(v) and v > 0):
            raise ValueError("Declared second-moment bound must be finite and positive")
        return v

    @property
    def k(self) -> int:
        return self.row_law.dim

    def members(self) -> list[SampledMember]:
        return [
            SampledMember(
                index=0,
                row_law=self.row_law,
                n=self.n,
                k=self.k,
                seed=self.seed,
                second_moment_bound=self.second_moment_bound,
            )
        ]


DistributionFamily = DiscreteFinite | ProductGaussian | MultivariateGaussian | SampleAccess


class PPFramework(FrozenModel):
    """A structured Pufferfish framework (privates, publics, edges, family)."""

    graph: BipartiteSecretGraph
    theta: DistributionFamily = Field(..., discriminator="variant")
    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)

    @model_validator(mode="after")
    def validate_shapes(self) -> "PPFramework":
        if self.graph.shape != (self.n, self.k):
            raise ValueError(f"Graph is built for {self.graph.shape}, not {(self.n, self.k)}")
        if (self.theta.n, self.theta.k) != (self.n, self.k):
            raise ValueError("Distribution family shape disagrees with (n, k)")
        return self

    def members(self) -> list[FamilyMember]:
        return list(self.theta.members())

    def check_query(self, f: DataFunction) -> None:
        if (f.n, f.k) != (self.n, self.k):
            raise ValidationError(f"Query {f.label} built for {(f.n, f.k)}")


# Framework configuration


class FunctionConfig(BaseModel):
    """Declarative form of a DataFunction."""

    kind: FunctionKind
    index: int | None = None
    weights: list[list[float]] | None = None
    table: list[dict[str, list[float]]] | None = None
    image: list[list[float]] | None = None
    name: str = ""


class ThetaConfig(BaseModel):
    """Declarative form of a distribution family."""

    variant: Literal["discrete", "product_gaussian", "multivariate_gaussian", "sample_access"]
    alphabet: list[float] | None = None
    pmfs: list[list[float]] | None = None
    grid: Literal["uniform", "point_masses", "simplex"] | None = None
    resolution: int = 4
    bernoulli: list[list[float]] | None = None
    m: float | None = None
    s: float | None = None
    mean: list[float] | None = None
    cov: list[list[float]] | None = None
    law: dict[str, Any] | None = None
    seed: int = 0
    second_moment_bound: float | None = None


class FrameworkConfig(BaseModel):
    """Framework description as read from TOML or JSON."""

    n: int = Field(..., ge=1)
    k: int = Field(..., ge=1)
    preset: Literal["dp", "ap", "ap_public"] | None = None
    ap_statistic: Literal["column", "sum", "mean"] = "column"
    privates: list[FunctionConfig] = Field(default_factory=list)
    publics: list[FunctionConfig] = Field(default_factory=list)
    edges: list[tuple[int, int]] = Field(default_factory=list)
    theta: ThetaConfig


def _build_function(spec: FunctionConfig, n: int, k: int) -> DataFunction:
    table = None
    if spec.table is not None:
        table = tuple(
            (tuple(row["input"]), tuple(row["output"])) for row in spec.table
        )
    image = None if spec.image is None else tuple(tuple(a) for a in spec.image)
    return DataFunction(
        kind=spec.kind,
        n=n,
        k=k,
        index=spec.index,
        weights=spec.weights,
        table=table,
        image=image,
        name=spec.name,
    )


def _preset_graph(cfg: FrameworkConfig) -> BipartiteSecretGraph:
    n, k = cfg.n, cfg.k
    if cfg.preset == "dp":
        return BipartiteSecretGraph(
            privates=tuple(DataFunction.row_selector(i, n, k) for i in range(n)),
            publics=tuple(DataFunction.complement_rows(i, n, k) for i in range(n)),
            edges=tuple((i, i) for i in range(n)),
        )
    if cfg.ap_statistic == "column":
        privates = tuple(DataFunction.column_selector(j, n, k) for j in range(k))
    else:
        scale = 1.0 if cfg.ap_statistic == "sum" else 1.0 / n
        privates = tuple(DataFunction.column_sum(j, n, k, scale) for j in range(k))
    if cfg.preset == "ap":
        return BipartiteSecretGraph(privates=privates, allow_empty_public=True)
    return BipartiteSecretGraph(
        privates=privates,
        publics=tuple(DataFunction.complement_columns(j, n, k) for j in range(k)),
        edges=tuple((j, j) for j in range(k)),
    )


def _build_theta(spec: ThetaConfig, n: int, k: int) -> DistributionFamily:
    match spec.variant:
        case "discrete":
            alphabet = spec.alphabet or [0.0, 1.0]
            if spec.bernoulli is not None:
                return DiscreteFinite.product_bernoulli(spec.bernoulli, n, k)
            if spec.grid == "uniform":
                return DiscreteFinite.uniform(alphabet, n, k)
            if spec.grid == "point_masses":
                return DiscreteFinite.point_masses(alphabet, n, k)
            if spec.grid == "simplex":
                return DiscreteFinite.simplex_grid(alphabet, n, k, spec.resolution)
            if spec.pmfs is None:
                raise ValueError("discrete theta needs pmfs, grid or bernoulli")
            return DiscreteFinite(alphabet=tuple(alphabet), n=n, k=k, pmfs=spec.pmfs)
        case "product_gaussian":
            if spec.m is None or spec.s is None:
                raise ValueError("product_gaussian theta needs m and s")
            return ProductGaussian(m=spec.m, s=spec.s, n=n, k=k)
        case "multivariate_gaussian":
            if spec.mean is None or spec.cov is None:
                raise ValueError("multivariate_gaussian theta needs mean and cov")
            return MultivariateGaussian(
                mean=tuple(spec.mean), cov=tuple(map(tuple, spec.cov)), n=n
            )
    if spec.law is None:
        raise ValueError("sample_access theta needs a row law")
    return SampleAccess(
        row_law=RowLaw(**{"dim": k, **spec.law}),
        n=n,
        seed=spec.seed,
        second_moment_bound=spec.second_moment_bound,
    )


def build_framework(config: FrameworkConfig | Mapping[str, Any]) -> PPFramework:
    """Validate a framework description and build the PPFramework."""
    try:
        cfg = config if isinstance(config, FrameworkConfig) else FrameworkConfig(**config)
    except PydanticValidationError as e:
        logger.error(f"Malformed framework config: {e}")
        raise ConfigError(f"Malformed framework config: {e}") from e

    n, k = cfg.n, cfg.k
    try:
        if cfg.preset is not None:
            graph = _preset_graph(cfg)
        else:
            graph = BipartiteSecretGraph(
                privates=tuple(_build_function(s, n, k) for s in cfg.privates),
                publics=tuple(_build_function(s, n, k) for s in cfg.publics),
                edges=tuple(tuple(e) for e in cfg.edges),
                allow_empty_public=not cfg.publics,
            )
        theta = _build_theta(cfg.theta, n, k)
        framework = PPFramework(graph=graph, theta=theta, n=n, k=k)
    except (PydanticValidationError, ValueError) as e:
        logger.error(f"Invalid framework: {e}")
        raise ValidationError(f"Invalid framework: {e}") from e

    logger.info(
        f"Built framework n={n} k={k} with {len(graph.privates)} privates, "
        f"{len(graph.publics)} publics, {len(graph.edges)} edges"
    )
    return framework


def named_query(spec: str, n: int, k: int) -> DataFunction:
    """Resolve query shorthands: avg, sum, row:i, column:j, colsum:j, linear:w1,w2,..."""
    name, _, arg = spec.partition(":")
    try:
        match name:
            case "avg":
                return DataFunction.average(n, k)
            case "sum":
                return DataFunction.total(n, k)
            case "row":
                return DataFunction.row_selector(int(arg), n, k)
            case "column":
                return DataFunction.column_selector(int(arg), n, k)
            case "colsum":
                return DataFunction.column_sum(int(arg), n, k)
            case "linear":
                weights = [float(w) for w in arg.split(",")]
                return DataFunction.linear(weights, n, k, name=spec)
    except ValueError as e:
        raise ValidationError(f"Bad query {spec!r}: {e}") from e
    raise ValidationError(f"Unknown query shorthand: {spec}")
