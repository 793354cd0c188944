"""Non-IID client partitioning of labeled datasets.

Client sizes, per-client class distributions and (optionally) per-client
categorical-feature distributions are drawn from Dirichlet priors.  The
ideal per-client sample counts they imply rarely satisfy the dataset's
actual per-group totals, so a feasible allocation is found by minimizing
a quadratic objective over the transportation polytope (fixed row and
column sums, nonnegative entries), then randomized by a best-of random
walk, rounded to integers, and materialized as client datasets.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import ClientDataset, TabularDataset, build_client_datasets
from .errors import ConsistencyError, InfeasibleError, ParameterError
from .rng import derive_rng

logger = logging.getLogger(__name__)

# Full-loss resync cadence during the random walk; between resyncs the
# loss is maintained incrementally from the four entries each step moves.
RESYNC_EVERY = 10_000


# ---------------------------------------------------------------------------
# Priors and Dirichlet sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DirichletPriors:
    """Concentration parameters controlling partition heterogeneity.

    ``mu`` drives client sizes, ``lam`` class mixtures (one shared value
    for all clients), ``theta`` categorical-feature mixtures.  Smaller
    values produce more skewed draws.
    """

    mu: float
    lam: float
    n_clients: int
    n_classes: int
    theta: float | None = None
    feature_arities: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0:
            raise ParameterError("mu and lam must be positive")
        if self.theta is not None and self.theta <= 0:
            raise ParameterError("theta must be positive when given")
        if self.n_clients < 2 or self.n_classes < 2:
            raise ParameterError("need at least 2 clients and 2 classes")
        if any(d < 1 for d in self.feature_arities):
            raise ParameterError("feature arities must be at least 1")


def sample_dirichlet(
    concentration: float, dim: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw one Dirichlet vector via normalized unit-scale gamma draws."""
    if concentration <= 0:
        raise ParameterError("concentration must be positive")
    if dim < 1:
        raise ParameterError("dim must be at least 1")
    while True:
        gammas = rng.gamma(concentration, 1.0, size=dim)
        total = gammas.sum()
        if total > 0:
            return gammas / total
        # all draws underflowed to zero (possible for tiny concentration)
        logger.warning("sample_dirichlet: all gamma draws underflowed, resampling")


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


@dataclass
class PartitionTarget:
    """Marginal targets and polytope constraints for one partitioning run.

    Columns index the allocation groups (classes, or class/category
    configurations).  The quadratic objective compares block marginals of
    an allocation against ``marginal_targets``: block 0 holds per-client
    class targets, subsequent blocks per-client feature-category targets.
    ``col_cells[g, b]`` is the flat marginal cell that column ``g``
    contributes to in block ``b``.
    """

    row_sums: np.ndarray                 # (T,) desired client sizes
    col_sums: np.ndarray                 # (G,) per-group sample totals
    marginal_targets: np.ndarray         # (T, n_cells)
    group_sizes: tuple[int, ...]         # cells per block
    col_cells: np.ndarray                # (G, n_blocks)
    configs: tuple[tuple[int, ...], ...] | None = None
    _indicator: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.row_sums = np.asarray(self.row_sums, dtype=np.float64)
        self.col_sums = np.asarray(self.col_sums, dtype=np.float64)
        self.marginal_targets = np.asarray(self.marginal_targets, dtype=np.float64)
        self.col_cells = np.asarray(self.col_cells, dtype=np.int64)
        total_r, total_c = self.row_sums.sum(), self.col_sums.sum()
        if abs(total_r - total_c) > 1e-9 * max(total_r, 1.0):
            raise ConsistencyError(
                f"row and column totals disagree: {total_r!r} vs {total_c!r}"
            )
        if (self.row_sums < 0).any() or (self.col_sums < 0).any():
            raise ParameterError("marginals must be nonnegative")

    @property
    def n_clients(self) -> int:
        return len(self.row_sums)

    @property
    def n_groups(self) -> int:
        return len(self.col_sums)

    @property
    def total(self) -> float:
        return float(self.col_sums.sum())

    @property
    def indicator(self) -> np.ndarray:
        """(G, n_cells) 0/1 matrix mapping columns to marginal cells."""
        if self._indicator is None:
            n_cells = sum(self.group_sizes)
            ind = np.zeros((self.n_groups, n_cells))
            for b in range(self.col_cells.shape[1]):
                ind[np.arange(self.n_groups), self.col_cells[:, b]] = 1.0
            self._indicator = ind
        return self._indicator

    def loss(self, counts: np.ndarray) -> float:
        resid = counts @ self.indicator - self.marginal_targets
        return float(np.einsum("ij,ij->", resid, resid))

    def grad(self, counts: np.ndarray) -> np.ndarray:
        resid = counts @ self.indicator - self.marginal_targets
        return 2.0 * resid @ self.indicator.T

    def lipschitz(self) -> float:
        """Upper bound on the objective's gradient Lipschitz constant."""
        bound = 0.0
        offset = 0
        for b, size in enumerate(self.group_sizes):
            counts = np.bincount(self.col_cells[:, b] - offset, minlength=size)
            bound += float(counts.max())
            offset += size
        return 2.0 * bound


def target_from_class_draws(
    sizes: np.ndarray, class_dists: np.ndarray, class_totals: np.ndarray
) -> PartitionTarget:
    """Build a class/size target from explicit Dirichlet draws."""
    sizes = np.asarray(sizes, dtype=np.float64)
    class_dists = np.asarray(class_dists, dtype=np.float64)
    class_totals = np.asarray(class_totals, dtype=np.float64)
    if (class_totals <= 0).any():
        raise ParameterError("every class must have at least one sample")
    n = float(class_totals.sum())
    k = len(class_totals)
    desired = class_dists * (sizes * n)[:, None]
    return PartitionTarget(
        row_sums=sizes * n,
        col_sums=class_totals,
        marginal_targets=desired,
        group_sizes=(k,),
        col_cells=np.arange(k, dtype=np.int64)[:, None],
        configs=None,
    )


def build_target_class_size(
    priors: DirichletPriors,
    class_totals: np.ndarray,
    rng: np.random.Generator,
) -> PartitionTarget:
    """Draw sizes and class mixtures, then assemble the class/size target."""
    class_totals = np.asarray(class_totals)
    if len(class_totals) != priors.n_classes:
        raise ParameterError("class_totals length must match priors.n_classes")
    sizes = sample_dirichlet(priors.mu, priors.n_clients, rng)
    class_dists = np.vstack(
        [sample_dirichlet(priors.lam, priors.n_classes, rng)
         for _ in range(priors.n_clients)]
    )
    return target_from_class_draws(sizes, class_dists, class_totals)


def target_from_full_draws(
    sizes: np.ndarray,
    class_dists: np.ndarray,
    feature_dists: list[np.ndarray],
    config_totals: dict[tuple[int, ...], int],
) -> PartitionTarget:
    """Build a feature/class/size target from explicit draws.

    ``config_totals`` maps (class, category...) tuples to their sample
    counts in the dataset; configurations with zero count are dropped.
    """
    sizes = np.asarray(sizes, dtype=np.float64)
    class_dists = np.asarray(class_dists, dtype=np.float64)
    n_classes = class_dists.shape[1]
    arities = tuple(f.shape[1] for f in feature_dists)

    kept: list[tuple[int, ...]] = []
    for u in sorted(config_totals):
        if len(u) != 1 + len(arities):
            raise ParameterError(f"configuration {u} has wrong length")
        if u[0] >= n_classes or any(u[1 + j] >= arities[j] for j in range(len(arities))):
            raise ParameterError(f"configuration {u} is out of range")
        if config_totals[u] <= 0:
            logger.warning("dropping configuration %s with zero samples", u)
            continue
        kept.append(u)
    if not kept:
        raise ParameterError("no configurations with positive counts")

    col_sums = np.array([config_totals[u] for u in kept], dtype=np.float64)
    n = float(col_sums.sum())
    scaled = (sizes * n)[:, None]

    blocks = [class_dists * scaled]
    group_sizes = [n_classes]
    for f in feature_dists:
        blocks.append(np.asarray(f, dtype=np.float64) * scaled)
        group_sizes.append(f.shape[1])
    offsets = np.concatenate([[0], np.cumsum(group_sizes)[:-1]])
    col_cells = np.array(
        [[offsets[b] + u[b] for b in range(len(group_sizes))] for u in kept],
        dtype=np.int64,
    )
    return PartitionTarget(
        row_sums=sizes * n,
        col_sums=col_sums,
        marginal_targets=np.hstack(blocks),
        group_sizes=tuple(group_sizes),
        col_cells=col_cells,
        configs=tuple(kept),
    )


def build_target_full(
    priors: DirichletPriors,
    config_totals: dict[tuple[int, ...], int],
    rng: np.random.Generator,
) -> PartitionTarget:
    """Draw sizes, class and feature mixtures, then assemble the full target."""
    if priors.theta is None:
        raise ParameterError("feature-aware targets require theta")
    if not priors.feature_arities:
        raise ParameterError("feature-aware targets require feature_arities")
    sizes = sample_dirichlet(priors.mu, priors.n_clients, rng)
    class_dists = np.vstack(
        [sample_dirichlet(priors.lam, priors.n_classes, rng)
         for _ in range(priors.n_clients)]
    )
    feature_dists = []
    for arity in priors.feature_arities:
        feature_dists.append(
            np.vstack(
                [sample_dirichlet(priors.theta, arity, rng)
                 for _ in range(priors.n_clients)]
            )
        )
    return target_from_full_draws(sizes, class_dists, feature_dists, config_totals)


# ---------------------------------------------------------------------------
# Feasible allocations and the QP
# ---------------------------------------------------------------------------


@dataclass
class PartitionMatrix:
    """Nonnegative allocation with fixed row and column sums."""

    counts: np.ndarray
    row_sums: np.ndarray
    col_sums: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.row_sums = np.asarray(self.row_sums, dtype=np.float64)
        self.col_sums = np.asarray(self.col_sums, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.row_sums.sum())

    def validate(self, tol: float = 1e-6) -> None:
        scale = max(self.total, 1.0)
        if (self.counts < 0).any():
            raise ConsistencyError("allocation has negative entries")
        row_err = np.abs(self.counts.sum(axis=1) - self.row_sums).max()
        col_err = np.abs(self.counts.sum(axis=0) - self.col_sums).max()
        if row_err > tol * scale or col_err > tol * scale:
            raise ConsistencyError(
                f"allocation violates marginals (row {row_err:.3g}, col {col_err:.3g})"
            )


def transport_project(
    x: np.ndarray,
    row_sums: np.ndarray,
    col_sums: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 20_000,
) -> np.ndarray:
    """Euclidean projection onto the transportation polytope (Dykstra).

    Cycles through the row-sum and column-sum affine sets and the
    nonnegative orthant with Dykstra corrections, so the limit is the
    true projection of ``x``, not merely a feasible point.
    """
    x = np.asarray(x, dtype=np.float64)
    row_sums = np.asarray(row_sums, dtype=np.float64)
    col_sums = np.asarray(col_sums, dtype=np.float64)
    total_r, total_c = row_sums.sum(), col_sums.sum()
    scale = max(total_r, 1.0)
    if abs(total_r - total_c) > 1e-9 * scale:
        raise InfeasibleError(
            f"inconsistent marginals: rows sum to {total_r!r}, columns to {total_c!r}"
        )
    n_rows, n_cols = x.shape
    a = x.copy()
    p_row = np.zeros_like(a)
    p_col = np.zeros_like(a)
    p_pos = np.zeros_like(a)
    for _ in range(max_iter):
        y = a + p_row
        nxt = y + ((row_sums - y.sum(axis=1)) / n_cols)[:, None]
        p_row = y - nxt
        y = nxt + p_col
        nxt = y + ((col_sums - y.sum(axis=0)) / n_rows)[None, :]
        p_col = y - nxt
        y = nxt + p_pos
        a = np.maximum(y, 0.0)
        p_pos = y - a
        row_err = np.abs(a.sum(axis=1) - row_sums).max()
        col_err = np.abs(a.sum(axis=0) - col_sums).max()
        if row_err <= tol * scale and col_err <= tol * scale:
            break
    return a


def solve_qp(
    target: PartitionTarget,
    tol: float = 1e-12,
    max_iter: int = 2_000,
) -> PartitionMatrix:
    """Minimize the marginal-deviation objective over the polytope.

    Projected gradient descent with exact step 1/L; the inner projection
    is :func:`transport_project`.  For pure class/size targets the
    objective is squared distance to the desired allocation, the gradient
    step lands exactly on it, and the method reduces to a single
    projection.
    """
    rows, cols = target.row_sums, target.col_sums
    step = 1.0 / target.lipschitz()
    # independence allocation: always feasible
    counts = np.outer(rows, cols) / max(target.total, 1.0)
    prev = target.loss(counts)
    for _ in range(max_iter):
        counts = transport_project(counts - step * target.grad(counts), rows, cols)
        loss = target.loss(counts)
        if prev - loss <= tol * max(abs(prev), 1.0):
            break
        prev = loss
    mat = PartitionMatrix(counts=counts, row_sums=rows.copy(), col_sums=cols.copy())
    mat.validate()
    return mat


# ---------------------------------------------------------------------------
# Randomized solutions
# ---------------------------------------------------------------------------


def _two_sum_exact(a: float, b: float) -> bool:
    """True when the float addition a + b is exact (2Sum error term is 0)."""
    s = a + b
    ap = s - b
    bp = s - ap
    return (a - ap) + (b - bp) == 0.0


def _exact_delta(a1: float, a2: float, b1: float, b2: float, eps: float) -> float:
    """Largest power-of-two delta <= eps whose four entry updates are exact.

    a1, a2 are decreased, b1, b2 increased.  Power-of-two deltas align
    with the operands' binades almost always; halving covers the rest.
    Returns 0.0 when no representable delta applies exactly.
    """
    if eps <= 0.0:
        return 0.0
    d = 2.0 ** math.floor(math.log2(eps))
    while d > 0.0:
        if (
            _two_sum_exact(a1, -d)
            and _two_sum_exact(a2, -d)
            and _two_sum_exact(b1, d)
            and _two_sum_exact(b2, d)
        ):
            return d
        d *= 0.5
    return 0.0


def _randomize_inplace(
    counts: np.ndarray, xi: float, rng: np.random.Generator
) -> tuple[int, int, int, int, float] | None:
    """Apply one random rectangle move to ``counts``; None when a no-op.

    Picks distinct rows (i, i2) and distinct columns (j, j2), draws
    eps ~ uniform(0, min(counts[i,j], counts[i2,j2], xi)) and moves a
    delta <= eps between the four rectangle corners.  The delta is chosen
    so all four float updates are exact, which preserves row and column
    sums in exact arithmetic and keeps entries nonnegative forever.
    """
    n_rows, n_cols = counts.shape
    i = int(rng.integers(n_rows))
    i2 = int(rng.integers(n_rows))
    while i2 == i:
        i2 = int(rng.integers(n_rows))
    j = int(rng.integers(n_cols))
    j2 = int(rng.integers(n_cols))
    while j2 == j:
        j2 = int(rng.integers(n_cols))
    a1 = counts[i, j]
    a2 = counts[i2, j2]
    b1 = counts[i, j2]
    b2 = counts[i2, j]
    hi = min(a1, a2, xi)
    eps = float(rng.uniform(0.0, hi)) if hi > 0.0 else 0.0
    d = _exact_delta(a1, a2, b1, b2, eps)
    if d == 0.0:
        return None
    counts[i, j] = a1 - d
    counts[i2, j2] = a2 - d
    counts[i, j2] = b1 + d
    counts[i2, j] = b2 + d
    return i, i2, j, j2, d


def randomize_step(
    mat: PartitionMatrix, xi: float, rng: np.random.Generator
) -> PartitionMatrix:
    """One random rectangle move; returns a new allocation.

    Feasibility is preserved exactly: the four modified entries change by
    one common delta whose additions and subtractions are all exact in
    binary64.
    """
    if xi <= 0:
        raise ParameterError("xi must be positive")
    if mat.counts.shape[0] < 2 or mat.counts.shape[1] < 2:
        raise ParameterError("randomize_step needs at least a 2x2 allocation")
    counts = mat.counts.copy()
    _randomize_inplace(counts, xi, rng)
    return PartitionMatrix(
        counts=counts, row_sums=mat.row_sums.copy(), col_sums=mat.col_sums.copy()
    )


def random_qp_solution(
    start: PartitionMatrix,
    target: PartitionTarget,
    burn_in: int = 100_000,
    steps: int = 500_000,
    xi: float = 0.002,
    rng: np.random.Generator | None = None,
) -> PartitionMatrix:
    """Random near-optimal allocation: burn-in walk, then best-of search.

    Runs ``burn_in`` rectangle moves to forget the solver's allocation,
    then ``steps`` more while tracking the allocation with the smallest
    objective seen (the post-burn-in allocation included, so the result
    is never worse than it).  The loss is maintained incrementally from
    the four entries each move touches and recomputed in full every
    ``RESYNC_EVERY`` steps to cap float drift.
    """
    if burn_in < 0 or steps < 0:
        raise ParameterError("burn_in and steps must be nonnegative")
    if rng is None:
        rng = np.random.default_rng()
    counts = start.counts.copy()
    for _ in range(burn_in):
        _randomize_inplace(counts, xi, rng)

    indicator = target.indicator
    targets = target.marginal_targets
    resid = counts @ indicator - targets
    loss = float(np.einsum("ij,ij->", resid, resid))
    best_loss = loss
    best = counts.copy()
    cells = target.col_cells

    for q in range(1, steps + 1):
        move = _randomize_inplace(counts, xi, rng)
        if move is not None:
            i, i2, j, j2, d = move
            for b in range(cells.shape[1]):
                c1 = cells[j, b]
                c2 = cells[j2, b]
                if c1 == c2:
                    continue
                for row, cc, delta in ((i, c1, -d), (i, c2, d), (i2, c1, d), (i2, c2, -d)):
                    old = resid[row, cc]
                    new = old + delta
                    loss += new * new - old * old
                    resid[row, cc] = new
        if q % RESYNC_EVERY == 0:
            resid = counts @ indicator - targets
            loss = float(np.einsum("ij,ij->", resid, resid))
        if loss < best_loss:
            best_loss = loss
            np.copyto(best, counts)

    return PartitionMatrix(
        counts=best, row_sums=start.row_sums.copy(), col_sums=start.col_sums.copy()
    )


# ---------------------------------------------------------------------------
# Integer rounding
# ---------------------------------------------------------------------------


def round_marginals(values: np.ndarray, total: int | None = None) -> np.ndarray:
    """Round nonnegative values to integers with the given total.

    Largest-remainder rounding: floor everything, then hand out the
    remaining units by descending fractional part (ties by index).
    """
    values = np.asarray(values, dtype=np.float64)
    if total is None:
        total = int(round(values.sum()))
    floors = np.floor(values).astype(np.int64)
    remainder = int(total - floors.sum())
    if remainder < 0 or remainder > len(values):
        raise ParameterError("total is unreachable by largest-remainder rounding")
    order = np.argsort(-(values - floors), kind="stable")
    floors[order[:remainder]] += 1
    return floors


def round_partition(mat: PartitionMatrix, tol: float = 1e-6) -> "IntegerPartition":
    """Round a feasible allocation to integers without breaking marginals.

    Requires integer-consistent marginals (round them first).  Repeatedly
    finds a cycle among fractional cells and shifts mass around it until
    a cell hits an integer; every touched cell stays strictly inside the
    unit interval around its original value, so the final integer matrix
    deviates from the input by less than 1 everywhere and matches the
    marginals exactly.
    """
    counts = mat.counts.copy()
    scale = max(mat.total, 1.0)
    rows_int = np.rint(mat.row_sums).astype(np.int64)
    cols_int = np.rint(mat.col_sums).astype(np.int64)
    if (
        np.abs(mat.row_sums - rows_int).max() > tol * scale
        or np.abs(mat.col_sums - cols_int).max() > tol * scale
    ):
        raise ParameterError("marginals must be integer-consistent; round them first")
    mat.validate(tol=tol)

    cell_tol = 1e-9 * scale

    def fractional(value: float) -> bool:
        return abs(value - round(value)) > cell_tol

    n_rows, n_cols = counts.shape
    row_frac: dict[int, set[int]] = {}
    col_frac: dict[int, set[int]] = {}
    for t in range(n_rows):
        for g in range(n_cols):
            if fractional(counts[t, g]):
                row_frac.setdefault(t, set()).add(g)
                col_frac.setdefault(g, set()).add(t)

    def drop_if_integral(t: int, g: int) -> None:
        if not fractional(counts[t, g]):
            row_frac[t].discard(g)
            if not row_frac[t]:
                del row_frac[t]
            col_frac[g].discard(t)
            if not col_frac[g]:
                del col_frac[g]

    while row_frac:
        t0 = min(row_frac)
        g0 = min(row_frac[t0])
        path = [(t0, g0)]
        row_seen = {t0: 0}
        col_seen = {g0: 0}
        in_row = True
        cycle = None
        while cycle is None:
            t, g = path[-1]
            if in_row:
                options = row_frac[t] - {g}
                if not options:
                    raise ConsistencyError(
                        "lone fractional cell in a row; marginals are not integers"
                    )
                g_next = min(options)
                nxt = (t, g_next)
                seen, key = col_seen, g_next
            else:
                options = col_frac[g] - {t}
                if not options:
                    raise ConsistencyError(
                        "lone fractional cell in a column; marginals are not integers"
                    )
                t_next = min(options)
                nxt = (t_next, g)
                seen, key = row_seen, t_next
            if key in seen:
                p = seen[key]
                candidate = path[p:] + [nxt]
                if len(candidate) % 2:  # seam parity: close one cell later
                    candidate = path[p + 1:] + [nxt]
                cycle = candidate
            else:
                seen[key] = len(path)
                path.append(nxt)
                in_row = not in_row

        plus = cycle[0::2]
        minus = cycle[1::2]
        delta_up = min(math.ceil(counts[t, g] - cell_tol) - counts[t, g] for t, g in plus)
        delta_down = min(counts[t, g] - math.floor(counts[t, g] + cell_tol) for t, g in minus)
        delta = min(delta_up, delta_down)
        for t, g in plus:
            counts[t, g] += delta
        for t, g in minus:
            counts[t, g] -= delta
        for t, g in cycle:
            drop_if_integral(t, g)

    rounded = np.rint(counts)
    if np.abs(rounded - counts).max() > 0.5:
        raise ConsistencyError("cycle canceling failed to reach an integer point")
    if np.abs(rounded - mat.counts).max() >= 1.0:
        raise ConsistencyError("integer rounding moved an entry by 1 or more")
    integer = rounded.astype(np.int64)
    if (integer.sum(axis=1) != rows_int).any() or (integer.sum(axis=0) != cols_int).any():
        raise ConsistencyError("integer rounding broke the marginals")
    return IntegerPartition(counts=integer)


@dataclass
class IntegerPartition:
    """Integer allocation with exact marginals."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if (self.counts < 0).any():
            raise ParameterError("integer allocation must be nonnegative")

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


# ---------------------------------------------------------------------------
# Materialization and scoring
# ---------------------------------------------------------------------------


def assign_samples(
    dataset: TabularDataset,
    part: IntegerPartition,
    rng: np.random.Generator,
    configs: tuple[tuple[int, ...], ...] | None = None,
) -> list[ClientDataset]:
    """Hand out concrete samples according to an integer allocation.

    Columns are classes, or configurations when ``configs`` is given.
    Samples within each group are shuffled once (seeded), then split by
    the column's per-client counts; each sample lands on exactly one
    client.
    """
    counts = part.counts
    if configs is None:
        group_of = dataset.labels
        n_groups = dataset.n_classes
    else:
        key_to_col = {u: g for g, u in enumerate(configs)}
        group_of = np.empty(dataset.n_samples, dtype=np.int64)
        for r, row in enumerate(dataset.configurations()):
            key = tuple(int(v) for v in row)
            if key not in key_to_col:
                raise ConsistencyError(f"sample configuration {key} missing from allocation")
            group_of[r] = key_to_col[key]
        n_groups = len(configs)
    if counts.shape[1] != n_groups:
        raise ConsistencyError(
            f"allocation has {counts.shape[1]} groups, dataset has {n_groups}"
        )

    assignments: list[list[int]] = [[] for _ in range(counts.shape[0])]
    for g in range(n_groups):
        pool = np.flatnonzero(group_of == g)
        if len(pool) != counts[:, g].sum():
            raise ConsistencyError(
                f"group {g}: allocation wants {counts[:, g].sum()} samples, "
                f"dataset has {len(pool)}"
            )
        pool = rng.permutation(pool)
        offset = 0
        for t in range(counts.shape[0]):
            take = int(counts[t, g])
            assignments[t].extend(pool[offset:offset + take].tolist())
            offset += take
    index_arrays = [np.sort(np.asarray(a, dtype=np.int64)) for a in assignments]
    return build_client_datasets(dataset, index_arrays)


def c_score(clients: list[ClientDataset]) -> float:
    """Mean L1 distance between client class ratios and the global ratios.

    0 for perfectly identical class mixtures; approaches 2 as clients
    become single-class in a balanced many-class dataset.  Empty clients
    are excluded (with a warning).
    """
    usable = []
    for c in clients:
        if len(c) == 0:
            logger.warning("c_score: skipping empty client %d", c.client_id)
        else:
            usable.append(c)
    if not usable:
        raise ParameterError("c_score needs at least one nonempty client")
    n_classes = max(c.n_classes for c in usable)
    global_counts = np.zeros(n_classes)
    for c in usable:
        global_counts += np.bincount(c.labels, minlength=n_classes)
    global_ratios = global_counts / global_counts.sum()
    score = 0.0
    for c in usable:
        ratios = np.bincount(c.labels, minlength=n_classes) / len(c)
        score += float(np.abs(ratios - global_ratios).sum())
    return score / len(usable)


@dataclass
class PartitionResult:
    """Everything a partitioning run produces."""

    clients: list[ClientDataset]
    counts: np.ndarray                     # integer client x group matrix
    class_counts: np.ndarray               # integer client x class matrix
    c_score: float
    configs: tuple[tuple[int, ...], ...] | None
    seed: int


def partition_dataset(
    dataset: TabularDataset,
    priors: DirichletPriors,
    seed: int,
    burn_in: int = 100_000,
    steps: int = 500_000,
    xi: float = 0.002,
) -> PartitionResult:
    """Full pipeline: draw targets, solve, randomize, round, assign, score."""
    dirichlet_rng = derive_rng(seed, "dirichlet")
    if priors.theta is None or not priors.feature_arities:
        target = build_target_class_size(priors, dataset.class_counts(), dirichlet_rng)
    else:
        if priors.feature_arities != dataset.feature_arities:
            raise ConsistencyError("priors and dataset disagree on feature arities")
        target = build_target_full(priors, dataset.config_totals(), dirichlet_rng)

    solved = solve_qp(target)
    walked = random_qp_solution(
        solved, target, burn_in=burn_in, steps=steps, xi=xi,
        rng=derive_rng(seed, "walk"),
    )
    rows_int = round_marginals(walked.row_sums)
    cols_int = np.rint(walked.col_sums)  # group totals are data counts
    rebalanced = PartitionMatrix(
        counts=transport_project(walked.counts, rows_int, cols_int),
        row_sums=rows_int.astype(np.float64),
        col_sums=cols_int,
    )
    integer = round_partition(rebalanced)
    clients = assign_samples(
        dataset, integer, derive_rng(seed, "assign"), configs=target.configs
    )
    class_counts = np.vstack([c.class_counts() for c in clients])
    return PartitionResult(
        clients=clients,
        counts=integer.counts,
        class_counts=class_counts,
        c_score=c_score(clients),
        configs=target.configs,
        seed=seed,
    )
