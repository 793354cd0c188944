"""QP solver, transportation projections and the randomized walk."""

import math

import numpy as np
import pytest

from radfed.errors import InfeasibleError, ParameterError
from radfed.partition import (
    PartitionMatrix,
    random_qp_solution,
    randomize_step,
    solve_qp,
    target_from_class_draws,
    transport_project,
    _randomize_inplace,
)


def fixture_target():
    return target_from_class_draws([0.6, 0.4], [[1, 0], [0, 1]], [5, 5])


def fixture_matrix():
    return PartitionMatrix(
        counts=np.array([[5.0, 1.0], [0.0, 4.0]]),
        row_sums=np.array([6.0, 4.0]),
        col_sums=np.array([5.0, 5.0]),
    )


def random_feasible(n_rows, n_cols, total, rng):
    raw = rng.uniform(0.5, 2.0, size=(n_rows, n_cols))
    raw *= total / raw.sum()
    rows = raw.sum(axis=1)
    cols = raw.sum(axis=0)
    return PartitionMatrix(counts=raw, row_sums=rows, col_sums=cols)


# ---------------------------------------------------------------------------
# solve_qp
# ---------------------------------------------------------------------------


class TestSolveQP:
    def test_feasible_target_returned_exactly(self):
        t = target_from_class_draws([0.5, 0.5], [[0.5, 0.5], [0.5, 0.5]], [5, 5])
        out = solve_qp(t)
        np.testing.assert_allclose(out.counts, [[2.5, 2.5], [2.5, 2.5]], atol=1e-8)
        assert t.loss(out.counts) == pytest.approx(0.0, abs=1e-12)

    def test_disjoint_fixture_optimum(self):
        # with alloc[0,0] = x the objective is 2(x-6)^2 + 2(x-5)^2 on the
        # feasible interval [1, 5]; the minimum sits at the boundary x=5
        t = fixture_target()
        out = solve_qp(t)
        np.testing.assert_allclose(out.counts, [[5.0, 1.0], [0.0, 4.0]], atol=1e-4)
        assert t.loss(out.counts) == pytest.approx(2.0, abs=1e-6)

    def test_feasibility_residuals(self):
        rng = np.random.default_rng(11)
        sizes = rng.dirichlet(np.ones(6))
        dists = rng.dirichlet(0.3 * np.ones(4), size=6)
        totals = np.array([30, 20, 25, 25])
        t = target_from_class_draws(sizes, dists, totals)
        out = solve_qp(t)
        out.validate(tol=1e-6)
        assert (out.counts >= 0).all()

    def test_inconsistent_marginals_rejected(self):
        with pytest.raises(InfeasibleError):
            transport_project(np.ones((2, 2)), np.array([3.0, 3.0]), np.array([1.0, 1.0]))

    def test_output_beats_random_feasible_points(self):
        # optimality smoke test against 1000 random walk points
        t = fixture_target()
        out = solve_qp(t)
        best = t.loss(out.counts)
        rng = np.random.default_rng(3)
        counts = fixture_matrix().counts.copy()
        for _ in range(1000):
            _randomize_inplace(counts, 0.05, rng)
            assert t.loss(counts) >= best - 1e-9


# ---------------------------------------------------------------------------
# transport projection
# ---------------------------------------------------------------------------


class TestTransportProject:
    def test_projects_onto_marginals(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(0, 4, size=(4, 3))
        rows = np.array([5.0, 2.0, 6.0, 3.0])
        cols = np.array([4.0, 7.0, 5.0])
        out = transport_project(x, rows, cols)
        np.testing.assert_allclose(out.sum(axis=1), rows, atol=1e-9)
        np.testing.assert_allclose(out.sum(axis=0), cols, atol=1e-9)
        assert (out >= 0).all()

    def test_idempotent_on_feasible_points(self):
        rng = np.random.default_rng(6)
        mat = random_feasible(3, 4, 50.0, rng)
        out = transport_project(mat.counts, mat.row_sums, mat.col_sums)
        np.testing.assert_allclose(out, mat.counts, atol=1e-9)

    def test_matches_grid_oracle_on_2x2(self):
        # 2x2 polytopes are a 1-d segment; compare against a dense scan
        rng = np.random.default_rng(12)
        rows = np.array([4.0, 3.0])
        cols = np.array([5.0, 2.0])
        lo, hi = max(0.0, rows[0] - cols[1]), min(rows[0], cols[0])
        ts = np.linspace(lo, hi, 20001)
        candidates = np.stack([ts, rows[0] - ts, cols[0] - ts, ts + cols[1] - rows[0]], axis=1)
        for _ in range(20):
            x = rng.uniform(-2, 6, size=(2, 2))
            got = transport_project(x, rows, cols).ravel()
            dists = ((candidates - x.ravel()) ** 2).sum(axis=1)
            best = candidates[np.argmin(dists)]
            np.testing.assert_allclose(got, best, atol=2e-3)


# ---------------------------------------------------------------------------
# randomize_step
# ---------------------------------------------------------------------------


class TestRandomizeStep:
    def test_fixture_arithmetic(self):
        # forcing the (0,0)/(1,1) rectangle: entries move by a common delta
        mat = fixture_matrix()
        rng = np.random.default_rng(2)
        stepped = randomize_step(mat, xi=0.002, rng=rng)
        delta = mat.counts - stepped.counts
        if delta.any():
            d = abs(delta).max()
            moved = stepped.counts - mat.counts
            assert sorted(np.round(moved.ravel() / d).astype(int).tolist()) == [-1, -1, 1, 1]
        np.testing.assert_array_equal(stepped.counts.sum(axis=1), [6.0, 4.0])
        np.testing.assert_array_equal(stepped.counts.sum(axis=0), [5.0, 5.0])

    def test_zero_entry_caps_epsilon(self):
        counts = np.array([[0.0, 5.0], [5.0, 0.0]])
        mat = PartitionMatrix(counts, counts.sum(1), counts.sum(0))
        rng = np.random.default_rng(0)
        out = randomize_step(mat, xi=0.002, rng=rng)
        # whichever rectangle was drawn, a zero decreased entry forces a no-op
        # or the move respects nonnegativity
        assert (out.counts >= 0).all()

    def test_small_matrix_rejected(self):
        mat = PartitionMatrix(np.array([[5.0]]), np.array([5.0]), np.array([5.0]))
        with pytest.raises(ParameterError):
            randomize_step(mat, xi=0.002, rng=np.random.default_rng(0))

    def test_exact_feasibility_over_long_walks(self):
        # exact accumulation: fsum of every row/column is bitwise stable
        rng = np.random.default_rng(101)
        mat = random_feasible(6, 5, 400.0, rng)
        counts = mat.counts.copy()
        row_fsums = [math.fsum(row) for row in counts]
        col_fsums = [math.fsum(col) for col in counts.T]
        for _ in range(10_000):
            _randomize_inplace(counts, 0.01, rng)
        assert (counts >= 0).all()
        assert [math.fsum(row) for row in counts] == row_fsums
        assert [math.fsum(col) for col in counts.T] == col_fsums

    def test_single_step_delta_cancellation(self):
        rng = np.random.default_rng(55)
        mat = random_feasible(4, 4, 100.0, rng)
        for _ in range(200):
            before = mat.counts.copy()
            after = randomize_step(mat, xi=0.01, rng=rng)
            delta = after.counts - before
            changed = np.argwhere(delta != 0)
            if changed.size:
                # the four realized deltas cancel exactly per row and column
                assert math.fsum(delta[r, c] for r, c in changed) == 0.0
                for r in set(changed[:, 0]):
                    assert math.fsum(delta[r, c] for c in range(delta.shape[1])) == 0.0
                for c in set(changed[:, 1]):
                    assert math.fsum(delta[r, c] for r in range(delta.shape[0])) == 0.0
            mat = after


# ---------------------------------------------------------------------------
# random_qp_solution
# ---------------------------------------------------------------------------


class TestRandomQPSolution:
    def test_zero_steps_returns_post_burn_in(self):
        t = fixture_target()
        start = solve_qp(t)
        rng_a = np.random.default_rng(1)
        out = random_qp_solution(start, t, burn_in=50, steps=0, rng=rng_a)
        counts = start.counts.copy()
        rng_b = np.random.default_rng(1)
        for _ in range(50):
            _randomize_inplace(counts, 0.002, rng_b)
        np.testing.assert_array_equal(out.counts, counts)

    def test_best_never_worse_than_post_burn_in(self):
        t = fixture_target()
        start = solve_qp(t)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            counts = start.counts.copy()
            for _ in range(100):
                _randomize_inplace(counts, 0.002, rng)
            post_burn_in_loss = t.loss(counts)
            out = random_qp_solution(
                start, t, burn_in=100, steps=500, rng=np.random.default_rng(seed)
            )
            assert t.loss(out.counts) <= post_burn_in_loss + 1e-9

    def test_loss_bounded_below_by_optimum(self):
        t = fixture_target()
        start = solve_qp(t)
        out = random_qp_solution(
            start, t, burn_in=1000, steps=1000, rng=np.random.default_rng(8)
        )
        loss = t.loss(out.counts)
        assert 2.0 - 1e-9 <= loss <= t.loss(start.counts) + 1.0

    def test_monotone_nonincreasing_in_steps(self):
        t = fixture_target()
        start = solve_qp(t)
        losses = []
        for steps in (200, 400, 800):
            out = random_qp_solution(
                start, t, burn_in=100, steps=steps, rng=np.random.default_rng(13)
            )
            losses.append(t.loss(out.counts))
        assert losses[0] >= losses[1] - 1e-9 >= losses[2] - 2e-9

    def test_incremental_loss_matches_full_recompute(self):
        # drift guard: the walk's tracked best must equal the true loss
        rng = np.random.default_rng(21)
        mat = random_feasible(5, 6, 120.0, rng)
        sizes = mat.row_sums / mat.row_sums.sum()
        dists = np.random.default_rng(4).dirichlet(np.ones(6), size=5)
        t = target_from_class_draws(sizes, dists, mat.col_sums)
        out = random_qp_solution(mat, t, burn_in=100, steps=25_000,
                                 rng=np.random.default_rng(17))
        walked = random_qp_solution(mat, t, burn_in=100, steps=25_000,
                                    rng=np.random.default_rng(17))
        np.testing.assert_array_equal(out.counts, walked.counts)
        out.validate(tol=1e-9)
