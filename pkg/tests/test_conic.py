"""Subproblem-solver layer tests: LP, SOCP, complex lifting."""

import numpy as np
import pytest

from irsma import conic


def lp(num_vars):
    return conic.LinearProgramSpec.empty(num_vars)


class TestSolveLp:
    def test_box_maximum(self):
        spec = lp(1)
        spec.objective[:] = [1.0]
        spec.upper[:] = [1.0]
        out = conic.solve_lp(spec)
        assert out.ok
        assert out.x[0] == pytest.approx(1.0, abs=1e-9)
        assert out.objective == pytest.approx(1.0, abs=1e-9)

    def test_simplex_face(self):
        spec = lp(2)
        spec.objective[:] = [1.0, 1.0]
        spec.upper[:] = [np.inf, np.inf]
        spec.add_row([0, 1], [1.0, 1.0], 1.0)
        out = conic.solve_lp(spec)
        assert out.ok
        assert out.objective == pytest.approx(1.0, abs=1e-9)

    def test_empty_box_is_infeasible(self):
        spec = lp(1)
        spec.lower[:] = [1.0]
        spec.upper[:] = [0.0]
        out = conic.solve_lp(spec)
        assert out.status == "infeasible"

    def test_infeasible_rows(self):
        spec = lp(1)
        spec.upper[:] = [1.0]
        spec.add_row([0], [1.0], -2.0)   # x <= -2 against x >= 0
        assert conic.solve_lp(spec).status == "infeasible"

    def test_unbounded(self):
        spec = lp(1)
        spec.objective[:] = [1.0]
        spec.upper[:] = [np.inf]
        assert conic.solve_lp(spec).status == "unbounded"

    def test_objective_recompute_and_violation(self):
        rng = np.random.default_rng(2)
        spec = lp(6)
        spec.objective[:] = rng.normal(size=6)
        spec.upper[:] = 1.0
        for _ in range(8):
            spec.add_row(np.arange(6), rng.normal(size=6), rng.uniform(0.5, 2.0))
        out = conic.solve_lp(spec)
        assert out.ok
        assert out.objective == pytest.approx(float(spec.objective @ out.x), rel=1e-12)
        assert out.max_violation <= 1e-8

    def test_determinism(self):
        rng = np.random.default_rng(3)
        spec = lp(5)
        spec.objective[:] = rng.normal(size=5)
        spec.upper[:] = 2.0
        for _ in range(4):
            spec.add_row(np.arange(5), rng.normal(size=5), 1.0)
        a = conic.solve_lp(spec)
        b = conic.solve_lp(spec)
        assert np.array_equal(a.x, b.x)
        assert a.objective == b.objective

    def test_scaling_sanity(self):
        spec = lp(2)
        spec.objective[:] = [2.0, 1.0]
        spec.upper[:] = [1.0, 1.0]
        spec.add_row([0, 1], [1.0, 1.0], 1.5)
        base = conic.solve_lp(spec)
        spec2 = lp(2)
        spec2.objective[:] = [20.0, 10.0]
        spec2.upper[:] = [1.0, 1.0]
        spec2.add_row([0, 1], [1.0, 1.0], 1.5)
        scaled = conic.solve_lp(spec2)
        assert scaled.objective == pytest.approx(10.0 * base.objective, rel=1e-9)
        assert np.allclose(scaled.x, base.x, atol=1e-8)


class TestSolveSocp:
    def test_unit_disc_extreme_point(self):
        spec = lp(2)
        spec.lower[:] = -np.inf
        spec.upper[:] = np.inf
        spec.objective[:] = [1.0, 0.0]
        cone = conic.ConeProgramSpec(lp=spec)
        lift = conic.ComplexLift(1)
        cone.add_cone(*lift.unit_disc(0))
        out = conic.solve_socp(cone)
        assert out.ok
        assert out.x[0] == pytest.approx(1.0, abs=1e-7)
        assert abs(out.x[1]) < 1e-6

    def test_diagonal_pull_lands_on_boundary(self):
        spec = lp(2)
        spec.lower[:] = -np.inf
        spec.upper[:] = np.inf
        spec.objective[:] = [1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0)]
        cone = conic.ConeProgramSpec(lp=spec)
        cone.add_cone(*conic.ComplexLift(1).unit_disc(0))
        out = conic.solve_socp(cone)
        assert out.ok
        # closed form: the maximizer is the unit vector along the pull
        assert np.allclose(out.x, [1 / np.sqrt(2)] * 2, atol=1e-6)
        assert out.objective == pytest.approx(1.0, abs=1e-7)

    def test_zero_tail_forces_zero_head(self):
        spec = lp(2)
        spec.lower[:] = -np.inf
        spec.upper[:] = np.inf
        spec.objective[:] = [1.0, 1.0]
        cone = conic.ConeProgramSpec(lp=spec)
        cone.add_cone(indices=[np.empty(0, dtype=int), [0], [1]],
                      coeffs=[np.empty(0), [1.0], [1.0]],
                      offsets=[0.0, 0.0, 0.0])
        out = conic.solve_socp(cone)
        assert out.ok
        assert np.allclose(out.x, 0.0, atol=1e-7)

    def test_mixed_rows_and_cone(self):
        # maximize x + y with x + y <= 0.8 inside the unit disc
        spec = lp(2)
        spec.lower[:] = -np.inf
        spec.upper[:] = np.inf
        spec.objective[:] = [1.0, 1.0]
        spec.add_row([0, 1], [1.0, 1.0], 0.8)
        cone = conic.ConeProgramSpec(lp=spec)
        cone.add_cone(*conic.ComplexLift(1).unit_disc(0))
        out = conic.solve_socp(cone)
        assert out.ok
        assert out.objective == pytest.approx(0.8, abs=1e-6)
        assert out.max_violation <= 1e-6

    def test_infeasible_socp(self):
        spec = lp(2)
        spec.lower[:] = -np.inf
        spec.upper[:] = np.inf
        spec.objective[:] = [1.0, 0.0]
        spec.add_row([0], [-1.0], -2.0)   # x >= 2 against |x| <= 1
        cone = conic.ConeProgramSpec(lp=spec)
        cone.add_cone(*conic.ComplexLift(1).unit_disc(0))
        assert conic.solve_socp(cone).status == "infeasible"

    def test_determinism(self):
        rng = np.random.default_rng(4)
        spec = lp(4)
        spec.lower[:] = -np.inf
        spec.upper[:] = np.inf
        spec.objective[:] = rng.normal(size=4)
        spec.add_row([0, 1, 2, 3], rng.normal(size=4), 0.5)
        cone = conic.ConeProgramSpec(lp=spec)
        lift = conic.ComplexLift(2)
        cone.add_cone(*lift.unit_disc(0))
        cone.add_cone(*lift.unit_disc(1))
        a = conic.solve_socp(cone)
        b = conic.solve_socp(cone)
        assert np.array_equal(a.x, b.x)


class TestComplexLift:
    def test_pack_unpack_round_trip(self):
        rng = np.random.default_rng(5)
        vals = rng.normal(size=7) + 1j * rng.normal(size=7)
        lift = conic.ComplexLift(7, base=3)
        packed = lift.pack(vals)
        x = np.concatenate([np.zeros(3), packed])
        assert np.array_equal(lift.unpack(x), vals)

    def test_simple_slot(self):
        lift = conic.ComplexLift(1)
        assert np.array_equal(lift.pack(np.array([1 + 0j])), [1.0, 0.0])

    def test_real_inner_expansion(self):
        # Re{(1 - 1j)* conj-form of (a + bj)} with c = 1 + 1j gives a + b
        lift = conic.ComplexLift(1)
        idx, coef = lift.real_inner(np.array([1.0 + 1.0j]))
        a, b = 0.7, -0.3
        assert float(coef @ np.array([a, b])) == pytest.approx(a + b)

    def test_real_inner_matches_numpy(self):
        rng = np.random.default_rng(6)
        n = 9
        lift = conic.ComplexLift(n)
        c = rng.normal(size=n) + 1j * rng.normal(size=n)
        v = rng.normal(size=n) + 1j * rng.normal(size=n)
        idx, coef = lift.real_inner(c)
        got = float(coef @ lift.pack(v))
        assert got == pytest.approx(float(np.real(np.conj(c) @ v)), rel=1e-12)

    def test_unit_phase_has_zero_cone_slack(self):
        lift = conic.ComplexLift(1)
        indices, coeffs, offsets = lift.unit_disc(0)
        for phi in np.linspace(0, 2 * np.pi, 9):
            x = lift.pack(np.array([np.exp(1j * phi)]))
            y = np.array(offsets, dtype=float)
            for i in range(1, 3):
                y[i] += coeffs[i] @ x[indices[i]]
            assert np.linalg.norm(y[1:]) == pytest.approx(y[0], abs=1e-12)


def test_dump_spec_round_trip(tmp_path):
    import json
    spec = lp(3)
    spec.objective[:] = [1.0, 2.0, 3.0]
    spec.upper[:] = 1.0
    spec.add_row([0, 2], [1.0, -1.0], 0.5)
    cone = conic.ConeProgramSpec(lp=spec)
    cone.add_cone(*conic.ComplexLift(1, base=1).unit_disc(0))
    path = tmp_path / "spec.json"
    conic.dump_spec(cone, path)
    doc = json.loads(path.read_text())
    assert doc["num_vars"] == 3
    assert doc["rows"][0]["bound"] == 0.5
    assert len(doc["cones"]) == 1
