import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plapsys.errors import InvalidArgumentError, NumericOverflowError
from plapsys.gradcheck import potential_gradient_check
from plapsys.nonlinearity import (EigenLevels, ExampleParams, check_hypotheses,
                                  eval_gradient, eval_hessian, eval_potential, example_family,
                                  expression_spec, h2_radius, limit_quotients, zero_spec)

TANH_HALF = np.tanh(0.5)
COTH_HALF = 1.0 / np.tanh(0.5)
LEVELS_1 = EigenLevels((TANH_HALF, TANH_HALF))
LEVELS_2 = EigenLevels((TANH_HALF, TANH_HALF), (COTH_HALF, COTH_HALF), ("second", "second"))


class TestExampleFamily:
    def test_origin(self, example_spec):
        assert eval_potential(example_spec, None, 0.0, 0.0) == 0.0
        assert eval_gradient(example_spec, None, 0.0, 0.0) == (0.0, 0.0)

    def test_unit_parameter_substitutions(self, unit_example_spec):
        s = unit_example_spec
        assert eval_gradient(s, None, 1.0, 1.0)[0] == pytest.approx(-3 + 2 + 2)
        assert eval_potential(s, None, 1.0, 0.5) == pytest.approx(0.375)
        # -3*|0.5|*0.5 + 2*1*0.5 + 2*0.5; confirmed by a difference quotient of the potential
        assert eval_gradient(s, None, 1.0, 0.5) == pytest.approx((-0.5, 1.25))
        h = 1e-6
        fd = (eval_potential(s, None, 1.0, 0.5 + h) - eval_potential(s, None, 1.0, 0.5 - h)) / (2 * h)
        assert fd == pytest.approx(1.25, rel=1e-8)

    @pytest.mark.parametrize("s2", [-1.0, -0.2, 0.0, 0.4, 1.0])
    def test_first_gradient_vanishes_on_axis(self, unit_example_spec, s2):
        assert eval_gradient(unit_example_spec, None, 0.0, s2)[0] == 0.0

    def test_gradient_consistency(self, example_spec):
        assert potential_gradient_check(example_spec, 1000, seed=3) < 1e-6

    def test_hessian_matches_gradient_differences(self, example_spec, rng):
        s1, s2 = rng.uniform(0.1, 1.0, 20), rng.uniform(0.1, 1.0, 20)
        h = 1e-6
        g_p, g_m = eval_gradient(example_spec, None, s1 + h, s2), eval_gradient(example_spec, None, s1 - h, s2)
        h11, h12, _ = eval_hessian(example_spec, None, s1, s2)
        np.testing.assert_allclose(h11, (g_p[0] - g_m[0]) / (2 * h), rtol=1e-6)
        np.testing.assert_allclose(h12, (g_p[1] - g_m[1]) / (2 * h), rtol=1e-6)

    @pytest.mark.parametrize("field", ["alpha", "beta", "gamma"])
    def test_nonpositive_parameters_rejected(self, field):
        with pytest.raises(InvalidArgumentError):
            ExampleParams(**{field: 0.0})

    def test_box_constants_validated(self):
        with pytest.raises(InvalidArgumentError):
            zero_spec(k=(1.0, 0.0))
        with pytest.raises(InvalidArgumentError):
            zero_spec(d=(0.5, -1.0))

    def test_overflow_reported(self):
        s = expression_spec("s1^2/s2")
        with pytest.raises(NumericOverflowError):
            eval_gradient(s, None, 1.0, 0.0)


class TestAudit:
    def test_example_passes(self, example_spec):
        for levels in (LEVELS_1, LEVELS_2):
            report = check_hypotheses(example_spec, levels)
            assert report.verdict == "pass", report.to_dict()

    def test_alpha_below_threshold_fails_with_witness(self):
        report = check_hypotheses(example_family(ExampleParams(alpha=1.0)), LEVELS_2)
        assert report.verdict == "fail"
        h1 = report.checks["H1"]
        assert h1.verdict == "fail" and h1.witness["s2"] == 1.0 and h1.witness["s1"] == 1.0
        assert h1.margin == pytest.approx(-2.0)

    def test_nonzero_origin_fails_h0(self):
        report = check_hypotheses(expression_spec("s1^2 + s2^2 + 0.1"), LEVELS_1)
        assert report.checks["H0"].verdict == "fail"
        assert report.checks["H0"].witness == {"s1": 0.0, "s2": 0.0}

    def test_h2_limit_value(self, example_spec):
        q = limit_quotients(example_spec, 0, 1.0, None, [0.5, 1.0])
        # beta p1 s2^p2 + gamma p1 at the smallest ladder rung
        np.testing.assert_allclose(q[-1], [2 * 0.25 + 3, 2 + 3], atol=1e-6)
        h2 = check_hypotheses(example_spec, LEVELS_1).checks["H2"]
        # the quotient on the s2 = 0 line is 3 - 6 s; its minimum over the ladder tail sits at s = 7.6e-7
        assert h2.details["c_measured"][0] == pytest.approx(3.0, abs=1e-5)

    def test_h3_reports_both_readings(self, example_spec):
        h3 = check_hypotheses(example_spec, LEVELS_2).checks["H3"]
        assert set(h3.details["readings"]) == {"alpha_ge_c", "alpha_gt_lambda2"}

    def test_h0_reports_bound_and_lipschitz_separately(self, example_spec):
        d = check_hypotheses(example_spec, LEVELS_1).checks["H0"].details
        assert {"sup_gradient", "lipschitz_estimate", "sup_le_lipschitz"} <= set(d)

    def test_example_gamma_both_margins(self, example_spec):
        c = check_hypotheses(example_spec, LEVELS_2).checks["example_gamma"]
        assert c.details["literal_margin"] == pytest.approx(1.5 - COTH_HALF / 2)
        assert c.details["second_level_margin"] == pytest.approx(1.5 - COTH_HALF / 2)

    def test_small_grid_rejected(self, example_spec):
        with pytest.raises(InvalidArgumentError):
            check_hypotheses(example_spec, LEVELS_1, grid=8)

    def test_h4_h5_h6_all_grids(self, example_spec):
        report = check_hypotheses(example_spec, LEVELS_2, grid=65)
        for name in ("H4", "H5", "H6"):
            assert report.checks[name].verdict == "pass"
            assert report.checks[name].margin >= -1e-12

    def test_h2_radius(self, example_spec):
        r1 = h2_radius(example_spec, LEVELS_1)
        r2 = h2_radius(example_spec, LEVELS_2)
        assert 0 < r2 < r1 < 1
        # above the radius the quotient drops to the level: 3 - 6 r + 2 r^2 ~ level on the s2 = 0 line
        assert 3 - 6 * r2 >= COTH_HALF - 0.05

    def test_x_points_accepted(self, example_spec):
        xs = np.array([[0.0], [1.0]])
        assert check_hypotheses(example_spec, LEVELS_1, x_points=xs).verdict == "pass"

    def test_report_dict(self, example_spec):
        d = check_hypotheses(example_spec, LEVELS_1).to_dict()
        assert d["verdict"] == "pass" and set(d["checks"]) >= {f"H{i}" for i in range(7)}


def h1_threshold_scan(params, alphas):
    for a in alphas:
        spec = example_family(ExampleParams(a, params.beta, params.gamma))
        if check_hypotheses(spec, LEVELS_1).checks["H1"].verdict == "pass":
            return a
    return None


def test_measured_h1_threshold_matches_closed_form():
    step = 0.01
    alphas = np.arange(1.0, 2.5, step)
    measured = h1_threshold_scan(ExampleParams(), alphas)
    assert abs(measured - 5.0 / 3.0) <= step


@settings(max_examples=25, deadline=None)
@given(beta=st.floats(0.1, 3.0), gamma=st.floats(0.2, 3.0), k1=st.floats(0.5, 2.0),
       k2=st.floats(0.5, 2.0), above=st.booleans())
def test_h1_threshold_property(beta, gamma, k1, k2, above):
    base = ExampleParams(1.0, beta, gamma)
    upper = base.h1_alpha_threshold((k1, k2))
    # lower faces at d = -1 need alpha >= gamma p / (p + q)
    lower = gamma * 2 / 3
    alpha_star = max(*upper, lower)
    alpha = alpha_star * (1.01 if above else 0.99)
    spec = example_family(ExampleParams(alpha, beta, gamma), k=(k1, k2))
    verdict = check_hypotheses(spec, LEVELS_1, grid=17).checks["H1"].verdict
    assert verdict == ("pass" if above else "fail")


@settings(max_examples=25, deadline=None)
@given(s1=st.floats(-1, 1), s2=st.floats(-1, 1))
def test_zero_spec_is_zero(s1, s2):
    s = zero_spec()
    assert eval_potential(s, None, s1, s2) == 0.0
    assert eval_gradient(s, None, s1, s2) == (0.0, 0.0)
