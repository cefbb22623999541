import math

import numpy as np
import pytest

from app.core.errors import ParameterDomainError
from app.models.schemas import DimensionalParams, ModelParams
from app.services.model_service import (
    classify_regime, coexistence_state, coexistence_sufficient_condition, discrete_spreading_speed,
    fig_label, final_zone_targets, log_drift_coefficient, nondimensionalize, ode_residual, reaction_bound,
    spreading_speeds, steady_states,
)


def params(a=1.0, b=1.0, s=1.0, g=2.0, d=1.0, dim_N=1):
    return ModelParams(a=a, b=b, s=s, g=g, d=d, dim_N=dim_N)


def test_nondimensionalize_identity():
    m = nondimensionalize(DimensionalParams(D=1, D_h=1, r_f=1, r_c=1, r_h=1, K=1, L=1, e_conv=1))
    assert (m.a, m.b, m.s, m.g, m.d) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_nondimensionalize_ratios():
    m = nondimensionalize(DimensionalParams(D=1, D_h=2, r_f=2, r_c=1, r_h=0.5, K=2, L=2, e_conv=0.25))
    assert m.a == pytest.approx(2.0)
    assert m.b == pytest.approx(0.5)
    assert m.s == pytest.approx(0.5)
    assert m.g == pytest.approx(1.0)
    assert m.d == pytest.approx(2.0)


def test_nondimensionalize_rejects_slow_hunters():
    with pytest.raises(ParameterDomainError):
        nondimensionalize({'D': 2, 'D_h': 1, 'r_f': 1, 'r_c': 1, 'r_h': 1, 'K': 1, 'L': 1, 'e_conv': 1})


def test_model_params_reject_small_d():
    with pytest.raises(ValueError, match='d≥1'):
        params(d=0.5)


@pytest.mark.parametrize('a, s, c_star, c_star_star', [
    (1.0, 1e-12, 2.0, 2.0),
    (2.0, 0.5, 2.0 * math.sqrt(2.0), 2.0 * math.sqrt(1.5)),
    (1.5, 0.5, 2.0 * math.sqrt(1.5), 2.0 * math.sqrt(1.5)),
])
def test_spreading_speeds(a, s, c_star, c_star_star):
    speeds = spreading_speeds(params(a=a, s=s))
    assert speeds.c_star == pytest.approx(c_star, rel=1e-9)
    assert speeds.c_star_star == pytest.approx(c_star_star, rel=1e-9)
    assert speeds.lambda_star == pytest.approx(c_star / 2.0)


def test_coexistence_state_values():
    state = coexistence_state(params(s=0.5, g=0.5))
    assert state.C_star == pytest.approx(1.2)
    assert state.H_star == pytest.approx(0.4)
    assert coexistence_state(params(s=0.5, g=1.0)) is None


def test_coexistence_state_is_ode_root():
    m = params(s=0.5, g=0.4)
    state = coexistence_state(m)
    assert (state.C_star, state.H_star) == pytest.approx((1.25, 0.5))
    residual = ode_residual((0.0, state.C_star, state.H_star), m)
    assert np.max(np.abs(residual)) < 1e-12


def test_steady_states_high_conversion():
    states = steady_states(params(g=2.0))
    assert [state.label for state in states] == ['extinction', 'hunter-gatherers only', 'farmers only']


def test_steady_states_low_conversion_are_roots():
    m = params(s=0.5, g=0.5)
    states = steady_states(m)
    assert len(states) == 4
    assert states[-1].point(0.0) == pytest.approx((0.0, 1.2, 0.4))
    for state in states:
        for theta in (0.0, 0.3, 1.0):
            assert np.max(np.abs(ode_residual(state.point(theta), m))) < 1e-12


@pytest.mark.parametrize('a, s, g, figure, order, conversion', [
    (4.0, 0.5, 2.0, 1, 'F_fast', 'High'),
    (1.0, 1.0, 2.0, 2, 'F_slow', 'High'),
    (4.0, 0.5, 0.4, 3, 'F_fast', 'Low'),
    (1.0, 1.0, 0.5, 4, 'F_slow', 'Low'),
])
def test_classify_regime(a, s, g, figure, order, conversion):
    regime = classify_regime(params(a=a, s=s, g=g))
    assert regime.waveform_figure == figure
    assert regime.front_order == order
    assert regime.conversion == conversion


def test_classify_regime_degenerate():
    regime = classify_regime(params(a=1.5, s=0.5, g=1.0))
    assert regime.front_order == 'Degenerate'
    assert regime.conversion == 'High'
    assert fig_label(classify_regime(params(a=4.0, s=0.5))) == "High conversion rate case, a>1+s"


def test_log_drift_fast_farmers():
    k = log_drift_coefficient(params(a=4.0, s=0.5))
    assert k.c_star == pytest.approx(4.0)
    assert k.k_FC == pytest.approx(12.0)
    assert k.k_up == pytest.approx(0.75)


def test_log_drift_slow_farmers():
    k = log_drift_coefficient(params(a=1.0, s=1.0))
    assert k.k_C == pytest.approx(3.0 / (2.0 * math.sqrt(2.0)))
    assert k.k_FC is None


def test_log_drift_degenerate_two_dimensions():
    k = log_drift_coefficient(params(a=1.5, s=0.5, dim_N=2))
    c_star = 2.0 * math.sqrt(1.5)
    assert k.k_FC == pytest.approx(4.0 / c_star)
    assert k.k_H_lower == pytest.approx(2.0 / c_star)


def test_sufficient_condition_branches():
    first = coexistence_sufficient_condition(params(a=1.0, s=0.5, g=0.4, b=1.0))
    assert first.holds and first.branch == 'conversion'
    second = coexistence_sufficient_condition(params(a=1.0, s=1.0, g=0.9, b=30.0))
    assert second.holds and second.branch == 'motility'
    neither = coexistence_sufficient_condition(params(a=1.0, s=1.0, g=0.9, b=1.0))
    assert not neither.holds and neither.branch is None


def test_sufficient_condition_requires_low_conversion():
    with pytest.raises(ParameterDomainError):
        coexistence_sufficient_condition(params(g=1.0))


def test_reaction_bound():
    assert reaction_bound(params(a=1.0, s=1.0)) == pytest.approx(2.0)
    assert reaction_bound(params(a=0.5, s=0.5)) == pytest.approx(3.0)
    assert reaction_bound(params(a=1.0, s=1.0), initial_sup=5.0) == pytest.approx(5.0)


def test_discrete_speed_exceeds_analytic_and_converges():
    m = params(a=1.0, s=1.0)
    c_star = spreading_speeds(m).c_star
    coarse = discrete_spreading_speed(m, 0.2)
    fine = discrete_spreading_speed(m, 0.05)
    assert coarse > fine > c_star
    assert fine - c_star < 0.01


def test_final_zone_targets():
    assert final_zone_targets(params()) == {'FC': 1.0, 'H': 0.0}
    targets = final_zone_targets(params(s=0.5, g=0.4))
    assert targets['F'] == 0.0
    assert targets['C'] == pytest.approx(1.25)
    assert targets['H'] == pytest.approx(0.5)
