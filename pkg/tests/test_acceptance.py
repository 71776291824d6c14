"""One pass/fail line per acceptance criterion, with the limits pinned here."""

import math

import pytest

from hjens.verification import run_check

LE, LT = "<=", "<"

# criterion -> list of (measured key, comparison, limit)
LIMITS = {
    1: [("free", LT, 1e-12), ("em", LT, 1e-12), ("p_rep", LT, 1e-12)],
    2: [("residual", LT, 1e-10), ("velocity", LT, 1e-8)],
    3: [("rel_err_512", LT, 1e-3), ("ratio", ">=", 3.0)],
    4: [("mass_upwind", LT, 1e-12), ("mass_muscl", LT, 1e-12), ("energy_rk4", LT, 1e-6),
        ("energy_leapfrog", LT, 1e-9)],
    5: [("curl_ho", LT, 1e-4), ("curl_em", LT, 1e-4)],
    6: [("flow_map", "~pi/2", 0.05), ("eulerian", "~pi/2", 0.05)],
    7: [(k, LT, 1e-6) for k in ("free_vs_rk4", "uniform_vs_rk4", "oscillator_vs_rk4",
                                "free_q_vs_p", "uniform_q_vs_p", "oscillator_q_vs_p")],
    8: [("rho_v_spread", LT, 1e-6), ("flux_mismatch", LT, 1e-3), ("histogram_l1", LT, 0.02),
        ("rho_at_0_error", LE, 1e-3)],
    9: [("spin_drift", LT, 1e-9), ("precession_rel_err", LT, 1e-6), ("tracer_err", LT, 1e-3),
        ("residual_order", ">", 1.8)],
    10: [("momentum", LT, 1e-10), ("residual", LT, 1e-8), ("velocity", LT, 1e-6)],
    11: [("roundtrip_bitwise", "is", True), ("derivative_gap", LT, 1e-6), ("reproducible", "is", True)],
}


def holds(value, op, limit):
    if op == LT:
        return value < limit
    if op == LE:
        return value <= limit
    if op == ">":
        return value > limit
    if op == ">=":
        return value >= limit
    if op == "~pi/2":
        return abs(value - math.pi / 2) <= limit
    return bool(value) is limit


@pytest.mark.parametrize("number", sorted(LIMITS))
def test_acceptance(number, capsys):
    r = run_check(number, seed=0)
    failures = [f"{k}={r.measured[k]!r} not {op} {lim}" for k, op, lim in LIMITS[number]
                if not holds(r.measured[k], op, lim)]
    ok = r.passed and not failures
    with capsys.disabled():
        print(f"\nACCEPTANCE {'PASS' if ok else 'FAIL'} {r.line()}")
    assert not failures, failures
    assert r.passed
