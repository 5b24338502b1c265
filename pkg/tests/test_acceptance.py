"""The eleven acceptance criteria at full size and exact tolerances.

Each test records one PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import time

import numpy as np
import pytest

from hessbound.barrier import crossing_t0_general, crossing_t0_pn1
from hessbound.expr import ScalarField
from hessbound.geometry import (
    Ball,
    ConformalMetric,
    FlatMetric,
    boundary_chart,
    origin_identities_check,
    w_tensor,
    z_tensor,
)
from hessbound.grid import Grid, GridField
from hessbound.harness import build_instance, run
from hessbound.solver import DiscreteOperator, pn1_operator_apply
from hessbound.spectral import SpectralOperator

pytestmark = pytest.mark.acceptance

FULL_CAMPAIGN = {"cases": 10000, "n_min": 2, "n_max": 6, "sweep_instances": 200,
                 "sweep_steps": 50, "closed_form_cases": 1000, "structural_pairs": 10000,
                 "matrix_pairs": 1000, "structural_n_max": 4, "marcus_cases": 10000,
                 "marcus_n_max": 4}


def campaign(lemmas):
    t = time.perf_counter()
    rep = run({"experiment": "lemma-campaign", "seed": 0,
               "campaign": dict(FULL_CAMPAIGN, lemmas=lemmas)})
    return rep, time.perf_counter() - t


def failed(rep, pred=lambda a: True):
    return [f"{a.label} ({a.value})" for a in rep.assertions
            if a.status != "pass" and pred(a)]


def rows_failing(rows):
    return [r["case"] for r in rows if r["status"] != "pass"]


@pytest.fixture(scope="module")
def manufactured_run():
    return run({"experiment": "barrier-certify", "seed": 0, "jobs": 4,
                "instance": {"preset": "manufactured", "perturbation": 0.1},
                "grid": {"m": 17, "refine": [9]},
                "solver": {"starts": ["subsolution", "exact"], "time_limit": 120.0},
                "certify": {"points": 8}})


@pytest.fixture(scope="module")
def pn1_run():
    return run({"experiment": "barrier-certify", "seed": 0, "jobs": 4,
                "instance": {"preset": "manufactured-pn1", "perturbation": 0.1},
                "grid": {"m": 17}, "certify": {"points": 8}})


# ---------------------------------------------------------------------------
# 1-5: lemma campaigns
# ---------------------------------------------------------------------------

def test_criterion_01_growth_campaign(acceptance_line):
    rep, secs = campaign(["growth"])
    rows = rep.tables["campaign_growth"]
    bad = rows_failing(rows)
    if len(rows) != 10000:
        bad.append(f"{len(rows)} cases")
    if secs >= 10:
        bad.append(f"runtime {secs:.1f} s >= 10 s")
    ns = {r["n"] for r in rows}
    if ns != {2, 3, 4, 5, 6}:
        bad.append(f"dimensions {sorted(ns)}")
    acceptance_line(1, "growth lemma on 10^4 arrowheads", bad, f"{secs:.2f} s")


def test_criterion_02_refinement_and_counts(acceptance_line):
    rep, secs = campaign(["refinement", "card"])
    ref = rep.tables["campaign_refinement"]
    card = rep.tables["campaign_card"]
    bad = rows_failing(ref) + [f"card {c}" for c in rows_failing(card)]
    if len(ref) != 10000 or any(r["corner"] != r["threshold"] for r in ref):
        bad.append("refinement cases not at the threshold")
    if any(r["steps"] != 50 for r in card):
        bad.append("card sweeps not 50 steps")
    if secs >= 30:
        bad.append(f"runtime {secs:.1f} s >= 30 s")
    acceptance_line(2, "refinement lemma and constant component counts", bad,
                    f"{secs:.2f} s, {len(card)} sweeps")


def test_criterion_03_closed_form(acceptance_line):
    rep, _ = campaign(["closed-form"])
    rows = rep.tables["campaign_closed-form"]
    worst = max(r["max_diff"] for r in rows)
    bad = rows_failing(rows)
    if len(rows) != 1000 or worst > 1e-12:
        bad.append(f"max diff {worst:.2e}")
    acceptance_line(3, "2x2 closed form against Jacobi", bad, f"max diff {worst:.2e}")


def test_criterion_04_structural(acceptance_line):
    rep, _ = campaign(["structural"])
    rows = rep.tables["campaign_structural"]
    violations = sum(r["pair_violations"] + r["matrix_violations"] for r in rows)
    kinds = {r["operator"].split('"kind": ')[1].split(",")[0] for r in rows}
    bad = [r["operator"] for r in rows if r["status"] != "pass"]
    if any(r["pairs"] != 10000 or r["matrix_pairs"] != 1000 for r in rows):
        bad.append("sample sizes")
    if len(kinds) != 3:
        bad.append(f"operator kinds {kinds}")
    acceptance_line(4, "concavity pairing and matrix monotonicity", bad,
                    f"{len(rows)} operators, {violations} violations")


def test_criterion_05_marcus(acceptance_line):
    rep, _ = campaign(["marcus"])
    rows = rep.tables["campaign_marcus"]
    slack = max(r["lhs"] - r["rhs"] for r in rows)
    bad = rows_failing(rows)
    if len(rows) != 10000 or slack > 1e-10:
        bad.append(f"max lhs - rhs {slack:.2e}")
    acceptance_line(5, "weighted eigenvalue sums against frame diagonals", bad,
                    f"max lhs - rhs {slack:.2e}")


# ---------------------------------------------------------------------------
# 6-9: manufactured solve and certification
# ---------------------------------------------------------------------------

def test_criterion_06_manufactured_solve(manufactured_run, acceptance_line):
    rep = manufactured_run
    rows = rep.tables["solves"]
    pick = ("Newton converged", "error ratio", "solve time")
    bad = failed(rep, lambda a: any(p in a.label for p in pick))
    starts = {(r["m"], r["start"]) for r in rows}
    if starts != {(9, "subsolution"), (9, "exact"), (17, "subsolution"), (17, "exact")}:
        bad.append(f"solves {sorted(starts)}")
    ratios = [a.value for a in rep.assertions if "error ratio" in a.label]
    times = [a.value for a in rep.assertions if "solve time" in a.label]
    if len(ratios) != 2:
        bad.append("missing error ratios")
    acceptance_line(6, "manufactured Monge-Ampere solve", bad,
                    f"ratios {ratios}, 17^4 times {times} s")


def test_criterion_07_sandwich_and_admissibility(manufactured_run, pn1_run, acceptance_line):
    pick = ("below solution", "below supersolution", "admissible")
    bad = []
    checked = 0
    for rep in (manufactured_run, pn1_run):
        bad += failed(rep, lambda a: any(p in a.label for p in pick))
        checked += sum(any(p in a.label for p in pick) for a in rep.assertions)
        for r in rep.tables["solves"]:
            if r["sandwich_lower"] < -1e-8 or r["sandwich_upper"] < -1e-8 or r["margin"] <= 0:
                bad.append(f"m={r['m']} start={r['start']}")
    acceptance_line(7, "sandwich and admissibility on every solve", bad, f"{checked} checks")


def test_criterion_08_barrier_certificate(manufactured_run, acceptance_line):
    rep = manufactured_run
    points = rep.tables["points"]
    bad = failed(rep, lambda a: a.label.startswith("point "))
    if len(points) < 8:
        bad.append(f"only {len(points)} points")
    if any(not r["applicable"] for r in points):
        bad.append("a point had t0 <= 0, so no barrier was exercised")
    controls = [a for a in rep.assertions if "control fails" in a.label]
    if len(controls) != 2 * len(points):
        bad.append(f"{len(controls)} control assertions")
    acceptance_line(8, "barrier certificate at boundary points", bad,
                    f"{len(points)} points, {len(controls)} controls failed as designed")


def test_criterion_09_double_normal(manufactured_run, pn1_run, acceptance_line):
    rc = [a for a in manufactured_run.assertions if "double-normal bound" in a.label]
    rs = [a for a in pn1_run.assertions if "trace bound" in a.label]
    bad = [f"{a.label} ({a.value} > {a.bound})" for a in rc + rs if a.status != "pass"]
    if len(rc) < 8 or len(rs) < 8:
        bad.append(f"{len(rc)} R_c and {len(rs)} R_s checks")
    worst = max(a.value / a.bound for a in rc + rs)
    acceptance_line(9, "double-normal and trace bounds", bad,
                    f"{len(rc)} R_c, {len(rs)} R_s, max measured/bound {worst:.3f}")


# ---------------------------------------------------------------------------
# 10: reductions for the (n−1)-plurisubharmonic operator
# ---------------------------------------------------------------------------

def test_criterion_10_reductions(pn1_run, acceptance_line):
    bad = []
    rng = np.random.default_rng(0)
    n = 3
    # flat metric: W ≡ 0 for any gradient
    flat = FlatMetric(n)
    w_max = 0.0
    for _ in range(200):
        x = rng.uniform(-0.5, 0.5, 2 * n)
        du = rng.normal(size=n) + 1j * rng.normal(size=n)
        w_max = max(w_max, float(np.max(np.abs(w_tensor(flat, z_tensor(flat, du, x), x)))))
    if w_max != 0.0:
        bad.append(f"flat W {w_max:.2e}")
    # n = 2: log P_1 agrees with log det nodewise
    inst = build_instance({"preset": "manufactured-pn1", "perturbation": 0.1})
    grid = Grid(inst.domain, 17)
    u = GridField.from_field(grid, inst.exact)
    alt = build_instance({"preset": "manufactured-pn1", "perturbation": 0.1})
    alt.operator = SpectralOperator("log-sigma-k", 2, 2)
    alt.pn1 = False
    # both instances share ψ, so residuals differ exactly by the operator values
    res_p = DiscreteOperator(inst, grid).residual(u.values)
    res_d = DiscreteOperator(alt, grid).residual(u.values)
    d_max = float(np.max(np.abs(res_p - res_d)))
    d_max = max(d_max, abs(pn1_operator_apply(inst, u, 0)[0] - pn1_operator_apply(alt, u, 0)[0]))
    if d_max > 1e-12:
        bad.append(f"log P_1 - log det {d_max:.2e}")
    sol = [a for a in pn1_run.assertions if "log P_1 and log det" in a.label]
    bad += [f"{a.label} ({a.value})" for a in sol if a.status != "pass"]
    # origin identities on conformal metrics
    o_max = 0.0
    for rho, dim in (("0.3*x1 + 0.2*y2", 2), ("0.2*x1 - 0.1*y2 + 0.15*x3*y1", 3)):
        metric = ConformalMetric(rho, dim)
        for _ in range(20):
            x = rng.normal(size=2 * dim)
            chart = boundary_chart(Ball(n=dim), metric, x / np.linalg.norm(x))
            coef = rng.normal(size=2 * dim)
            v = ScalarField(" + ".join(f"({c:.6f})*{nm}" for c, nm in
                                       zip(coef, [f"{a}{k}" for k in range(1, dim + 1)
                                                  for a in "xy"])), dim)
            o_max = max(o_max, origin_identities_check(chart, v).max)
    if o_max > 1e-8:
        bad.append(f"origin identities {o_max:.2e}")
    # closed-form t₀ against bisection: certified points and random n = 3 blocks
    t_max = max(abs(r["t0"] - r["t0_crosscheck"]) for r in pn1_run.tables["points"])
    op3 = SpectralOperator("log-P-n-minus-1", 3)
    for _ in range(100):
        h = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        sub = h @ h.conj().T + 0.1 * np.eye(2)
        sig = -np.diag(rng.uniform(0.1, 1.0, 2))
        eta = rng.uniform(0.05, 0.9) * np.trace(sub).real / -np.trace(sig).real
        closed = crossing_t0_pn1(np.trace(sub).real, np.trace(sig).real, eta).t0
        t_max = max(t_max, abs(closed - crossing_t0_general(op3, sub, sig, eta).t0))
    if t_max > 1e-8:
        bad.append(f"t0 closed form vs bisection {t_max:.2e}")
    acceptance_line(10, "reductions for log P_{n-1}", bad,
                    f"W {w_max:.0e}, P_1 vs det {d_max:.1e}, identities {o_max:.1e}, "
                    f"t0 {t_max:.1e}")


# ---------------------------------------------------------------------------
# 11: estimate sweep
# ---------------------------------------------------------------------------

def test_criterion_11_estimate_sweep(acceptance_line):
    rep = run({"experiment": "estimate-sweep", "seed": 0, "jobs": 4,
               "instance": {"preset": "manufactured", "perturbation": 0.1},
               "grid": {"m": 17},
               "sweep": {"t_values": [1.0, 2.0, 4.0, 8.0], "refine": [9, 17],
                         "certify_points": 1, "band": 10.0, "refinement_tol": 0.05}})
    rows = rep.tables["sweep"]
    bad = failed(rep)
    if len(rows) != 4 or any(r["status"] != "pass" for r in rows):
        bad.append("not all four members ran")
    deltas = [r["delta"] for r in rows]
    if not all(d > 0 for d in deltas):
        bad.append(f"degeneracy gaps {deltas}")
    r1 = [r["r1"] for r in rows]
    band = max(r1) / min(r1)
    change = max(r["r1_refinement_change"] for r in rows)
    acceptance_line(11, "r1 across the psi family", bad,
                    f"band {band:.3f}, max refinement change {change:.2%}")
