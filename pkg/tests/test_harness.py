"""Configs, campaigns, solve-and-certify runs, sweeps and reports."""

import json

import pytest

from hessbound.errors import ConfigInvalid
from hessbound.harness import (
    ExperimentConfig,
    build_instance,
    default_config,
    family_member,
    run,
    run_estimate_sweep,
    run_lemma_campaign,
    run_solve_and_certify,
    summarize,
    validate_report,
)

RR = "(x1^2 + y1^2 + x2^2 + y2^2)"
USTAR = f"{RR} + {RR}^2/4"


def small_campaign(**kw):
    camp = dict(cases=200, sweep_instances=10, sweep_steps=10, closed_form_cases=50,
                structural_pairs=200, matrix_pairs=40, marcus_cases=200)
    camp.update(kw)
    return {"experiment": "lemma-campaign", "seed": 3, "campaign": camp}


def small_solve(experiment="solve", **kw):
    doc = {"experiment": experiment, "grid": {"m": 9},
           "instance": {"preset": "manufactured", "perturbation": 0.1},
           "certify": {"points": 2}}
    doc.update(kw)
    return doc


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(small_campaign())
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert cfg.campaign["cases"] == 200 and cfg.campaign["eps_values"] == [0.1, 0.5, 1.0]


@pytest.mark.parametrize("doc", [
    {"experiment": "nonsense"},
    {"experiment": "solve", "grid": {"m": 9}, "unexpected": 1},
    {"experiment": "lemma-campaign", "campaign": {"cases": 0}},
    {"experiment": "lemma-campaign", "campaign": {"n_min": 5, "n_max": 3}},
    {"experiment": "lemma-campaign", "campaign": {"corner_extra": [2.0, 1.0]}},
    [1, 2],
])
def test_config_rejects(doc):
    with pytest.raises(ConfigInvalid):
        ExperimentConfig.from_dict(doc)


def test_config_load_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigInvalid):
        ExperimentConfig.load(p)
    with pytest.raises(ConfigInvalid):
        ExperimentConfig.load(tmp_path / "missing.json")


def test_default_config_overrides():
    cfg = default_config("estimate-sweep", seed=7)
    assert cfg.seed == 7 and cfg.sweep["band"] == 10.0


# ---------------------------------------------------------------------------
# lemma campaigns
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def campaign_report():
    return run_lemma_campaign(small_campaign())


def test_small_campaign_passes(campaign_report):
    rep = campaign_report
    assert rep.passed and rep.exit_code == 0
    assert rep.counts["pass"] == 6
    assert set(rep.tables) == {f"campaign_{x}" for x in
                               ("growth", "refinement", "card", "closed-form", "structural",
                                "marcus")}


def test_campaign_csv_is_deterministic(campaign_report):
    again = run_lemma_campaign(small_campaign())
    for name in campaign_report.tables:
        assert campaign_report.csv_text(name) == again.csv_text(name)


def test_campaign_seed_changes_cases(campaign_report):
    other = run_lemma_campaign(dict(small_campaign(lemmas=["growth"]), seed=4))
    assert other.csv_text("campaign_growth") != campaign_report.csv_text("campaign_growth")


def test_campaign_threads_agree(campaign_report):
    threaded = run_lemma_campaign(dict(small_campaign(), jobs=3))
    for name in campaign_report.tables:
        assert threaded.csv_text(name) == campaign_report.csv_text(name)


def test_corner_below_threshold_is_skipped():
    with pytest.warns(UserWarning, match="skipped"):
        rep = run_lemma_campaign(small_campaign(lemmas=["growth"], corner_shift=-1.0))
    assert rep.exit_code == 0
    assert rep.counts == {"pass": 0, "fail": 0, "skipped": 1}
    assert all(r["status"] == "skipped" for r in rep.tables["campaign_growth"])


def test_single_diagonal_case():
    rep = run_lemma_campaign(small_campaign(lemmas=["growth", "refinement"], cases=1,
                                            diagonal=True))
    assert rep.passed
    for name in ("campaign_growth", "campaign_refinement"):
        (row,) = rep.tables[name]
        assert row["max_gap"] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# solve and certify
# ---------------------------------------------------------------------------

def test_solve_run_small():
    rep = run_solve_and_certify(small_solve(grid={"m": 9, "refine": [5]},
                                            solver={"starts": ["subsolution", "exact"]}))
    assert rep.passed
    rows = rep.tables["solves"]
    assert {(r["m"], r["start"]) for r in rows} == {(5, "subsolution"), (5, "exact"),
                                                    (9, "subsolution"), (9, "exact")}
    assert "points" not in rep.tables


def test_certify_run_small():
    rep = run(small_solve("barrier-certify"))
    assert rep.passed, [a.label for a in rep.failures()]
    assert len(rep.tables["points"]) == 2
    labels = [a.label for a in rep.assertions]
    assert any("tiny-A control fails" in x for x in labels)
    assert any("double-normal bound" in x for x in labels)


def test_non_subsolution_rejected_with_node():
    inst = {"domain": {"shape": "ball", "n": 2}, "operator": {"kind": "log-sigma-k", "k": 2},
            "psi": {"manufactured": USTAR}, "phi": "1.25",
            "subsolution": f"{USTAR} - 0.1*(1 - {RR})^2"}
    with pytest.raises(ConfigInvalid, match="node"):
        run(small_solve(instance=inst))


def test_exact_start_needs_known_solution():
    inst = {"domain": {"shape": "ball", "n": 2}, "operator": {"kind": "log-sigma-k", "k": 2},
            "psi": "0", "phi": "1", "subsolution": RR}
    with pytest.raises(ConfigInvalid):
        run(small_solve(instance=inst, solver={"starts": ["exact"]}))


def test_unknown_preset():
    with pytest.raises(ConfigInvalid):
        build_instance({"preset": "nope"})


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def test_family_member_scaling(manufactured, grid9):
    m = family_member(manufactured, 4.0)
    # log det is homogeneous of degree 2: data scale by 2 and ψ shifts by log 4
    assert m.phi.value(grid9.points[:1])[0] == pytest.approx(2 * 1.25)
    assert m.psi_shift == pytest.approx(manufactured.psi_shift + 1.3862943611198906)
    m.check_subsolution(grid9.points)


def test_single_member_sweep_matches_solve():
    sweep = run_estimate_sweep({"experiment": "estimate-sweep", "grid": {"m": 9},
                                "sweep": {"t_values": [1.0], "refine": [5],
                                          "certify_points": 0}})
    solve = run_solve_and_certify(small_solve())
    (row,) = sweep.tables["sweep"]
    (est,) = solve.tables["estimates"]
    assert row["r1"] == pytest.approx(est["r1"], rel=1e-12)
    assert row["sup_gradient"] == pytest.approx(est["sup_gradient"], rel=1e-12)


def test_sweep_skips_degenerate_members():
    rep = run_estimate_sweep({"experiment": "estimate-sweep", "grid": {"m": 5},
                              "sweep": {"t_values": [0.0, -1.0], "refine": [5],
                                        "certify_points": 0}})
    assert rep.exit_code == 0
    assert rep.counts["skipped"] == 2
    assert all(r["status"] == "skipped" for r in rep.tables["sweep"])


def test_sweep_delta_floor_skip():
    # √σ₂ with ψ = 1 has gap 1, and the member at t has gap t
    inst = {"domain": {"shape": "ball", "n": 2}, "operator": {"kind": "sigma-k-root", "k": 2},
            "psi": "1", "phi": "1", "subsolution": RR}
    rep = run_estimate_sweep({"experiment": "estimate-sweep", "grid": {"m": 5},
                              "instance": inst,
                              "sweep": {"t_values": [0.5, 1.0], "refine": [5],
                                        "certify_points": 0, "delta_floor": 0.75}})
    low, high = rep.tables["sweep"]
    assert low["status"] == "skipped" and "floor" in low["note"]
    assert low["delta"] == pytest.approx(0.5)
    assert high["status"] == "pass" and high["delta"] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def test_report_write_and_validate(tmp_path, campaign_report):
    paths = campaign_report.write(tmp_path)
    names = sorted(p.name for p in paths)
    assert "report.json" in names and "campaign_growth.csv" in names
    doc = json.loads((tmp_path / "report.json").read_text())
    validate_report(doc)
    assert doc["summary"]["exit_code"] == 0
    assert (tmp_path / "campaign_marcus.csv").read_text() == \
        campaign_report.csv_text("campaign_marcus")
    assert summarize(doc)[0].startswith("lemma-campaign: 6 pass, 0 fail")


def test_report_validation_rejects_tampering(campaign_report):
    doc = campaign_report.to_dict()
    doc["summary"].pop("exit_code")
    with pytest.raises(ConfigInvalid):
        validate_report(doc)
