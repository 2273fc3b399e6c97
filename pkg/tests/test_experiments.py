"""Tests for the cross-validation studies."""

from pathlib import Path

import pytest

from impact_hedge.events import StudyCellEvaluated
from impact_hedge.experiments import (
    run_consistency_matrix,
    run_expansion_study,
    run_hedge_order,
    run_study,
    run_variance_identity,
)
from impact_hedge.schema import (
    HypothesisViolation,
    ModelConfig,
    RootConfig,
    StudyConfig,
    parse_study_config,
)


@pytest.fixture
def variance_study(fixtures_dir: Path) -> StudyConfig:
    return parse_study_config(fixtures_dir / "variance_study.yaml")


def _as(study: StudyConfig, kind: str, **budgets: object) -> StudyConfig:
    return study.model_copy(update={"study": kind, **budgets})


class TestVarianceIdentity:
    def test_identity_holds(self, variance_study: StudyConfig) -> None:
        report = run_variance_identity(variance_study)
        assert report.passed
        assert [cell.name for cell in report.cells] == ["delta_v_vs_variance"]
        row = report.tables["variance_identity"][0]
        assert row["coefficient"] == pytest.approx(0.5)
        assert 0.0 < row["variance"] < 0.25

    def test_requires_constant_coefficients(self) -> None:
        study = StudyConfig(
            study="variance_identity",
            config=RootConfig(model=ModelConfig(sigma0=0.2, f=0.1, vol_scaling="proportional")),
            seeds=[1],
        )
        with pytest.raises(HypothesisViolation, match="constant coefficients"):
            run_variance_identity(study)

    def test_cells_are_emitted(self, variance_study: StudyConfig, recorder) -> None:
        run_variance_identity(variance_study, recorder)
        cells = recorder.of_type(StudyCellEvaluated)
        assert len(cells) == 1
        assert cells[0].study == "variance_identity"


class TestExpansionStudy:
    def test_second_order_gap(self, variance_study: StudyConfig) -> None:
        report = run_expansion_study(_as(variance_study, "expansion", eps_list=[0.2, 0.1, 0.05]))
        assert report.passed
        names = [cell.name for cell in report.cells]
        assert names == ["fitted_slope", "halving_ratio_0", "halving_ratio_1"]
        assert len(report.tables["expansion"]) == 3


class TestConsistencyMatrix:
    def test_every_cell_passes(self, variance_study: StudyConfig) -> None:
        study = _as(variance_study, "consistency_matrix", dual_paths=10000, variance_paths=4000,
                    hedge_paths=2000, hedge_steps_list=[50])
        report = run_consistency_matrix(study)
        cells = {cell.name: cell for cell in report.cells}
        assert {
            "pde_vs_dual_optimal",
            "dual_lifted_vs_raw_payoff",
            "weak_duality_const_0.75",
            "weak_duality_const_1",
            "weak_duality_const_1.25",
            "delta_v_vs_feynman_kac",
            "delta_v_vs_tangent_process",
            "hedge_mean_error",
            "hedge_domain_escapes",
            "expansion_vs_full_pde",
            "impact_free_closed_form",
            "coarsened_grid_ordered",
        } == set(cells)
        # dual paths take 400 steps against 50 solver steps
        assert cells["pde_vs_dual_optimal"].passed
        assert cells["impact_free_closed_form"].passed
        assert cells["expansion_vs_full_pde"].passed
        assert cells["coarsened_grid_ordered"].passed
        assert report.passed
        assert len(report.tables["consistency_matrix"]) == len(report.cells)


class TestHedgeOrder:
    def test_tables(self, variance_study: StudyConfig) -> None:
        study = _as(variance_study, "hedge_order", hedge_paths=100, hedge_steps_list=[25, 100],
                    eps_list=[0.2, 0.1, 0.05])
        report = run_hedge_order(study)
        assert [row["n_steps"] for row in report.tables["exact"]] == [25, 100]
        assert [row["eps"] for row in report.tables["asymptotic"]] == [0.0, 0.2, 0.1, 0.05]
        assert all(row["excess_over_floor"] >= 0.0 for row in report.tables["asymptotic"])
        assert all(row["gap_to_exact"] >= 0.0 for row in report.tables["asymptotic"])

    def test_orders_hold(self, variance_study: StudyConfig) -> None:
        study = _as(variance_study, "hedge_order", hedge_paths=2000, hedge_steps_list=[200, 800],
                    eps_list=[0.4, 0.2, 0.1])
        report = run_hedge_order(study)
        assert [cell.name for cell in report.cells] == [
            "exact_sup_ratio_200_800",
            "asymptotic_ratio_0.4_0.2",
            "asymptotic_ratio_0.2_0.1",
        ]
        assert report.passed


class TestRunStudy:
    def test_dispatches_on_kind(self, variance_study: StudyConfig) -> None:
        report = run_study(variance_study)
        assert report.study == "variance_identity"
        assert len(report.config_hash) == 64

    def test_same_config_same_report(self, variance_study: StudyConfig) -> None:
        assert run_study(variance_study) == run_study(variance_study)
