from __future__ import annotations

import random

import pytest

from cabs.core import ReportDecomposition
from cabs.errors import EmptyCorpus, LengthMismatch
from cabs.matching import MatchResult, UnitJudgment, lexical_match
from cabs.metrics import (
    EPSILON,
    MetricReport,
    aggregate,
    clinical_fidelity,
    entity_core,
    organ_coverage,
    reports_to_csv,
    score_case,
)

from synth import oracle_scores, random_decomposition, random_match_pair


def judgment(hit, loc=False, attr=False, name="u"):
    return UnitJudgment(name=name, hit=hit, location_match=loc, attribute_match=attr)


def result(judgments, fp=0):
    return MatchResult(
        judgments=tuple(judgments),
        false_positives=tuple(f"fp{i}" for i in range(fp)),
        pred_count=sum(1 for j in judgments if j.hit) + fp,
    )


class TestEntityCore:
    def test_two_of_three_with_one_fp(self):
        m = result([judgment(True), judgment(True), judgment(False)], fp=1)
        precision, recall, f1 = entity_core(m)
        assert precision == pytest.approx(2 / 3, abs=1e-7)
        assert recall == pytest.approx(2 / 3, abs=1e-7)
        assert f1 == pytest.approx(2 / 3, abs=1e-7)

    def test_empty_case_scores_zero(self):
        m = result([])
        assert entity_core(m) == (0.0, 0.0, 0.0)

    def test_perfect_match_close_to_one(self):
        m = result([judgment(True, True, True)] * 3)
        precision, recall, f1 = entity_core(m)
        for v in (precision, recall, f1):
            assert abs(v - 1.0) < 1e-7


class TestClinicalFidelity:
    def test_hit_conditioning(self):
        m = result(
            [judgment(True, True, True), judgment(True, True, False), judgment(False)]
        )
        loc, attr, full = clinical_fidelity(m)
        assert loc == pytest.approx(1.0, abs=1e-7)
        assert attr == pytest.approx(0.5, abs=1e-7)
        assert full == pytest.approx(0.5, abs=1e-7)

    def test_no_hits_scores_zero(self):
        m = result([judgment(False), judgment(False)])
        assert clinical_fidelity(m) == (0.0, 0.0, 0.0)

    def test_all_consistent_close_to_one(self):
        m = result([judgment(True, True, True)] * 4)
        for v in clinical_fidelity(m):
            assert abs(v - 1.0) < 1e-7


class TestOrganCoverage:
    def test_macro_average_over_organs(self):
        # lung has 2 units (1 hit), liver has 1 unit (1 hit)
        from cabs.core import AbnormalityUnit, Organ

        units = [
            AbnormalityUnit("nodule", "e", organ=Organ.LUNG),
            AbnormalityUnit("consolidation", "e", organ=Organ.LUNG),
            AbnormalityUnit("fatty liver", "e", organ=Organ.LIVER),
        ]
        gt = ReportDecomposition.from_units(units)
        m = result([judgment(True), judgment(False), judgment(True)])
        or_rate, fmor_rate = organ_coverage(m, gt)
        assert or_rate == pytest.approx(0.75, abs=1e-6)
        assert fmor_rate == pytest.approx(0.0, abs=1e-7)

    def test_single_organ_full_match(self):
        from cabs.core import AbnormalityUnit, Organ

        gt = ReportDecomposition.from_units(
            [AbnormalityUnit("nodule", "e", organ=Organ.LUNG)]
        )
        m = result([judgment(True, True, True)])
        or_rate, fmor_rate = organ_coverage(m, gt)
        assert abs(or_rate - 1.0) < 1e-7
        assert abs(fmor_rate - 1.0) < 1e-7

    def test_empty_gt(self):
        gt = ReportDecomposition.from_units([])
        assert organ_coverage(result([]), gt) == (0.0, 0.0)

    def test_length_mismatch(self):
        from cabs.core import AbnormalityUnit, Organ

        gt = ReportDecomposition.from_units(
            [AbnormalityUnit("nodule", "e", organ=Organ.LUNG)]
        )
        with pytest.raises(LengthMismatch):
            organ_coverage(result([]), gt)


class TestOracleEquivalence:
    def test_thousand_random_match_results(self):
        rng = random.Random(20260810)
        for _ in range(1000):
            gt, match = random_match_pair(rng, k_max=10, organ_max=5)
            report = score_case(match, gt)
            expected = oracle_scores(match, gt)
            for name, value in expected.items():
                assert getattr(report, name) == pytest.approx(value, abs=1e-12), name

    def test_scores_in_range(self):
        rng = random.Random(99)
        for _ in range(300):
            gt, match = random_match_pair(rng)
            report = score_case(match, gt)
            for name, value in report.scores().items():
                assert 0.0 <= value <= 1.0, name

    def test_flipping_hit_never_decreases_recall_or_or_rate(self):
        rng = random.Random(17)
        for _ in range(100):
            gt, match = random_match_pair(rng, k_max=8)
            misses = [i for i, j in enumerate(match.judgments) if not j.hit]
            if not misses:
                continue
            flip = rng.choice(misses)
            upgraded = list(match.judgments)
            upgraded[flip] = UnitJudgment(
                name=upgraded[flip].name, hit=True,
                location_match=False, attribute_match=False,
            )
            better = MatchResult(
                judgments=tuple(upgraded),
                false_positives=match.false_positives,
                pred_count=match.pred_count + 1,
            )
            before = score_case(match, gt)
            after = score_case(better, gt)
            assert after.recall >= before.recall
            assert after.or_rate >= before.or_rate


class TestStructuralInvariants:
    def test_fully_consistent_bounded_by_parts(self):
        rng = random.Random(4)
        for _ in range(200):
            gt, match = random_match_pair(rng)
            r = score_case(match, gt)
            assert r.fully_consistent_accuracy <= min(
                r.location_accuracy, r.attribute_accuracy
            ) + 1e-12
            assert r.fmor_rate <= r.or_rate + 1e-12
            assert r.f1 <= max(r.precision, r.recall) + 1e-12


class TestSelfEvaluation:
    def test_gt_against_itself_is_one(self):
        rng = random.Random(31)
        for _ in range(100):
            gt = random_decomposition(rng, k_min=1, k_max=6)
            match = lexical_match(gt.abnormalities, gt.abnormalities)
            report = score_case(match, gt)
            for name, value in report.scores().items():
                assert abs(value - 1.0) < 1e-7, name


class TestAggregate:
    def all_value(self, value: float, counts=(1, 0, 1)) -> MetricReport:
        return MetricReport(
            precision=value, recall=value, f1=value,
            location_accuracy=value, attribute_accuracy=value,
            fully_consistent_accuracy=value, or_rate=value, fmor_rate=value,
            hit_count=counts[0], fp_count=counts[1], gt_count=counts[2],
        )

    def test_mean_of_extremes(self):
        agg = aggregate([self.all_value(1.0), self.all_value(0.0)])
        for name, value in agg.scores().items():
            assert value == pytest.approx(0.5), name
        assert agg.gt_count == 2

    def test_single_report_is_identity(self):
        r = self.all_value(0.7)
        agg = aggregate([r])
        assert agg.scores() == r.scores()

    def test_f1_mean(self):
        reports = [self.all_value(0.2), self.all_value(0.4), self.all_value(0.9)]
        assert aggregate(reports).f1 == pytest.approx(0.5)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            aggregate([])

    def test_micro_mode_pools_counts(self):
        rng = random.Random(8)
        pairs = [random_match_pair(rng, k_max=6) for _ in range(20)]
        reports = [score_case(m, g) for g, m in pairs]
        micro = aggregate(reports, mode="micro")
        tp = sum(r.hit_count for r in reports)
        fp = sum(r.fp_count for r in reports)
        fn = sum(r.gt_count - r.hit_count for r in reports)
        assert micro.precision == pytest.approx(tp / (tp + fp + EPSILON), abs=1e-12)
        assert micro.recall == pytest.approx(tp / (tp + fn + EPSILON), abs=1e-12)
        macro = aggregate(reports, mode="macro")
        assert micro.or_rate == macro.or_rate  # organ scores stay macro


def test_csv_emitter_has_header_and_rows():
    m = result([judgment(True, True, True)])
    gt = ReportDecomposition.from_units([])
    report = MetricReport(
        precision=1, recall=1, f1=1, location_accuracy=1, attribute_accuracy=1,
        fully_consistent_accuracy=1, or_rate=1, fmor_rate=1,
        hit_count=1, fp_count=0, gt_count=1,
    )
    text = reports_to_csv([("case-1", report)])
    lines = text.strip().splitlines()
    assert lines[0].startswith("case_id,precision,recall,f1")
    assert lines[1].startswith("case-1,")
