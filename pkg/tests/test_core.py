from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cabs.core import (
    AbnormalityUnit,
    Certainty,
    Organ,
    ReportDecomposition,
    canonical_organ,
    parse_decomposition,
    serialize_decomposition,
)
from cabs.errors import EmptyLabel, MalformedJson, SchemaViolation

from synth import random_decomposition

PROMPT_EXAMPLE = {
    "abnormalities": [
        {
            "name": "ground-glass opacity",
            "evidence": "Patchy ground-glass opacities are seen in the bilateral lower lungs with ill-defined margins",
            "location": "bilateral lower lungs",
            "attributes": "patchy distribution with ill-defined margins",
            "certainty": "definite",
            "organ": "lung",
        },
        {
            "name": "fatty liver",
            "evidence": "Diffuse decreased attenuation of the liver, consider fatty liver",
            "location": "liver",
            "attributes": "diffusely decreased attenuation",
            "certainty": "possible",
            "organ": "liver",
        },
        {
            "name": "pleural effusion",
            "evidence": "There is evidence of pleural effusion",
            "location": "",
            "attributes": "",
            "certainty": "definite",
            "organ": "lung",
        },
    ],
    "report_has_abnormality": True,
}


class TestParseDecomposition:
    def test_canonical_example_document(self):
        d = parse_decomposition(json.dumps(PROMPT_EXAMPLE))
        assert d.unit_count == 3
        assert d.report_has_abnormality is True
        assert d.abnormalities[0].name == "ground-glass opacity"
        assert d.abnormalities[1].certainty is Certainty.POSSIBLE
        assert d.abnormalities[1].organ is Organ.LIVER
        assert d.abnormalities[2].location == ""

    def test_empty_decomposition(self):
        d = parse_decomposition('{"abnormalities": [], "report_has_abnormality": false}')
        assert d.unit_count == 0
        assert not d.report_has_abnormality

    def test_bad_certainty_names_path(self):
        doc = json.loads(json.dumps(PROMPT_EXAMPLE))
        doc["abnormalities"][0]["certainty"] = "suspected"
        with pytest.raises(SchemaViolation) as info:
            parse_decomposition(json.dumps(doc))
        assert info.value.path == "abnormalities[0].certainty"

    def test_bad_organ_names_path(self):
        doc = json.loads(json.dumps(PROMPT_EXAMPLE))
        doc["abnormalities"][1]["organ"] = "mediastinum"
        with pytest.raises(SchemaViolation) as info:
            parse_decomposition(json.dumps(doc))
        assert info.value.path == "abnormalities[1].organ"

    def test_unknown_key_rejected(self):
        doc = json.loads(json.dumps(PROMPT_EXAMPLE))
        doc["abnormalities"][0]["severity"] = "mild"
        with pytest.raises(SchemaViolation) as info:
            parse_decomposition(json.dumps(doc))
        assert "severity" in info.value.path

    def test_unknown_top_level_key_rejected(self):
        doc = json.loads(json.dumps(PROMPT_EXAMPLE))
        doc["extra"] = 1
        with pytest.raises(SchemaViolation):
            parse_decomposition(json.dumps(doc))

    def test_flag_inconsistency_rejected(self):
        with pytest.raises(SchemaViolation) as info:
            parse_decomposition('{"abnormalities": [], "report_has_abnormality": true}')
        assert info.value.path == "report_has_abnormality"

    def test_missing_field_rejected(self):
        doc = json.loads(json.dumps(PROMPT_EXAMPLE))
        del doc["abnormalities"][0]["evidence"]
        with pytest.raises(SchemaViolation) as info:
            parse_decomposition(json.dumps(doc))
        assert info.value.path == "abnormalities[0].evidence"

    def test_not_json(self):
        with pytest.raises(MalformedJson):
            parse_decomposition("not json at all")

    def test_empty_evidence_rejected(self):
        doc = json.loads(json.dumps(PROMPT_EXAMPLE))
        doc["abnormalities"][2]["evidence"] = "  "
        with pytest.raises(SchemaViolation):
            parse_decomposition(json.dumps(doc))

    def test_leaked_location_token_in_name_rejected(self):
        doc = {
            "abnormalities": [
                {
                    "name": "nodule in right upper lobe",
                    "evidence": "nodule in right upper lobe",
                    "location": "right upper lobe",
                    "attributes": "",
                    "certainty": "definite",
                    "organ": "lung",
                }
            ],
            "report_has_abnormality": True,
        }
        with pytest.raises(SchemaViolation) as info:
            parse_decomposition(json.dumps(doc))
        assert info.value.path == "abnormalities[0].name"

    def test_organ_word_in_name_is_allowed(self):
        # "fatty liver" with location "liver" is the canonical counterexample
        d = parse_decomposition(json.dumps(PROMPT_EXAMPLE))
        assert d.abnormalities[1].name == "fatty liver"


class TestRoundTrip:
    def test_round_trip_canonical_example(self):
        d = parse_decomposition(json.dumps(PROMPT_EXAMPLE))
        assert parse_decomposition(serialize_decomposition(d)) == d

    def test_round_trip_seeded_corpus(self):
        rng = random.Random(7)
        for _ in range(200):
            d = random_decomposition(rng, k_min=0, k_max=6)
            text = serialize_decomposition(d)
            assert parse_decomposition(text) == d
            # byte stability
            assert serialize_decomposition(parse_decomposition(text)) == text

    def test_order_preserved(self):
        d = parse_decomposition(json.dumps(PROMPT_EXAMPLE))
        names = [u.name for u in d.abnormalities]
        assert names == ["ground-glass opacity", "fatty liver", "pleural effusion"]
        again = parse_decomposition(serialize_decomposition(d))
        assert [u.name for u in again.abnormalities] == names


class TestCanonicalOrgan:
    @pytest.mark.parametrize(
        "label,expected",
        [
            ("lung", Organ.LUNG),
            ("Lungs", Organ.LUNG),
            ("mediastinum", Organ.OTHER),
            ("  LIVER ", Organ.LIVER),
            ("hepatic", Organ.LIVER),
            ("renal", Organ.KIDNEY),
            ("colon", Organ.BOWEL),
            ("aorta", Organ.VESSEL),
            ("other", Organ.OTHER),
        ],
    )
    def test_folding(self, label, expected):
        assert canonical_organ(label) is expected

    def test_every_alias_maps_into_label_set(self):
        import json as _json
        from importlib import resources

        raw = _json.loads(
            resources.files("cabs.data").joinpath("organ_aliases.json").read_text("utf-8")
        )
        labels = {o.value for o in Organ}
        assert set(raw["aliases"]) == labels
        for organ, aliases in raw["aliases"].items():
            for alias in aliases:
                assert canonical_organ(alias).value == organ

    def test_empty_label(self):
        with pytest.raises(EmptyLabel):
            canonical_organ("   ")

    @given(st.text(min_size=1).filter(lambda s: s.strip()))
    @settings(max_examples=200)
    def test_idempotent(self, label):
        once = canonical_organ(label)
        assert canonical_organ(once.value) is once


def test_units_are_immutable():
    unit = AbnormalityUnit(name="nodule", evidence="nodule is noted")
    with pytest.raises(AttributeError):
        unit.name = "other"
    d = ReportDecomposition.from_units([unit])
    assert isinstance(d.abnormalities, tuple)
