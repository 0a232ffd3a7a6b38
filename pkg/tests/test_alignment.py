from __future__ import annotations

import json
from importlib import resources

import pytest
from hypothesis import given, strategies as st

from threatsva.alignment import (align, classification_prompt, classify_design, clean_reply, intersect,
                                 map_threats, resolve_classification, resolve_threats)
from threatsva.errors import ClassificationUnresolvable, NoSuchThreat
from threatsva.gateway import derive_seed, prompt_key
from threatsva.knowledge import DesignCategory, load_knowledge_base

from conftest import mock_gateway, write_mock


def _rows(name: str) -> dict[str, set[int]]:
    text = resources.files("threatsva.data").joinpath(name).read_text()
    return {r["name"]: set(r["cwe_ids"]) for r in map(json.loads, filter(str.strip, text.splitlines()))}


RAW_CATEGORIES = _rows("design_categories.jsonl")
RAW_THREATS = _rows("threat_classes.jsonl")


def test_peripheral_improper_access_example(kb):
    target = align(kb.lookup_category("Peripheral Interfaces"), ["Improper Access control"], kb)
    assert target.c_target == RAW_CATEGORIES["Peripheral Interfaces"] & RAW_THREATS["Improper Access control"]
    assert target.ordered == sorted(target.c_target)


def test_memory_fault_injection_is_empty(kb):
    target = align(kb.lookup_category("Memory Components"), ["Fault Injection Attack"], kb)
    assert target.c_target == frozenset()
    assert target.ordered == []


def test_provenance_lists_contributing_rows(kb):
    cat = kb.lookup_category("Communication Interfaces")
    target = align(cat, ["Information Leakage", "Side Channel Attack"], kb)
    for cid, prov in target.provenance.items():
        assert prov["category"] == [cat.name]
        assert prov["threats"] and all(cid in RAW_THREATS[t] for t in prov["threats"])
    assert set(target.provenance) == set(target.c_target)


def test_intersect_without_rows_marks_supplied(kb):
    cat = kb.lookup_category("Memory Components")
    target = intersect(cat, {1189, 5})
    assert target.c_target == {1189}
    assert target.provenance[1189]["threats"] == ["<supplied>"]


def test_to_dict_is_json_ready(kb):
    target = align(kb.lookup_category("Peripheral Interfaces"), ["Improper Access control"], kb)
    d = json.loads(json.dumps(target.to_dict()))
    assert d["c_target"] == target.ordered
    assert d["category"] == "Peripheral Interfaces"


def test_duplicate_threats_dedup(kb):
    rows = resolve_threats(["Denial of Service", "denial of service", "Denial of Servic"], kb)
    assert [r.name for r in rows] == ["Denial of Service"]


def test_unknown_threat_raises(kb):
    with pytest.raises(NoSuchThreat):
        map_threats(["Totally Unrelated Thing"], kb)
    with pytest.raises(ValueError):
        resolve_threats([], kb)


def test_clean_reply_variants():
    assert clean_reply("**Peripheral Interfaces**") == "Peripheral Interfaces"
    assert clean_reply("\n\nCategory: Memory Components.\nbecause ...") == "Memory Components"
    assert clean_reply("1. `SoC Integration Components`") == "SoC Integration Components"
    assert clean_reply("   \n") == ""


def test_resolve_classification_unresolvable(kb):
    with pytest.raises(ClassificationUnresolvable) as exc:
        resolve_classification("I think this is a toaster", kb)
    assert exc.value.exit_code == 4
    with pytest.raises(ClassificationUnresolvable):
        resolve_classification("", kb)


def test_classification_prompt_contents(dmi_ctx, kb):
    prompt = classification_prompt(dmi_ctx, kb)
    for name in kb.category_names:
        assert f"- {name}\n" in prompt
    assert dmi_ctx.source_text in prompt


def test_classify_uses_hash_keyed_fixture(tmp_path, dmi_ctx, kb):
    prompt = classification_prompt(dmi_ctx, kb)
    root = write_mock(tmp_path, "classify", {prompt_key(prompt): "Memory Components", "0001": "Peripheral Interfaces"})
    gw = mock_gateway(root)
    assert classify_design(dmi_ctx, gw, kb).name == "Memory Components"
    call = gw.transport.calls[0]
    assert call.stage == "classify" and call.index == 1
    assert call.seed == derive_seed(0, "classify")


CATEGORY_LIST = sorted(RAW_CATEGORIES)
THREAT_LIST = sorted(RAW_THREATS)


@given(st.sampled_from(CATEGORY_LIST), st.lists(st.sampled_from(THREAT_LIST), min_size=1, max_size=4))
def test_target_is_intersection_and_subsets(cat_name, threat_names):
    kb = load_knowledge_base()
    target = align(kb.lookup_category(cat_name), threat_names, kb)
    c_threat = set().union(*(RAW_THREATS[t] for t in threat_names))
    assert target.c_target == RAW_CATEGORIES[cat_name] & c_threat
    assert target.c_target <= target.c_struct and target.c_target <= target.c_threat
    assert target.c_threat == c_threat


@given(st.sampled_from(CATEGORY_LIST), st.permutations(THREAT_LIST))
def test_threat_order_does_not_matter(cat_name, order):
    kb = load_knowledge_base()
    cat = kb.lookup_category(cat_name)
    assert align(cat, list(order[:3]), kb).ordered == align(cat, sorted(order[:3]), kb).ordered


@given(st.frozensets(st.integers(1, 2000)), st.frozensets(st.integers(1, 2000)))
def test_intersect_commutes_with_sets(a, b):
    t = intersect(DesignCategory("x", tuple(sorted(a))), b)
    assert t.c_target == a & b
    assert t.ordered == sorted(a & b)
