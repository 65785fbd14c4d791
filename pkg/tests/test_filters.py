import random
import warnings
from dataclasses import replace
from datetime import datetime, timezone

import pytest
from hypothesis import given, settings, strategies as st

from mmcvo.container import (
    ElementaryModel,
    LinkModel,
    Link,
    ModelMetadata,
    MultiModelContainer,
    ProcessingStatus,
    validate_container,
)
from mmcvo.demo import five_model_container, schedule_model
from mmcvo.errors import (
    CannotRefine,
    ExpressionError,
    InsufficientLOD,
    InsufficientStatus,
    MissingModel,
    OpaqueModel,
    OpaqueOnlyContainer,
)
from mmcvo.filters import (
    BUILTIN_TEMPLATES,
    EVERYTHING,
    And,
    BBoxIntersects,
    ClosureMode,
    LodAtMost,
    MultiModelTemplate,
    Not,
    Or,
    PropertyEquals,
    PropertyIn,
    TimeOverlaps,
    apply_cutout,
    apply_model_lod,
    apply_template,
    cutout_selection,
    derive_lod,
    dump_template,
    load_template,
    match_template,
    parse_expression,
    reduce_link_model,
)

from generators import random_container, random_predicate
from oracles import closure_fixpoint, links_brute_force

TENDER = BUILTIN_TEMPLATES["Tender"]


def with_lod(container, model_type, lod):
    models = []
    for m in container.models:
        if m.metadata.model_type == model_type:
            m = ElementaryModel(replace(m.metadata, lod=lod), [e for e in m.elements if e.lod_tag <= lod])
        models.append(m)
    return MultiModelContainer(container.container_id, container.metadata, models, [])


# -- match_template -------------------------------------------------------------

def test_contract_template_matches_full_container():
    assert match_template(five_model_container(), BUILTIN_TEMPLATES["Contract"])


def test_tender_rejects_coarse_building_model():
    assert not match_template(with_lod(five_model_container(), "BM", 0.2), TENDER)


def test_vacuous_template_matches_empty():
    t = MultiModelTemplate("zero", "Offer", "x", {"BM": 0.0, "CM": 0.0})
    assert match_template([], t)


def test_match_uses_status():
    t = replace(TENDER, min_status=ProcessingStatus.Final)
    assert not match_template(five_model_container(), t)


# -- apply_template ---------------------------------------------------------------

def test_tender_view_keeps_bm_om_pm_and_drops_cm_csm_links():
    src = five_model_container()
    view = apply_template(src, TENDER)
    assert [m.metadata.model_type for m in view.models] == ["BM", "OM", "PM"]
    remaining = [ep[0] for lm in view.link_models for link in lm.links for ep in link.endpoints]
    assert remaining and not {"CM-1", "CSM-1"} & set(remaining)
    retained = view.element_pairs()
    assert list(view.link_models[0].links) == links_brute_force(
        src.link_models[0], retained, {m.model_id for m in view.models})
    assert view.metadata.template_name == "Tender"
    assert validate_container(view) == []


def test_tender_insufficient_lod():
    with pytest.raises(InsufficientLOD) as info:
        apply_template(with_lod(five_model_container(), "BM", 0.2), TENDER)
    assert (info.value.model_type, info.value.have, info.value.need) == ("BM", 0.2, 0.5)


def test_all_zero_template_empties_container():
    t = MultiModelTemplate("none", "Offer", "x", dict.fromkeys(("BM", "OM", "PM", "CM", "CSM"), 0.0))
    out = apply_template(five_model_container(), t)
    assert out.models == ()
    assert [lm.links for lm in out.link_models] == [()]


def test_missing_model_type():
    c = MultiModelContainer("c", five_model_container().metadata, five_model_container().models[:2])
    with pytest.raises(MissingModel):
        apply_template(c, TENDER)


def test_insufficient_status():
    with pytest.raises(InsufficientStatus):
        apply_template(five_model_container(), replace(TENDER, min_status=ProcessingStatus.Final))


def test_downscale_is_opt_in():
    kept = apply_template(five_model_container(), TENDER)
    assert {m.metadata.lod for m in kept.models} == {1.0}
    down = apply_template(five_model_container(), TENDER, downscale=True)
    assert {m.metadata.model_type: m.metadata.lod for m in down.models} == {"BM": 0.5, "OM": 0.1, "PM": 0.1}
    assert match_template(down, TENDER)
    assert validate_container(down) == []


@pytest.mark.parametrize("name", sorted(BUILTIN_TEMPLATES))
def test_template_idempotent_and_matching(name):
    t = BUILTIN_TEMPLATES[name]
    once = apply_template(five_model_container(), t)
    assert apply_template(once, t) == once
    assert match_template(once, t)


def test_template_xml_round_trip():
    t = replace(TENDER, min_status=ProcessingStatus.Released)
    assert load_template(dump_template(t)) == t
    assert b'<Require type="BM" minLod="0.5" />' in dump_template(t)


# -- reduce_link_model --------------------------------------------------------------

def test_reduce_empty():
    assert reduce_link_model(LinkModel("L"), set(), set()) == LinkModel("L")


def test_reduce_drops_link_into_removed_model():
    lm = LinkModel("L", [Link("k", [("BM", "w"), ("CSM", "s")]), Link("j", [("BM", "w"), ("PM", "a")])])
    retained = {("BM", "w"), ("CSM", "s"), ("PM", "a")}
    out = reduce_link_model(lm, retained, {"BM", "PM"})
    assert [link.link_id for link in out.links] == ["j"]


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reduce_matches_brute_force(seed):
    rng = random.Random(seed)
    c = random_container(rng)
    pairs = sorted({ep for lm in c.link_models for link in lm.links for ep in link.endpoints})
    retained = set(rng.sample(pairs, rng.randint(0, len(pairs))))
    models = {m.model_id for m in c.models}
    retained_models = set(rng.sample(sorted(models), rng.randint(0, len(models))))
    for lm in c.link_models:
        assert list(reduce_link_model(lm, retained, retained_models).links) == \
            links_brute_force(lm, retained, retained_models)


# -- derive_lod -----------------------------------------------------------------------

def test_derive_identity():
    m = schedule_model()
    assert derive_lod(m, m.metadata.lod).elements == m.elements


@pytest.mark.parametrize("target,count", [(0.1, 3), (0.2, 8), (1.0, 48), (0.0, 0)])
def test_schedule_ladder_counts(target, count):
    m = schedule_model()
    expected = sum(1 for e in m.elements if e.lod_tag <= target)
    assert expected == count
    out = derive_lod(m, target)
    assert len(out.elements) == count
    assert out.metadata.lod == target


def test_derive_errors():
    with pytest.raises(CannotRefine):
        derive_lod(derive_lod(schedule_model(), 0.2), 0.5)
    opaque = ElementaryModel(ModelMetadata("X", "BM", 1.0, structured=False), (), b"")
    with pytest.raises(OpaqueModel):
        derive_lod(opaque, 0.5)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 1), st.floats(0, 1))
def test_derive_monotone(seed, a, b):
    rng = random.Random(seed)
    models = [m for m in random_container(rng, max_elements=12).models if m.structured]
    l1, l2 = sorted((a, b))
    for m in models:
        if l2 > m.metadata.lod:
            continue
        small = {e.element_id for e in derive_lod(m, l1).elements}
        large = {e.element_id for e in derive_lod(m, l2).elements}
        assert small <= large


def test_apply_model_lod_drops_links():
    out = apply_model_lod(five_model_container(), "PM-1", 0.1)
    assert len(out.model("PM-1").elements) == 3
    assert validate_container(out) == []
    with pytest.raises(MissingModel):
        apply_model_lod(five_model_container(), "nope", 0.1)


# -- predicates and cut-outs ------------------------------------------------------------

def test_constant_true_is_identity():
    c = five_model_container()
    assert apply_cutout(c, Not(Or(()))) == c
    assert apply_cutout(c, EVERYTHING, ClosureMode.TRANSITIVE_CLOSURE) == c


def test_property_equals_count_matches_enumeration():
    c = five_model_container()
    out = apply_cutout(c, PropertyEquals("floor", "1"))
    brute = sum(1 for m in c.models for e in m.elements if e.properties.get("floor") == "1")
    assert sum(len(m.elements) for m in out.models) == brute
    assert validate_container(out) == []


def test_time_overlap_transitive_matches_naive_fixpoint():
    c = five_model_container()
    start = datetime(2012, 3, 10, tzinfo=timezone.utc)
    pred = TimeOverlaps(start, datetime(2012, 3, 12, tzinfo=timezone.utc))
    seed = {(m.model_id, e.element_id) for m in c.models for e in m.elements if pred(e)}
    assert seed
    got = cutout_selection(c, pred, ClosureMode.TRANSITIVE_CLOSURE)
    assert got == closure_fixpoint(c, seed)
    once = cutout_selection(c, pred, ClosureMode.LINKED_ONCE)
    assert once == closure_fixpoint(c, seed, once=True)
    assert seed <= once <= got


def test_bbox_closed_intervals_and_missing_fields():
    from mmcvo.container import Element
    e = Element("e", 1.0, bbox=(0, 0, 0, 1, 1, 1))
    assert BBoxIntersects((1, 1, 1, 2, 2, 2))(e)
    assert not BBoxIntersects((1.01, 0, 0, 2, 2, 2))(e)
    bare = Element("b")
    assert not BBoxIntersects((-9, -9, -9, 9, 9, 9))(bare)
    t = datetime(2012, 1, 1, tzinfo=timezone.utc)
    assert not TimeOverlaps(t, t)(bare)


def test_opaque_models_pass_through_with_warning():
    opaque = ElementaryModel(ModelMetadata("X", "BM", 1.0, structured=False), (), b"abc")
    c = MultiModelContainer("c", five_model_container().metadata, [opaque])
    with pytest.warns(OpaqueOnlyContainer):
        out = apply_cutout(c, PropertyEquals("floor", "1"))
    assert out == c


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cutout_properties(seed):
    rng = random.Random(seed)
    c = random_container(rng)
    p = random_predicate(rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OpaqueOnlyContainer)
        none = cutout_selection(c, p, ClosureMode.NONE)
        once = cutout_selection(c, p, ClosureMode.LINKED_ONCE)
        full = cutout_selection(c, p, ClosureMode.TRANSITIVE_CLOSURE)
        assert none <= once <= full
        assert full == closure_fixpoint(c, none)
        first = apply_cutout(c, p)
        assert apply_cutout(first, p) == first
        for mode in ClosureMode:
            assert validate_container(apply_cutout(c, p, mode)) == []


# -- expression language ---------------------------------------------------------------

def test_parse_expression_forms():
    t1, t2 = "2012-03-01T00:00:00Z", "2012-03-05T00:00:00Z"
    p = parse_expression(f"floor=1 & !(lod<=0.2 | kind=\"a b\") & bbox(0,0,0,1,1,1) | time({t1},{t2})")
    assert p == Or([And([PropertyEquals("floor", "1"),
                         Not(Or([LodAtMost(0.2), PropertyEquals("kind", "a b")])),
                         BBoxIntersects((0, 0, 0, 1, 1, 1))]),
                    TimeOverlaps(datetime(2012, 3, 1, tzinfo=timezone.utc),
                                 datetime(2012, 3, 5, tzinfo=timezone.utc))])


def test_parse_property_in_free_keys():
    assert parse_expression("lod=x") == PropertyEquals("lod", "x")
    assert parse_expression("bbox=x") == PropertyEquals("bbox", "x")
    assert PropertyIn("k", ["a"]) == PropertyIn("k", {"a"})


@pytest.mark.parametrize("bad", ["", "floor", "floor=1 &", "bbox(1,2)", "time(x,y)", "(a=1", "a=1)", "lod<=x"])
def test_parse_expression_errors(bad):
    with pytest.raises(ExpressionError):
        parse_expression(bad)
