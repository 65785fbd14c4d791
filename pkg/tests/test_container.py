import io
import random
import zipfile
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings, strategies as st

from mmcvo.container import (
    ContainerMetadata,
    Element,
    ElementaryModel,
    Link,
    LinkModel,
    ModelMetadata,
    MultiModelContainer,
    archive_entries,
    parse_container,
    serialize_container,
    validate_container,
)
from mmcvo.errors import MalformedArchive, MissingMetadata, SchemaError, ValidationFailed

from generators import random_container

T = datetime(2012, 3, 1, tzinfo=timezone.utc)


def meta(**kw):
    return ContainerMetadata(kw.pop("project", "P"), kw.pop("phase", "Offer"),
                             kw.pop("task", "Offer request"), kw.pop("created", T), **kw)


def two_model_container():
    bm = ElementaryModel(ModelMetadata("BM", "BM", 1.0),
                         [Element("w1", 0.5, {"floor": "1"}, (0, 0, 0, 1, 1, 1)), Element("w2")])
    pm = ElementaryModel(ModelMetadata("PM", "PM", 1.0),
                         [Element("a1", 0.1, timespan=(T, T + timedelta(days=2)))])
    links = LinkModel("L1", [Link("k1", [("BM", "w1"), ("PM", "a1")], "builds")])
    return MultiModelContainer("mmc", meta(), [bm, pm], [links])


def rewrite(archive, name, transform):
    src = zipfile.ZipFile(io.BytesIO(archive))
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as dst:
        for n in src.namelist():
            data = src.read(n)
            if n == name:
                data = transform(data)
                if data is None:
                    continue
            dst.writestr(n, data)
    return buf.getvalue()


def test_empty_container_has_only_manifest():
    c = MultiModelContainer("empty", meta())
    assert archive_entries(serialize_container(c)) == ["MultiModel.xml"]


def test_two_models_one_link_model_layout():
    names = archive_entries(serialize_container(two_model_container()))
    assert names == ["MultiModel.xml", "links/L1.xml", "models/BM.xml", "models/PM.xml"]


def test_opaque_model_stored_as_bin():
    c = MultiModelContainer("c", meta(), [ElementaryModel(
        ModelMetadata("IFC", "BM", 1.0, format="model/ifc", structured=False), (), b"\x00ISO-10303")])
    archive = serialize_container(c)
    assert "models/IFC.bin" in archive_entries(archive)
    assert parse_container(archive) == c


def test_round_trip_and_byte_identity():
    c = two_model_container()
    archive = serialize_container(c)
    back = parse_container(archive)
    assert back == c
    assert serialize_container(back) == archive


def test_manifest_matches_documented_schema():
    archive = serialize_container(two_model_container())
    import xml.etree.ElementTree as ET
    root = ET.fromstring(zipfile.ZipFile(io.BytesIO(archive)).read("MultiModel.xml"))
    assert root.tag == "MultiModel"
    assert {"id", "phase", "task", "created"} <= set(root.attrib)
    assert root.get("created") == "2012-03-01T00:00:00Z"
    assert [c.tag for c in root] == ["Model", "Model", "LinkModelRef"]
    assert set(root[0].attrib) == {"id", "type", "lod", "status", "format", "structured"}


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_random(seed):
    c = random_container(random.Random(seed))
    assert validate_container(c) == []
    archive = serialize_container(c)
    assert parse_container(archive) == c
    assert serialize_container(parse_container(archive)) == archive


def test_equal_containers_equal_bytes_regardless_of_dict_order():
    a = Element("e", 1.0, {"a": "1", "b": "2"})
    b = Element("e", 1.0, {"b": "2", "a": "1"})
    ca = MultiModelContainer("c", meta(), [ElementaryModel(ModelMetadata("M", "BM", 1.0), [a])])
    cb = MultiModelContainer("c", meta(), [ElementaryModel(ModelMetadata("M", "BM", 1.0), [b])])
    assert ca == cb
    assert serialize_container(ca) == serialize_container(cb)


def test_missing_manifest():
    archive = rewrite(serialize_container(two_model_container()), "MultiModel.xml", lambda d: None)
    with pytest.raises(MissingMetadata):
        parse_container(archive)


def test_not_a_zip():
    with pytest.raises(MalformedArchive):
        parse_container(b"PK\x03\x04 definitely not")


def test_bad_xml_is_schema_error():
    archive = rewrite(serialize_container(two_model_container()), "models/BM.xml", lambda d: b"<Model")
    with pytest.raises(SchemaError):
        parse_container(archive)


def test_missing_model_entry_is_schema_error():
    archive = rewrite(serialize_container(two_model_container()), "models/PM.xml", lambda d: None)
    with pytest.raises(SchemaError):
        parse_container(archive)


def test_hand_edited_dangling_link_reports_reference():
    archive = rewrite(serialize_container(two_model_container()), "links/L1.xml",
                      lambda d: d.replace(b'model="PM"', b'model="mX"'))
    with pytest.raises(ValidationFailed) as info:
        parse_container(archive)
    codes = [v.code for v in info.value.violations]
    assert codes == ["DanglingEndpoint"]
    assert "mX" in str(info.value)


def test_validate_empty():
    assert validate_container(MultiModelContainer("e", meta())) == []


def test_validate_dangling_endpoint():
    c = two_model_container()
    bad = MultiModelContainer(c.container_id, c.metadata, c.models,
                              [LinkModel("L1", [Link("k", [("mX", "e1"), ("BM", "w1")])])])
    report = validate_container(bad)
    assert [v.code for v in report] == ["DanglingEndpoint"]
    assert "mX" in report[0].detail


def test_validate_lod_out_of_range():
    c = MultiModelContainer("c", meta(), [ElementaryModel(ModelMetadata("M", "BM", 1.2))])
    assert [v.code for v in validate_container(c)] == ["LodOutOfRange"]


def test_serialize_rejects_invalid():
    c = MultiModelContainer("c", meta(), [ElementaryModel(ModelMetadata("M", "BM", 1.2))])
    with pytest.raises(ValidationFailed):
        serialize_container(c)


M = ModelMetadata("M", "BM", 0.5)


@pytest.mark.parametrize("container,code", [
    (MultiModelContainer("c", meta(), [ElementaryModel(M), ElementaryModel(M)]), "DuplicateModelId"),
    (MultiModelContainer("c", meta(), [], [LinkModel("L"), LinkModel("L")]), "DuplicateLinkModelId"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", 0.2), Element("e", 0.2)])]),
     "DuplicateElementId"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", 0.7)])]), "ElementLodExceedsModel"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", -0.1)])]), "ElementLodOutOfRange"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", 0.1, timespan=(T, T - timedelta(1)))])]),
     "InvalidTimeSpan"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", 0.1, bbox=(1, 0, 0, 0, 1, 1))])]),
     "InvalidBBox"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, (), b"x")]), "PayloadMismatch"),
    (MultiModelContainer("c", meta(), [ElementaryModel(ModelMetadata("M", "BM", 0.5, structured=False))]),
     "PayloadMismatch"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", 0.1)])],
                         [LinkModel("L", [Link("k", [("M", "e")])])]), "TooFewEndpoints"),
    (MultiModelContainer("c", meta(), [ElementaryModel(M, [Element("e", 0.1)])],
                         [LinkModel("L", [Link("k", [("M", "e"), ("M", "e")])])]), "DuplicateEndpoint"),
    (MultiModelContainer("c", meta(task="", template_name="Tender")), "MissingPhaseOrTask"),
    (MultiModelContainer("c", meta(created=datetime(2012, 1, 1))), "NaiveTimestamp"),
    (MultiModelContainer("c", meta(), [ElementaryModel(ModelMetadata("../x", "BM", 0.5))]), "InvalidIdentifier"),
])
def test_each_invariant_is_reported(container, code):
    assert code in [v.code for v in validate_container(container)]


def test_opaque_endpoint_only_needs_model():
    opaque = ElementaryModel(ModelMetadata("X", "BM", 1.0, structured=False), (), b"..")
    c = two_model_container()
    c2 = MultiModelContainer("c", meta(), [*c.models, opaque],
                             [LinkModel("L", [Link("k", [("X", "anything"), ("BM", "w1")])])])
    assert validate_container(c2) == []


def test_timestamps_with_offset_normalise_to_utc():
    cet = timezone(timedelta(hours=1))
    c = MultiModelContainer("c", meta(created=datetime(2012, 3, 1, 1, tzinfo=cet)))
    back = parse_container(serialize_container(c))
    assert back == c
    assert back.metadata.created_at.utcoffset() == timedelta(0)
