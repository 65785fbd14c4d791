import threading
from datetime import datetime, timezone

import pytest

from mmcvo.container import ModelMetadata, ProcessingStatus, serialize_container
from mmcvo.demo import EPOCH, building_model, demo_vo, five_model_container, schedule_model
from mmcvo.errors import DuplicateName, MalformedArchive, NotFound, SchemaError, StorageFailure
from mmcvo.filters import BUILTIN_TEMPLATES, derive_lod
from mmcvo.ontology import Actor
from mmcvo.store import RegistryStore, open_store


def test_templates(tmp_path):
    s = RegistryStore(tmp_path)
    s.register_template(BUILTIN_TEMPLATES["Tender"])
    assert s.get_template("Tender") == BUILTIN_TEMPLATES["Tender"]
    with pytest.raises(DuplicateName):
        s.register_template(BUILTIN_TEMPLATES["Tender"])
    assert s.lookup_template("Offer request").name == "Tender"
    assert s.lookup_template("Nothing") is None
    with pytest.raises(NotFound):
        s.get_template("Ghost")


def test_find_model_closest_fit(tmp_path):
    s = RegistryStore(tmp_path)
    full = building_model("BM-full")
    s.register_elementary(full)
    s.register_elementary(derive_lod(building_model("BM-half"), 0.5))
    s.register_elementary(derive_lod(building_model("BM-tiny"), 0.1))
    assert s.find_model("BM", 0.5).model_id == "BM-half"
    assert s.find_model("BM", 0.05).model_id == "BM-tiny"
    assert s.find_model("BM", 0.7).model_id == "BM-full"
    assert s.find_model("OM", 0.1) is None
    assert s.find_model("BM", 0.5, ProcessingStatus.Final) is None


def test_models_round_trip(tmp_path):
    s = RegistryStore(tmp_path)
    t = datetime(2013, 5, 2, 8, 30, tzinfo=timezone.utc)
    s.register_elementary(schedule_model(), uploader="carol", registered_at=t)
    entry = s.get_model_entry("PM-1")
    assert (entry.uploader, entry.registered_at) == ("carol", t)
    assert s.load_model("PM-1") == schedule_model()
    s.register_model(ModelMetadata("X/1", "BM", 0.3, structured=False, format="application/ifc"),
                     b"\x00ifc")
    assert s.model_payload("X/1") == b"\x00ifc"
    with pytest.raises(DuplicateName):
        s.register_elementary(schedule_model())
    with pytest.raises(SchemaError):
        s.register_model(ModelMetadata("Y", "BM", 0.5), b"not xml")


def test_durability_on_reopen(tmp_path):
    s = RegistryStore(tmp_path)
    s.register_container(five_model_container(), uploader="bob", registered_at=EPOCH)
    s.put_entities(demo_vo().actors.values())
    s.set_task_table({"Review": {"mmc.read"}}, {"mmc.read"})
    before = s.stored_index()

    again = open_store(tmp_path, create=False)
    assert again.stored_index() == before
    assert again.container_archive("tower") == serialize_container(five_model_container())
    assert again.get_entity("actors", "alice") == demo_vo().actors["alice"]
    assert again.task_table() == ({"Review": frozenset({"mmc.read"})}, frozenset({"mmc.read"}))
    assert [m.model_id for m in again.list_models()] == ["BM-1", "CM-1", "CSM-1", "OM-1", "PM-1"]


def test_index_consistent_with_records(store):
    assert store.stored_index() == store.rebuild_index()
    entries = store.index_entries()
    kinds = {k for k, _, _ in entries}
    assert {"template", "model", "container", "actors", "roles", "tasks"} <= kinds
    for _, _, rel in entries:
        assert (store.root / rel).is_file()


def test_odd_identifiers_are_file_safe(tmp_path):
    s = RegistryStore(tmp_path)
    s.put_entity(Actor("../evil name", {"R"}))
    assert s.get_entity("actors", "../evil name").actor_id == "../evil name"
    assert not (tmp_path / "evil name.xml").exists()


def test_entity_replace_and_unique(tmp_path):
    s = RegistryStore(tmp_path)
    s.put_entity(Actor("a", {"R"}))
    s.put_entity(Actor("a", {"S"}))
    assert s.get_entity("actors", "a").potential_roles == frozenset({"S"})
    with pytest.raises(DuplicateName):
        s.put_entity(Actor("a", {"T"}), replace=False)


def test_missing_root(tmp_path):
    with pytest.raises(StorageFailure):
        open_store(tmp_path / "absent", create=False)


def test_corrupt_container_record(store):
    (store.root / "containers" / "tower.mmc").write_bytes(b"junk")
    with pytest.raises(MalformedArchive):
        store.load_container("tower")


def test_concurrent_writers(tmp_path):
    s = RegistryStore(tmp_path)

    def work(k):
        for i in range(10):
            RegistryStore(tmp_path).put_entity(Actor(f"a{k}-{i}", {"R"}))

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(s.list_entities("actors")) == 40
    assert s.stored_index() == s.rebuild_index()
