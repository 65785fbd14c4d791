"""File-backed VO platform registry.

Layout under the store root::

    index.xml                       one <Entry> per record file below
    templates/<name>.xml
    models/<id>.xml                 registry record (metadata, uploader, time)
    models/<id>.payload             model payload (structured XML or opaque bytes)
    containers/<id>.mmc             registered container archives
    vo/{actors,roles,permissions,restrictions,resources}/<id>.xml
    vo/tasks.xml                    task -> needed permissions table

Writers serialize through an exclusive file lock and replace files
atomically, so readers only ever see committed records.
"""
from __future__ import annotations

import os
import tempfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional
from urllib.parse import quote, unquote

from filelock import FileLock

from .container import (
    ElementaryModel,
    ModelMetadata,
    MultiModelContainer,
    ProcessingStatus,
    decode_model_payload,
    encode_model_payload,
    fmt_time,
    model_metadata_from_xml,
    model_metadata_to_xml,
    parse_container,
    parse_time,
    parse_xml,
    serialize_container,
    xml_bytes,
    _req,
)
from .errors import DuplicateName, MMCError, NotFound, StorageFailure
from .filters import MultiModelTemplate, dump_template, load_template
from .ontology import (
    Actor,
    Permission,
    Resource,
    Restriction,
    Role,
    VOModel,
    dump_entity,
    entity_id,
    load_entity,
)

VO_KINDS = {
    Actor: "actors",
    Role: "roles",
    Permission: "permissions",
    Restriction: "restrictions",
    Resource: "resources",
}


@dataclass(frozen=True)
class ModelRegistryEntry:
    model_id: str
    metadata: ModelMetadata
    payload_location: str
    registered_at: datetime
    uploader: str


def _fname(ident: str) -> str:
    return quote(ident, safe="") or "%00"


class RegistryStore:
    def __init__(self, root, create: bool = True):
        self.root = Path(root)
        if create:
            for sub in ("templates", "models", "containers", *(f"vo/{k}" for k in VO_KINDS.values())):
                (self.root / sub).mkdir(parents=True, exist_ok=True)
        elif not self.root.is_dir():
            raise StorageFailure(f"store root {self.root} does not exist")
        self._lock = FileLock(str(self.root / ".lock"))
        if create and not (self.root / "index.xml").exists():
            with self._lock:
                self._write_index()

    # -- low level ---------------------------------------------------------

    def _atomic_write(self, rel: str, data: bytes) -> None:
        path = self.root / rel
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageFailure(f"cannot write {rel}: {exc}") from exc

    def _read(self, rel: str) -> bytes:
        try:
            return (self.root / rel).read_bytes()
        except FileNotFoundError:
            raise NotFound(rel) from None
        except OSError as exc:
            raise StorageFailure(f"cannot read {rel}: {exc}") from exc

    def _exists(self, rel: str) -> bool:
        return (self.root / rel).exists()

    def _commit(self, rel: str, data: bytes, *, unique: bool, what: str) -> None:
        with self._lock:
            if unique and self._exists(rel):
                raise DuplicateName(f"{what} already registered")
            self._atomic_write(rel, data)
            self._write_index()

    def _ids(self, sub: str, suffix: str = ".xml") -> list:
        d = self.root / sub
        if not d.is_dir():
            return []
        return sorted(unquote(p.name[: -len(suffix)]) for p in d.iterdir()
                      if p.name.endswith(suffix) and not p.name.startswith("."))

    # -- index ---------------------------------------------------------------

    def rebuild_index(self) -> bytes:
        """Index document derived purely from the record files on disk."""
        root = ET.Element("Index")
        for name in self._ids("templates"):
            ET.SubElement(root, "Entry", kind="template", id=name, file=f"templates/{_fname(name)}.xml")
        for mid in self._ids("models"):
            ET.SubElement(root, "Entry", kind="model", id=mid, file=f"models/{_fname(mid)}.xml")
        for cid in self._ids("containers", ".mmc"):
            ET.SubElement(root, "Entry", kind="container", id=cid, file=f"containers/{_fname(cid)}.mmc")
        for kind in sorted(VO_KINDS.values()):
            for ident in self._ids(f"vo/{kind}"):
                ET.SubElement(root, "Entry", kind=kind, id=ident, file=f"vo/{kind}/{_fname(ident)}.xml")
        if self._exists("vo/tasks.xml"):
            ET.SubElement(root, "Entry", kind="tasks", id="tasks", file="vo/tasks.xml")
        return xml_bytes(root)

    def _write_index(self) -> None:
        self._atomic_write("index.xml", self.rebuild_index())

    def stored_index(self) -> bytes:
        return self._read("index.xml")

    def index_entries(self) -> list:
        root = parse_xml(self.stored_index(), "index.xml")
        return [(e.get("kind"), e.get("id"), e.get("file")) for e in root]

    # -- templates -----------------------------------------------------------

    def register_template(self, template: MultiModelTemplate) -> str:
        self._commit(f"templates/{_fname(template.name)}.xml", dump_template(template),
                     unique=True, what=f"template {template.name!r}")
        return template.name

    def get_template(self, name: str) -> MultiModelTemplate:
        return load_template(self._read(f"templates/{_fname(name)}.xml"))

    def list_templates(self) -> list:
        return [self.get_template(n) for n in self._ids("templates")]

    def lookup_template(self, task: str) -> Optional[MultiModelTemplate]:
        """Template registered for ``task``; first by name when several match."""
        for t in self.list_templates():
            if t.task == task:
                return t
        return None

    # -- models --------------------------------------------------------------

    def register_model(self, metadata: ModelMetadata, payload: bytes, uploader: str = "",
                       registered_at: Optional[datetime] = None) -> str:
        mid = metadata.model_id
        if not 0 <= metadata.lod <= 1:
            raise ValueError(f"model {mid}: lod {metadata.lod} outside [0, 1]")
        # decoding up front rejects payloads that would not load back
        decode_model_payload(metadata, payload)
        when = registered_at or datetime.now(timezone.utc)
        record = model_metadata_to_xml(metadata, "ModelEntry")
        record.set("payload", f"models/{_fname(mid)}.payload")
        record.set("registered", fmt_time(when))
        record.set("uploader", uploader)
        with self._lock:
            rel = f"models/{_fname(mid)}.xml"
            if self._exists(rel):
                raise DuplicateName(f"model {mid!r} already registered")
            self._atomic_write(f"models/{_fname(mid)}.payload", payload)
            self._atomic_write(rel, xml_bytes(record))
            self._write_index()
        return mid

    def register_elementary(self, model: ElementaryModel, uploader: str = "",
                            registered_at: Optional[datetime] = None) -> str:
        return self.register_model(model.metadata, encode_model_payload(model), uploader, registered_at)

    def get_model_entry(self, model_id: str) -> ModelRegistryEntry:
        node = parse_xml(self._read(f"models/{_fname(model_id)}.xml"), "model record")
        return ModelRegistryEntry(
            model_id=_req(node, "id"),
            metadata=model_metadata_from_xml(node),
            payload_location=_req(node, "payload"),
            registered_at=parse_time(node.get("registered")),
            uploader=node.get("uploader", ""),
        )

    def model_payload(self, model_id: str) -> bytes:
        return self._read(self.get_model_entry(model_id).payload_location)

    def load_model(self, model_id: str) -> ElementaryModel:
        entry = self.get_model_entry(model_id)
        return decode_model_payload(entry.metadata, self._read(entry.payload_location))

    def list_models(self) -> list:
        return [self.get_model_entry(m) for m in self._ids("models")]

    def find_model(self, model_type: str, min_lod: float,
                   min_status: Optional[ProcessingStatus] = None) -> Optional[ModelRegistryEntry]:
        """Closest fit: the smallest registered lod that still meets ``min_lod``."""
        candidates = [
            e for e in self.list_models()
            if e.metadata.model_type == model_type and e.metadata.lod >= min_lod
            and (min_status is None or e.metadata.processing_status >= min_status)
        ]
        if not candidates:
            return None
        return min(candidates, key=lambda e: (e.metadata.lod, e.model_id))

    # -- containers ----------------------------------------------------------

    def register_container(self, container: MultiModelContainer, uploader: str = "",
                           registered_at: Optional[datetime] = None) -> str:
        """Store a container archive and register each of its models not yet known."""
        archive = serialize_container(container)
        self._commit(f"containers/{_fname(container.container_id)}.mmc", archive,
                     unique=True, what=f"container {container.container_id!r}")
        for m in container.models:
            if not self._exists(f"models/{_fname(m.model_id)}.xml"):
                self.register_elementary(m, uploader, registered_at or container.metadata.created_at)
        return container.container_id

    def has_container(self, container_id: str) -> bool:
        return self._exists(f"containers/{_fname(container_id)}.mmc")

    def container_archive(self, container_id: str) -> bytes:
        return self._read(f"containers/{_fname(container_id)}.mmc")

    def load_container(self, container_id: str) -> MultiModelContainer:
        return parse_container(self.container_archive(container_id))

    def list_containers(self) -> list:
        return self._ids("containers", ".mmc")

    # -- VO entities ---------------------------------------------------------

    def put_entity(self, entity, replace: bool = True) -> str:
        kind = VO_KINDS.get(type(entity))
        if kind is None:
            raise TypeError(f"not a VO entity: {entity!r}")
        ident = entity_id(entity)
        self._commit(f"vo/{kind}/{_fname(ident)}.xml", dump_entity(entity),
                     unique=not replace, what=f"{kind[:-1]} {ident!r}")
        return ident

    def put_entities(self, entities: Iterable) -> None:
        for e in entities:
            self.put_entity(e)

    def get_entity(self, kind: str, ident: str):
        return load_entity(self._read(f"vo/{kind}/{_fname(ident)}.xml"))

    def list_entities(self, kind: str) -> list:
        return [self.get_entity(kind, i) for i in self._ids(f"vo/{kind}")]

    def vo(self) -> VOModel:
        """Snapshot of the whole VO model."""
        model = VOModel()
        for kind in VO_KINDS.values():
            model.add(*self.list_entities(kind))
        return model

    # -- task table ----------------------------------------------------------

    def set_task_table(self, needs: dict, default: Iterable[str] = ()) -> None:
        root = ET.Element("Tasks")
        for p in sorted(default):
            ET.SubElement(root, "Default", permission=p)
        for task in sorted(needs):
            node = ET.SubElement(root, "Task", name=task)
            for p in sorted(needs[task]):
                ET.SubElement(node, "Needs", permission=p)
        self._commit("vo/tasks.xml", xml_bytes(root), unique=False, what="task table")

    def task_table(self) -> Optional[tuple]:
        """``(needs_by_task, default_needs)`` or None when no table is stored."""
        try:
            root = parse_xml(self._read("vo/tasks.xml"), "vo/tasks.xml")
        except NotFound:
            return None
        default = frozenset(_req(c, "permission") for c in root if c.tag == "Default")
        needs = {_req(c, "name"): frozenset(_req(n, "permission") for n in c)
                 for c in root if c.tag == "Task"}
        return needs, default


def open_store(root, create: bool = True) -> RegistryStore:
    try:
        return RegistryStore(root, create=create)
    except MMCError:
        raise
    except OSError as exc:
        raise StorageFailure(str(exc)) from exc
