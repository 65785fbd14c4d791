"""Multi-model container (MMC) data model, archive codec and validation.

Archive layout (entries stored in lexicographic path order)::

    MultiModel.xml              container + per-model metadata
    links/<link_model_id>.xml   one file per link model
    models/<model_id>.xml       structured (element-level) models
    models/<model_id>.bin       opaque payloads

Containers are immutable values; every operation here is a pure function.
"""
from __future__ import annotations

import enum
import io
import re
import zipfile
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional, Sequence

from .errors import MalformedArchive, MissingMetadata, SchemaError, ValidationFailed

MODEL_TYPES = ("BM", "OM", "PM", "CM", "CSM")
PHASES = ("Offer", "Contract", "Execution")
NATIVE_FORMAT = "application/x-mmc-model+xml"
METADATA_ENTRY = "MultiModel.xml"

_IDENT = re.compile(r"^[A-Za-z0-9_][A-Za-z0-9_.\-]*$")
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


class ProcessingStatus(enum.IntEnum):
    Draft = 0
    Released = 1
    Final = 2

    @classmethod
    def parse(cls, text: str) -> "ProcessingStatus":
        try:
            return cls[text]
        except KeyError:
            raise SchemaError(f"unknown processing status {text!r}") from None


# ---------------------------------------------------------------------------
# data model

BBox = tuple  # (x1, y1, z1, x2, y2, z2)
TimeSpan = tuple  # (start, end), both tz-aware datetimes
Endpoint = tuple  # (model_id, element_id)


@dataclass(frozen=True)
class Element:
    element_id: str
    lod_tag: float = 1.0
    properties: Mapping[str, str] = field(default_factory=dict)
    bbox: Optional[BBox] = None
    timespan: Optional[TimeSpan] = None

    def __post_init__(self):
        object.__setattr__(self, "properties", dict(self.properties))
        if self.bbox is not None:
            object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))
        if self.timespan is not None:
            object.__setattr__(self, "timespan", tuple(self.timespan))


@dataclass(frozen=True)
class ModelMetadata:
    model_id: str
    model_type: str
    lod: float
    processing_status: ProcessingStatus = ProcessingStatus.Draft
    format: str = NATIVE_FORMAT
    structured: bool = True


@dataclass(frozen=True)
class ElementaryModel:
    """One application model. Structured models carry elements; opaque ones bytes."""

    metadata: ModelMetadata
    elements: Sequence[Element] = ()
    opaque_payload: Optional[bytes] = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))

    @property
    def model_id(self) -> str:
        return self.metadata.model_id

    @property
    def structured(self) -> bool:
        return self.metadata.structured

    def element_ids(self) -> set:
        return {e.element_id for e in self.elements}


@dataclass(frozen=True)
class Link:
    link_id: str
    endpoints: Sequence[Endpoint]
    relation_tag: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "endpoints", tuple(tuple(ep) for ep in self.endpoints))


@dataclass(frozen=True)
class LinkModel:
    link_model_id: str
    links: Sequence[Link] = ()

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))


@dataclass(frozen=True)
class ContainerMetadata:
    project_id: str
    phase: str
    task: str
    created_at: datetime
    template_name: Optional[str] = None


@dataclass(frozen=True)
class MultiModelContainer:
    container_id: str
    metadata: ContainerMetadata
    models: Sequence[ElementaryModel] = ()
    link_models: Sequence[LinkModel] = ()

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "link_models", tuple(self.link_models))

    def model(self, model_id: str) -> ElementaryModel:
        for m in self.models:
            if m.model_id == model_id:
                return m
        raise KeyError(model_id)

    def model_metadata(self) -> list:
        return [m.metadata for m in self.models]

    def element_pairs(self) -> set:
        """All (model_id, element_id) pairs of structured models."""
        return {(m.model_id, e.element_id) for m in self.models for e in m.elements}


# ---------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class Violation:
    code: str
    path: str
    detail: str = ""

    def __str__(self):
        return f"{self.code} at {self.path}" + (f": {self.detail}" if self.detail else "")


def _aware(dt) -> bool:
    return isinstance(dt, datetime) and dt.tzinfo is not None and dt.utcoffset() is not None


def validate_container(container: MultiModelContainer) -> list:
    """Return every violated invariant as a :class:`Violation`; empty means valid."""
    out = []
    md = container.metadata
    if not _aware(md.created_at):
        out.append(Violation("NaiveTimestamp", "metadata.created_at"))
    if md.template_name and (not md.phase or not md.task):
        out.append(Violation("MissingPhaseOrTask", "metadata",
                             f"template {md.template_name!r} needs phase and task"))

    models = {}
    for m in container.models:
        mid = m.model_id
        path = f"models[{mid}]"
        if not _IDENT.match(mid or ""):
            out.append(Violation("InvalidIdentifier", path, f"model id {mid!r}"))
        if mid in models:
            out.append(Violation("DuplicateModelId", path))
        models[mid] = m
        out.extend(_validate_model(m, path))

    element_ids = {mid: m.element_ids() for mid, m in models.items() if m.structured}
    seen_lm = set()
    for lm in container.link_models:
        path = f"link_models[{lm.link_model_id}]"
        if not _IDENT.match(lm.link_model_id or ""):
            out.append(Violation("InvalidIdentifier", path,
                                 f"link model id {lm.link_model_id!r}"))
        if lm.link_model_id in seen_lm:
            out.append(Violation("DuplicateLinkModelId", path))
        seen_lm.add(lm.link_model_id)
        for link in lm.links:
            lpath = f"{path}.links[{link.link_id}]"
            if len(link.endpoints) < 2:
                out.append(Violation("TooFewEndpoints", lpath,
                                     f"{len(link.endpoints)} endpoint(s)"))
            if len(set(link.endpoints)) != len(link.endpoints):
                out.append(Violation("DuplicateEndpoint", lpath))
            for ep in link.endpoints:
                model = models.get(ep[0])
                if model is None:
                    out.append(Violation("DanglingEndpoint", lpath,
                                         f"({ep[0]}, {ep[1]}): no such model"))
                elif model.structured and ep[1] not in element_ids[ep[0]]:
                    out.append(Violation("DanglingEndpoint", lpath,
                                         f"({ep[0]}, {ep[1]}): no such element"))
    return out


def _validate_model(m: ElementaryModel, path: str) -> list:
    out = []
    meta = m.metadata
    if not 0 <= meta.lod <= 1:
        out.append(Violation("LodOutOfRange", path, f"lod {meta.lod}"))
    if meta.structured:
        if m.opaque_payload is not None:
            out.append(Violation("PayloadMismatch", path, "structured model carries opaque payload"))
    else:
        if m.elements or m.opaque_payload is None:
            out.append(Violation("PayloadMismatch", path, "opaque model needs payload and no elements"))
    ids = set()
    for e in m.elements:
        epath = f"{path}.elements[{e.element_id}]"
        if e.element_id in ids:
            out.append(Violation("DuplicateElementId", epath))
        ids.add(e.element_id)
        if not 0 <= e.lod_tag <= 1:
            out.append(Violation("ElementLodOutOfRange", epath, f"lod_tag {e.lod_tag}"))
        elif e.lod_tag > meta.lod:
            out.append(Violation("ElementLodExceedsModel", epath,
                                 f"lod_tag {e.lod_tag} > model lod {meta.lod}"))
        if e.bbox is not None:
            if len(e.bbox) != 6:
                out.append(Violation("InvalidBBox", epath, "needs 6 coordinates"))
            elif any(e.bbox[i] > e.bbox[i + 3] for i in range(3)):
                out.append(Violation("InvalidBBox", epath, "min corner exceeds max corner"))
        if e.timespan is not None:
            start, end = e.timespan
            if not (_aware(start) and _aware(end)):
                out.append(Violation("NaiveTimestamp", epath))
            elif start > end:
                out.append(Violation("InvalidTimeSpan", epath, "start after end"))
    return out


# ---------------------------------------------------------------------------
# scalar codecs

def fmt_float(value: float) -> str:
    return repr(float(value))


def parse_float(text: Optional[str], what: str) -> float:
    if text is None:
        raise SchemaError(f"missing {what}")
    try:
        return float(text)
    except ValueError:
        raise SchemaError(f"{what}: not a decimal: {text!r}") from None


def fmt_time(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_time(text: Optional[str], what: str = "timestamp") -> datetime:
    if text is None:
        raise SchemaError(f"missing {what}")
    try:
        dt = datetime.fromisoformat(text[:-1] + "+00:00" if text.endswith("Z") else text)
    except ValueError:
        raise SchemaError(f"{what}: not ISO-8601: {text!r}") from None
    if dt.tzinfo is None:
        raise SchemaError(f"{what}: timestamp lacks a UTC offset: {text!r}")
    return dt.astimezone(timezone.utc)


def _bool(text: Optional[str], what: str) -> bool:
    if text not in ("true", "false"):
        raise SchemaError(f"{what}: expected true/false, got {text!r}")
    return text == "true"


def _req(node: ET.Element, name: str) -> str:
    value = node.get(name)
    if value is None:
        raise SchemaError(f"<{node.tag}> lacks attribute {name!r}")
    return value


def xml_bytes(root: ET.Element) -> bytes:
    return ET.tostring(root, encoding="utf-8", xml_declaration=True)


def parse_xml(data: bytes, what: str) -> ET.Element:
    try:
        return ET.fromstring(data)
    except ET.ParseError as exc:
        raise SchemaError(f"{what}: {exc}") from None


# ---------------------------------------------------------------------------
# XML encoders / decoders

def model_to_xml(model: ElementaryModel) -> ET.Element:
    root = ET.Element("Model", id=model.model_id)
    for e in model.elements:
        node = ET.SubElement(root, "Element", id=e.element_id, lod=fmt_float(e.lod_tag))
        for k in sorted(e.properties):
            ET.SubElement(node, "Prop", k=k, v=e.properties[k])
        if e.bbox is not None:
            keys = ("x1", "y1", "z1", "x2", "y2", "z2")
            ET.SubElement(node, "BBox", {k: fmt_float(v) for k, v in zip(keys, e.bbox)})
        if e.timespan is not None:
            ET.SubElement(node, "TimeSpan", start=fmt_time(e.timespan[0]),
                          end=fmt_time(e.timespan[1]))
    return root


def elements_from_xml(root: ET.Element, model_id: str) -> list:
    if root.tag != "Model":
        raise SchemaError(f"model {model_id}: root must be <Model>, got <{root.tag}>")
    if root.get("id") != model_id:
        raise SchemaError(f"model {model_id}: payload declares id {root.get('id')!r}")
    elements = []
    for node in root:
        if node.tag != "Element":
            raise SchemaError(f"model {model_id}: unexpected <{node.tag}>")
        props, bbox, span = {}, None, None
        for child in node:
            if child.tag == "Prop":
                props[_req(child, "k")] = _req(child, "v")
            elif child.tag == "BBox":
                bbox = tuple(parse_float(child.get(k), f"BBox.{k}")
                             for k in ("x1", "y1", "z1", "x2", "y2", "z2"))
            elif child.tag == "TimeSpan":
                span = (parse_time(child.get("start"), "TimeSpan.start"),
                        parse_time(child.get("end"), "TimeSpan.end"))
            else:
                raise SchemaError(f"model {model_id}: unexpected <{child.tag}> in element")
        elements.append(Element(_req(node, "id"), parse_float(node.get("lod"), "Element.lod"),
                                props, bbox, span))
    return elements


def link_model_to_xml(lm: LinkModel) -> ET.Element:
    root = ET.Element("LinkModel", id=lm.link_model_id)
    for link in lm.links:
        attrs = {"id": link.link_id}
        if link.relation_tag is not None:
            attrs["relation"] = link.relation_tag
        node = ET.SubElement(root, "Link", attrs)
        for model_id, element_id in link.endpoints:
            ET.SubElement(node, "Ref", model=model_id, element=element_id)
    return root


def link_model_from_xml(root: ET.Element) -> LinkModel:
    if root.tag != "LinkModel":
        raise SchemaError(f"link model root must be <LinkModel>, got <{root.tag}>")
    links = []
    for node in root:
        if node.tag != "Link":
            raise SchemaError(f"unexpected <{node.tag}> in link model")
        refs = []
        for ref in node:
            if ref.tag != "Ref":
                raise SchemaError(f"unexpected <{ref.tag}> in link")
            refs.append((_req(ref, "model"), _req(ref, "element")))
        links.append(Link(_req(node, "id"), refs, node.get("relation")))
    return LinkModel(_req(root, "id"), links)


def model_metadata_to_xml(meta: ModelMetadata, tag: str = "Model") -> ET.Element:
    return ET.Element(tag, {
        "id": meta.model_id,
        "type": meta.model_type,
        "lod": fmt_float(meta.lod),
        "status": meta.processing_status.name,
        "format": meta.format,
        "structured": "true" if meta.structured else "false",
    })


def model_metadata_from_xml(node: ET.Element) -> ModelMetadata:
    return ModelMetadata(
        model_id=_req(node, "id"),
        model_type=_req(node, "type"),
        lod=parse_float(node.get("lod"), "Model.lod"),
        processing_status=ProcessingStatus.parse(_req(node, "status")),
        format=_req(node, "format"),
        structured=_bool(node.get("structured"), "Model.structured"),
    )


def _manifest_xml(c: MultiModelContainer) -> ET.Element:
    md = c.metadata
    attrs = {"id": c.container_id, "project": md.project_id, "phase": md.phase,
             "task": md.task, "created": fmt_time(md.created_at)}
    if md.template_name is not None:
        attrs["template"] = md.template_name
    root = ET.Element("MultiModel", attrs)
    for m in c.models:
        root.append(model_metadata_to_xml(m.metadata))
    for lm in c.link_models:
        ET.SubElement(root, "LinkModelRef", id=lm.link_model_id)
    return root


# ---------------------------------------------------------------------------
# archive codec

def model_entry_name(meta: ModelMetadata) -> str:
    return f"models/{meta.model_id}.{'xml' if meta.structured else 'bin'}"


def encode_model_payload(model: ElementaryModel) -> bytes:
    if model.structured:
        return xml_bytes(model_to_xml(model))
    return bytes(model.opaque_payload)


def decode_model_payload(meta: ModelMetadata, payload: bytes) -> ElementaryModel:
    if meta.structured:
        root = parse_xml(payload, f"model {meta.model_id}")
        return ElementaryModel(meta, elements_from_xml(root, meta.model_id))
    return ElementaryModel(meta, (), bytes(payload))


def serialize_container(container: MultiModelContainer) -> bytes:
    """Encode ``container`` as a deterministic ZIP archive.

    Raises :class:`ValidationFailed` when the container is invalid.
    """
    report = validate_container(container)
    if report:
        raise ValidationFailed(report)
    entries = {METADATA_ENTRY: xml_bytes(_manifest_xml(container))}
    for lm in container.link_models:
        entries[f"links/{lm.link_model_id}.xml"] = xml_bytes(link_model_to_xml(lm))
    for m in container.models:
        entries[model_entry_name(m.metadata)] = encode_model_payload(m)

    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.create_system = 3
            info.external_attr = 0o644 << 16
            zf.writestr(info, entries[name])
    return buf.getvalue()


def parse_container(archive: bytes) -> MultiModelContainer:
    """Decode an archive produced by :func:`serialize_container` and validate it."""
    try:
        zf = zipfile.ZipFile(io.BytesIO(archive))
        names = set(zf.namelist())
        entries = {n: zf.read(n) for n in names}
    except (zipfile.BadZipFile, zipfile.LargeZipFile, OSError, EOFError, ValueError) as exc:
        raise MalformedArchive(f"not a readable zip archive: {exc}") from None
    if METADATA_ENTRY not in entries:
        raise MissingMetadata(f"archive has no {METADATA_ENTRY}")

    root = parse_xml(entries[METADATA_ENTRY], METADATA_ENTRY)
    if root.tag != "MultiModel":
        raise SchemaError(f"{METADATA_ENTRY}: root must be <MultiModel>, got <{root.tag}>")
    metadata = ContainerMetadata(
        project_id=_req(root, "project"),
        phase=_req(root, "phase"),
        task=_req(root, "task"),
        created_at=parse_time(root.get("created"), "MultiModel.created"),
        template_name=root.get("template"),
    )
    used = {METADATA_ENTRY}
    models, link_models = [], []
    for node in root:
        if node.tag == "Model":
            meta = model_metadata_from_xml(node)
            name = model_entry_name(meta)
            if name not in entries:
                raise SchemaError(f"missing archive entry {name}")
            used.add(name)
            models.append(decode_model_payload(meta, entries[name]))
        elif node.tag == "LinkModelRef":
            lm_id = _req(node, "id")
            name = f"links/{lm_id}.xml"
            if name not in entries:
                raise SchemaError(f"missing archive entry {name}")
            used.add(name)
            lm = link_model_from_xml(parse_xml(entries[name], name))
            if lm.link_model_id != lm_id:
                raise SchemaError(f"{name} declares id {lm.link_model_id!r}")
            link_models.append(lm)
        else:
            raise SchemaError(f"{METADATA_ENTRY}: unexpected <{node.tag}>")
    stray = sorted(names - used)
    if stray:
        raise SchemaError(f"entries not referenced by {METADATA_ENTRY}: {', '.join(stray)}")

    container = MultiModelContainer(_req(root, "id"), metadata, models, link_models)
    report = validate_container(container)
    if report:
        raise ValidationFailed(report)
    return container


def archive_entries(archive: bytes) -> list:
    """Entry names of an archive, in stored order."""
    try:
        with zipfile.ZipFile(io.BytesIO(archive)) as zf:
            return zf.namelist()
    except zipfile.BadZipFile as exc:
        raise MalformedArchive(str(exc)) from None


def replace_models(container: MultiModelContainer, models: Iterable[ElementaryModel],
                   link_models: Iterable[LinkModel], **metadata_changes) -> MultiModelContainer:
    md = replace(container.metadata, **metadata_changes) if metadata_changes else container.metadata
    return MultiModelContainer(container.container_id, md, tuple(models), tuple(link_models))
