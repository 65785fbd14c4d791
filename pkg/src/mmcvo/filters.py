"""Multi-model views (templates) and cut-outs (element predicates).

Every filter keeps the link models consistent: a link survives only when all
of its endpoints survive, so outputs never carry dangling references.
"""
from __future__ import annotations

import enum
import re
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Iterable, Mapping, Optional, Sequence, Union

from .container import (
    MODEL_TYPES,
    Element,
    ElementaryModel,
    LinkModel,
    ModelMetadata,
    MultiModelContainer,
    ProcessingStatus,
    fmt_float,
    parse_float,
    parse_time,
    parse_xml,
    xml_bytes,
    _req,
)
from .errors import (
    CannotRefine,
    ExpressionError,
    InsufficientLOD,
    InsufficientStatus,
    MissingModel,
    OpaqueModel,
    OpaqueOnlyContainer,
    SchemaError,
)


# ---------------------------------------------------------------------------
# templates

@dataclass(frozen=True)
class MultiModelTemplate:
    name: str
    phase: str
    task: str
    requirements: Mapping[str, float] = field(default_factory=dict)
    min_status: Optional[ProcessingStatus] = None

    def __post_init__(self):
        object.__setattr__(self, "requirements", dict(self.requirements))
        for model_type, lod in self.requirements.items():
            if not 0 <= lod <= 1:
                raise ValueError(f"template {self.name}: min lod {lod} for {model_type} outside [0, 1]")

    def required(self) -> dict:
        """Model types that must be present (min lod > 0)."""
        return {t: lod for t, lod in self.requirements.items() if lod > 0}


def _table_row(name, phase, task, bm, om, pm, cm, csm):
    return MultiModelTemplate(name, phase, task, dict(zip(MODEL_TYPES, (bm, om, pm, cm, csm))))


# Built-in templates. The execution-phase row is keyed "Scheduling".
BUILTIN_TEMPLATES = {
    t.name: t for t in (
        _table_row("Tender", "Offer", "Offer request", 0.5, 0.1, 0.1, 0.0, 0.0),
        _table_row("Offer", "Offer", "Offer delivery", 0.5, 0.2, 1.0, 0.5, 0.0),
        _table_row("Negotiation", "Contract", "Negotiation", 0.5, 0.2, 1.0, 0.7, 0.0),
        _table_row("Contract", "Contract", "Commissioning", 1.0, 1.0, 1.0, 1.0, 0.0),
        _table_row("Scheduling", "Execution", "Scheduling", 1.0, 1.0, 1.0, 1.0, 0.7),
    )
}


def type_order(model_type: str):
    if model_type in MODEL_TYPES:
        return (0, MODEL_TYPES.index(model_type), "")
    return (1, 0, model_type)


def template_to_xml(template: MultiModelTemplate) -> ET.Element:
    attrs = {"name": template.name, "phase": template.phase, "task": template.task}
    if template.min_status is not None:
        attrs["minStatus"] = template.min_status.name
    root = ET.Element("Template", attrs)
    for model_type in sorted(template.requirements, key=type_order):
        ET.SubElement(root, "Require", type=model_type,
                      minLod=fmt_float(template.requirements[model_type]))
    return root


def template_from_xml(root: ET.Element) -> MultiModelTemplate:
    if root.tag != "Template":
        raise SchemaError(f"template root must be <Template>, got <{root.tag}>")
    reqs = {}
    for node in root:
        if node.tag != "Require":
            raise SchemaError(f"unexpected <{node.tag}> in template")
        reqs[_req(node, "type")] = parse_float(node.get("minLod"), "Require.minLod")
    status = root.get("minStatus")
    try:
        return MultiModelTemplate(
            _req(root, "name"), _req(root, "phase"), _req(root, "task"), reqs,
            ProcessingStatus.parse(status) if status is not None else None,
        )
    except ValueError as exc:
        raise SchemaError(str(exc)) from None


def dump_template(template: MultiModelTemplate) -> bytes:
    return xml_bytes(template_to_xml(template))


def load_template(data: bytes) -> MultiModelTemplate:
    return template_from_xml(parse_xml(data, "template"))


# ---------------------------------------------------------------------------
# link reduction and LOD derivation

def reduce_link_model(link_model: LinkModel, retained: set, retained_models: set) -> LinkModel:
    """Keep exactly the links whose every endpoint is retained."""
    links = [
        link for link in link_model.links
        if all(ep[0] in retained_models and ep in retained for ep in link.endpoints)
    ]
    return LinkModel(link_model.link_model_id, links)


def derive_lod(model: ElementaryModel, target_lod: float) -> ElementaryModel:
    """Coarsen a structured model to ``target_lod`` by dropping finer elements."""
    if not model.structured:
        raise OpaqueModel(f"model {model.model_id} is opaque; its LOD cannot be derived")
    if target_lod < 0:
        raise ValueError(f"target lod {target_lod} is negative")
    if target_lod > model.metadata.lod:
        raise CannotRefine(
            f"model {model.model_id}: cannot refine lod {model.metadata.lod} to {target_lod}")
    kept = [e for e in model.elements if e.lod_tag <= target_lod]
    return ElementaryModel(replace(model.metadata, lod=target_lod), kept)


def _retained_pairs(models: Iterable[ElementaryModel], link_models: Iterable[LinkModel]) -> set:
    # opaque models expose no element list; any endpoint into them counts as present
    opaque = {m.model_id for m in models if not m.structured}
    pairs = {(m.model_id, e.element_id) for m in models if m.structured for e in m.elements}
    for lm in link_models:
        for link in lm.links:
            pairs.update(ep for ep in link.endpoints if ep[0] in opaque)
    return pairs


def with_models(container: MultiModelContainer, models: list, **metadata_changes) -> MultiModelContainer:
    retained = _retained_pairs(models, container.link_models)
    retained_models = {m.model_id for m in models}
    link_models = [reduce_link_model(lm, retained, retained_models) for lm in container.link_models]
    md = replace(container.metadata, **metadata_changes) if metadata_changes else container.metadata
    return MultiModelContainer(container.container_id, md, models, link_models)


# ---------------------------------------------------------------------------
# template views

def _satisfying(models: Sequence[ModelMetadata], template: MultiModelTemplate) -> dict:
    """Map each required type to the ids of models meeting it; raise on the first gap."""
    out = {}
    for model_type, need in template.required().items():
        candidates = [m for m in models if m.model_type == model_type]
        if not candidates:
            raise MissingModel(model_type)
        lod_ok = [m for m in candidates if m.lod >= need]
        if not lod_ok:
            raise InsufficientLOD(model_type, max(m.lod for m in candidates), need)
        if template.min_status is not None:
            status_ok = [m for m in lod_ok if m.processing_status >= template.min_status]
            if not status_ok:
                best = max(m.processing_status for m in lod_ok)
                raise InsufficientStatus(model_type, best.name, template.min_status.name)
            lod_ok = status_ok
        out[model_type] = {m.model_id for m in lod_ok}
    return out


def match_template(source: Union[MultiModelContainer, Iterable[ModelMetadata]],
                   template: MultiModelTemplate) -> bool:
    """Check a container (metadata only) against a template's minimum requirements."""
    metas = source.model_metadata() if isinstance(source, MultiModelContainer) else list(source)
    try:
        _satisfying(metas, template)
    except (MissingModel, InsufficientLOD, InsufficientStatus):
        return False
    return True


def apply_template(container: MultiModelContainer, template: MultiModelTemplate,
                   downscale: bool = False) -> MultiModelContainer:
    """Select the models a template asks for and reduce the link models to match.

    Models keep their source LOD unless ``downscale`` is set, in which case
    structured models finer than the requirement are coarsened to it.
    """
    ok = _satisfying(container.model_metadata(), template)
    keep_ids = set().union(*ok.values()) if ok else set()
    needs = template.required()
    models = []
    for m in container.models:
        if m.model_id not in keep_ids:
            continue
        need = needs[m.metadata.model_type]
        if downscale and m.structured and m.metadata.lod > need:
            m = derive_lod(m, need)
        models.append(m)
    return with_models(container, models, template_name=template.name,
                    phase=template.phase, task=template.task)


# ---------------------------------------------------------------------------
# cut-out predicates

class Predicate:
    """Base for element predicates; supports ``&``, ``|`` and ``~``."""

    def matches(self, element: Element) -> bool:
        raise NotImplementedError

    def __call__(self, element: Element) -> bool:
        return self.matches(element)

    def __and__(self, other):
        return And((self, other))

    def __or__(self, other):
        return Or((self, other))

    def __invert__(self):
        return Not(self)


@dataclass(frozen=True)
class PropertyEquals(Predicate):
    key: str
    value: str

    def matches(self, element):
        return element.properties.get(self.key) == self.value


@dataclass(frozen=True)
class PropertyIn(Predicate):
    key: str
    values: frozenset

    def __post_init__(self):
        object.__setattr__(self, "values", frozenset(self.values))

    def matches(self, element):
        return self.key in element.properties and element.properties[self.key] in self.values


@dataclass(frozen=True)
class BBoxIntersects(Predicate):
    box: tuple

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(float(v) for v in self.box))

    def matches(self, element):
        if element.bbox is None:
            return False
        a, b = element.bbox, self.box
        return all(a[i] <= b[i + 3] and b[i] <= a[i + 3] for i in range(3))


@dataclass(frozen=True)
class TimeOverlaps(Predicate):
    start: datetime
    end: datetime

    def matches(self, element):
        if element.timespan is None:
            return False
        start, end = element.timespan
        return start <= self.end and self.start <= end


@dataclass(frozen=True)
class LodAtMost(Predicate):
    lod: float

    def matches(self, element):
        return element.lod_tag <= self.lod


@dataclass(frozen=True)
class And(Predicate):
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def matches(self, element):
        return all(p.matches(element) for p in self.parts)


@dataclass(frozen=True)
class Or(Predicate):
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))

    def matches(self, element):
        return any(p.matches(element) for p in self.parts)


@dataclass(frozen=True)
class Not(Predicate):
    inner: Predicate

    def matches(self, element):
        return not self.inner.matches(element)


NOTHING = Or(())
EVERYTHING = Not(NOTHING)


class ClosureMode(enum.Enum):
    NONE = "none"
    LINKED_ONCE = "once"
    TRANSITIVE_CLOSURE = "transitive"


def _neighbours(container: MultiModelContainer, structured: set) -> dict:
    adj = {}
    for lm in container.link_models:
        for link in lm.links:
            eps = [ep for ep in link.endpoints if ep[0] in structured]
            for ep in eps:
                adj.setdefault(ep, set()).update(eps)
    return adj


def cutout_selection(container: MultiModelContainer, predicate: Predicate,
                     closure: ClosureMode = ClosureMode.NONE) -> set:
    """(model_id, element_id) pairs a cut-out keeps from the structured models."""
    structured = {m.model_id for m in container.models if m.structured}
    kept = {(m.model_id, e.element_id)
            for m in container.models if m.structured
            for e in m.elements if predicate.matches(e)}
    if closure is ClosureMode.NONE:
        return kept
    adj = _neighbours(container, structured)
    if closure is ClosureMode.LINKED_ONCE:
        out = set(kept)
        for ep in kept:
            out |= adj.get(ep, set())
        return out
    stack, out = list(kept), set(kept)
    while stack:
        for nxt in adj.get(stack.pop(), ()):
            if nxt not in out:
                out.add(nxt)
                stack.append(nxt)
    return out


def apply_cutout(container: MultiModelContainer, predicate: Predicate,
                 closure: ClosureMode = ClosureMode.NONE) -> MultiModelContainer:
    """Keep matching elements (plus linked ones per ``closure``); opaque models pass through."""
    if container.models and not any(m.structured for m in container.models):
        warnings.warn(OpaqueOnlyContainer(
            f"container {container.container_id} has no structured models to cut"), stacklevel=2)
    kept = cutout_selection(container, predicate, closure)
    models = []
    for m in container.models:
        if m.structured:
            m = ElementaryModel(m.metadata, [e for e in m.elements if (m.model_id, e.element_id) in kept])
        models.append(m)
    return with_models(container, models)


def apply_model_lod(container: MultiModelContainer, model_id: str, target_lod: float) -> MultiModelContainer:
    """Coarsen one model inside a container and drop links to removed elements."""
    try:
        container.model(model_id)
    except KeyError:
        raise MissingModel(model_id) from None
    models = [derive_lod(m, target_lod) if m.model_id == model_id else m for m in container.models]
    return with_models(container, models)


# ---------------------------------------------------------------------------
# cut-out expression language
#
#   expr  := term ('|' term)*
#   term  := unary ('&' unary)*
#   unary := '!' unary | '(' expr ')' | atom
#   atom  := key '=' value | 'lod' '<=' number
#          | 'bbox' '(' n ',' n ',' n ',' n ',' n ',' n ')' | 'time' '(' ts ',' ts ')'

_TOKEN = re.compile(r'\s*(?:(<=)|([&|!(),=])|"((?:[^"\\]|\\.)*)"|([^\s&|!(),=<"]+))')


def _tokenize(text: str) -> list:
    tokens, pos = [], 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ExpressionError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        op, punct, quoted, word = m.groups()
        if op or punct:
            tokens.append(("op", op or punct))
        elif quoted is not None:
            tokens.append(("word", re.sub(r"\\(.)", r"\1", quoted)))
        else:
            tokens.append(("word", word))
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self, offset=0):
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else (None, None)

    def take(self, kind=None, value=None):
        tok = self.peek()
        if tok[0] is None or (kind and tok[0] != kind) or (value and tok[1] != value):
            want = value or kind or "token"
            raise ExpressionError(f"expected {want!r}, got {tok[1]!r}")
        self.i += 1
        return tok[1]

    def parse(self):
        node = self.expr()
        if self.peek()[0] is not None:
            raise ExpressionError(f"trailing input at {self.peek()[1]!r}")
        return node

    def expr(self):
        parts = [self.term()]
        while self.peek() == ("op", "|"):
            self.i += 1
            parts.append(self.term())
        return parts[0] if len(parts) == 1 else Or(parts)

    def term(self):
        parts = [self.unary()]
        while self.peek() == ("op", "&"):
            self.i += 1
            parts.append(self.unary())
        return parts[0] if len(parts) == 1 else And(parts)

    def unary(self):
        tok = self.peek()
        if tok == ("op", "!"):
            self.i += 1
            return Not(self.unary())
        if tok == ("op", "("):
            self.i += 1
            node = self.expr()
            self.take("op", ")")
            return node
        return self.atom()

    def _args(self):
        self.take("op", "(")
        args = [self.take("word")]
        while self.peek() == ("op", ","):
            self.i += 1
            args.append(self.take("word"))
        self.take("op", ")")
        return args

    def atom(self):
        name = self.take("word")
        nxt = self.peek()
        try:
            if name == "bbox" and nxt == ("op", "("):
                args = self._args()
                if len(args) != 6:
                    raise ExpressionError("bbox() takes 6 coordinates")
                return BBoxIntersects(tuple(float(a) for a in args))
            if name == "time" and nxt == ("op", "("):
                args = self._args()
                if len(args) != 2:
                    raise ExpressionError("time() takes start and end")
                return TimeOverlaps(parse_time(args[0]), parse_time(args[1]))
            if name == "lod" and nxt == ("op", "<="):
                self.i += 1
                return LodAtMost(float(self.take("word")))
        except (ValueError, SchemaError) as exc:
            raise ExpressionError(str(exc)) from None
        self.take("op", "=")
        return PropertyEquals(name, self.take("word"))


def parse_expression(text: str) -> Predicate:
    """Parse a ``--where`` expression such as ``floor=1 & !lod<=0.2``."""
    return _Parser(text).parse()
