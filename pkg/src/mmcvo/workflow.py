"""Context-sensitive filtered access to multi-models.

The procedure runs six numbered steps:

1. evaluate the actor's potential roles against the access context
2. check the actor in the VO registry
3. map the task to needed permissions and activate a least-privilege role
4. look up the task's template (or fall back per the request preference)
5. resolve each required model at the needed LOD, coarsening finer ones
6. hand the assembled container to the actor

:meth:`AccessWorkflow.decide_access` covers steps 1-4 without touching any
payload; :meth:`AccessWorkflow.fulfill_request` runs 5 and 6.
"""
from __future__ import annotations

import enum
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Optional

from .container import (
    ContainerMetadata,
    MultiModelContainer,
    parse_xml,
    serialize_container,
    validate_container,
    xml_bytes,
    _req,
)
from .errors import (
    AccessNotPermitted,
    ModelUnresolvable,
    NoPermittedRole,
    NotFound,
    SchemaError,
    UnknownEntity,
    ValidationFailed,
)
from .filters import (
    MODEL_TYPES,
    MultiModelTemplate,
    derive_lod,
    match_template,
    type_order,
    with_models,
)
from .ontology import (
    Resource,
    RequestContext,
    VOModel,
    build_fact_base,
    permission_evaluation,
    role_evaluation,
)

logger = logging.getLogger(__name__)

# creation time for assembled containers with neither a source nor any model
EMPTY_CREATED = datetime(1980, 1, 1, tzinfo=timezone.utc)

# context key whose (comma separated) value lists hasObjectRestriction tokens
OBJECT_RESTRICTION_KEY = "objectRestriction"


class Preference(enum.Enum):
    Strict = "Strict"
    Permissive = "Permissive"


class Outcome(enum.Enum):
    Granted = "Granted"
    Denied = "Denied"


@dataclass(frozen=True)
class TaskTable:
    needs: Mapping[str, frozenset] = field(default_factory=dict)
    default: frozenset = frozenset({"mmc.read"})

    def needed(self, task: str) -> frozenset:
        return frozenset(self.needs.get(task, self.default))


DEFAULT_TASK_TABLE = TaskTable({
    "Offer request": frozenset({"mmc.read"}),
    "Offer delivery": frozenset({"mmc.read", "mmc.create"}),
    "Negotiation": frozenset({"mmc.read"}),
    "Commissioning": frozenset({"mmc.read", "mmc.write"}),
    "Scheduling": frozenset({"mmc.read", "mmc.write"}),
})


@dataclass(frozen=True)
class AccessRequest:
    actor_id: str
    task: str
    object_ref: str
    requested_action: str = "Read"
    context: Mapping[str, str] = field(default_factory=dict)
    preference: Preference = Preference.Strict

    def __post_init__(self):
        object.__setattr__(self, "context", dict(self.context))

    def request_context(self) -> RequestContext:
        env = {k: v for k, v in self.context.items() if k != OBJECT_RESTRICTION_KEY}
        tokens = self.context.get(OBJECT_RESTRICTION_KEY, "")
        return RequestContext(self.actor_id, self.object_ref, self.requested_action, env,
                              [t.strip() for t in tokens.split(",") if t.strip()])


@dataclass(frozen=True)
class StepRecord:
    n: int
    outcome: str  # pass | fail | skip
    detail: str


@dataclass(frozen=True)
class AccessDecision:
    outcome: Outcome
    active_role: Optional[str] = None
    granted_permissions: frozenset = frozenset()
    applied_template: Optional[str] = None
    rationale: tuple = ()

    @property
    def granted(self) -> bool:
        return self.outcome is Outcome.Granted

    @property
    def failing_step(self) -> Optional[StepRecord]:
        return next((s for s in self.rationale if s.outcome == "fail"), None)


class AccessDenied(AccessNotPermitted):
    def __init__(self, decision: AccessDecision):
        self.decision = decision
        step = decision.failing_step
        super().__init__(f"denied at step {step.n}: {step.detail}" if step else "denied")


# ---------------------------------------------------------------------------
# role activation

def covering_roles(vo: VOModel, actor_id: str, facts, needed: Iterable[str]) -> dict:
    """Permitted roles whose permitted permissions cover ``needed``, with those permissions."""
    needed = frozenset(needed)
    out = {}
    for role, failed in role_evaluation(vo, actor_id, facts).items():
        if failed:
            continue
        perms = {p for p, f in permission_evaluation(vo, role, facts).items() if not f}
        if needed <= perms:
            out[role] = frozenset(perms)
    return out


def determine_active_role(vo: VOModel, actor_id: str, facts, needed: Iterable[str]) -> str:
    """Least-privilege choice: fewest granted permissions, then lexicographic role id."""
    candidates = covering_roles(vo, actor_id, facts, needed)
    if not candidates:
        raise NoPermittedRole(f"no permitted role of {actor_id!r} covers {sorted(needed)}")
    return min(candidates, key=lambda r: (len(candidates[r]), r))


def max_lod_caps(vo: VOModel, permission_ids: Iterable[str]) -> dict:
    """Most restrictive max-LOD constraint per model type over the given permissions."""
    caps = {}
    for pid in permission_ids:
        perm = vo.permissions.get(pid)
        if perm is None:
            continue
        for model_type in {*MODEL_TYPES, *(k.split(".", 1)[1] for k in perm.constraints
                                             if k.startswith("maxLod."))}:
            cap = perm.max_lod(model_type)
            if cap is not None:
                caps[model_type] = min(cap, caps.get(model_type, cap))
    return caps


# ---------------------------------------------------------------------------
# workflow

class AccessWorkflow:
    def __init__(self, store, task_table: Optional[TaskTable] = None):
        self.store = store
        self._task_table = task_table

    @property
    def task_table(self) -> TaskTable:
        if self._task_table is not None:
            return self._task_table
        stored = self.store.task_table()
        if stored is not None:
            return TaskTable(*stored)
        return DEFAULT_TASK_TABLE

    def object_known(self, object_ref: str, vo: Optional[VOModel] = None) -> bool:
        vo = vo or self.store.vo()
        return (object_ref in vo.resources or self.store.has_container(object_ref)
                or self._model_registered(object_ref))

    def _model_registered(self, model_id: str) -> bool:
        try:
            self.store.get_model_entry(model_id)
        except NotFound:
            return False
        return True

    def _vo_for(self, request: AccessRequest) -> VOModel:
        vo = self.store.vo()
        # registered objects without a resource record are unowned resources
        if request.object_ref not in vo.resources and self.object_known(request.object_ref, vo):
            vo.add(Resource(request.object_ref))
        return vo

    def decide_access(self, request: AccessRequest) -> AccessDecision:
        steps = []

        def deny(n, detail):
            steps.append(StepRecord(n, "fail", detail))
            logger.info("access denied for %s at step %d: %s", request.actor_id, n, detail)
            return AccessDecision(Outcome.Denied, rationale=tuple(steps))

        vo = self._vo_for(request)
        registered = request.actor_id in vo.actors

        # step 1: role evaluation in the access context
        evaluation = {}
        facts = frozenset()
        if not registered:
            steps.append(StepRecord(1, "skip", f"actor {request.actor_id!r} has no potential roles"))
        else:
            try:
                facts = build_fact_base(vo, request.request_context())
            except UnknownEntity as exc:
                return deny(1, f"UnknownEntity: {exc}")
            evaluation = role_evaluation(vo, request.actor_id, facts)
            permitted = sorted(r for r, f in evaluation.items() if not f)
            withheld = [f"{r} (restriction {', '.join(f)})" for r, f in sorted(evaluation.items()) if f]
            detail = f"permitted roles: {', '.join(permitted) or 'none'}"
            if withheld:
                detail += f"; withheld: {'; '.join(withheld)}"
            steps.append(StepRecord(1, "pass", detail))

        # step 2: VO registry membership
        if not registered:
            return deny(2, f"actor {request.actor_id!r} is not registered in the VO registry")
        problems = [p for p in vo.problems() if p.startswith(f"actor {request.actor_id}:")]
        if problems:
            return deny(2, "; ".join(problems))
        steps.append(StepRecord(2, "pass", f"actor {request.actor_id!r} registered; "
                                           f"{sum(len(f) == 0 for f in evaluation.values())} of "
                                           f"{len(evaluation)} role assignments hold"))

        # step 3: task permissions and least-privilege role activation
        needed = self.task_table.needed(request.task)
        candidates = covering_roles(vo, request.actor_id, facts, needed)
        if not candidates:
            cited = sorted({rid for f in evaluation.values() for rid in f})
            detail = f"no permitted role covers {sorted(needed)} for task {request.task!r}"
            if cited:
                detail += f"; restrictions failed: {', '.join(cited)}"
            return deny(3, detail)
        role = min(candidates, key=lambda r: (len(candidates[r]), r))
        perms = candidates[role]
        steps.append(StepRecord(3, "pass", f"needs {sorted(needed)}; active role {role} "
                                           f"grants {len(perms)} permission(s)"))

        # step 4: template lookup (metadata only)
        template = self.store.lookup_template(request.task)
        if template is None:
            if request.preference is Preference.Permissive:
                steps.append(StepRecord(4, "pass", f"no template for task {request.task!r}; "
                                                   "unfiltered container (Permissive)"))
            else:
                return deny(4, f"no template for task {request.task!r}; "
                               "access not permitted (Strict)")
        else:
            steps.append(StepRecord(4, "pass", f"template {template.name}"))

        return AccessDecision(Outcome.Granted, role, perms,
                              template.name if template else None, tuple(steps))

    # -- fulfilment ----------------------------------------------------------

    def fulfill_request(self, request: AccessRequest,
                        decision: Optional[AccessDecision] = None) -> MultiModelContainer:
        decision = decision or self.decide_access(request)
        if not decision.granted:
            raise AccessDenied(decision)
        vo = self.store.vo()
        caps = max_lod_caps(vo, decision.granted_permissions)
        source = (self.store.load_container(request.object_ref)
                  if self.store.has_container(request.object_ref) else None)
        if decision.applied_template is None:
            out = self._unfiltered(request, source, caps)
        else:
            template = self.store.get_template(decision.applied_template)
            out = self._assemble(request, template, source, caps)
            if not match_template(out, template):
                raise ModelUnresolvable(f"assembled container does not satisfy {template.name}")
        report = validate_container(out)
        if report:
            raise ValidationFailed(report)
        return out

    def fulfill_archive(self, request: AccessRequest,
                        decision: Optional[AccessDecision] = None) -> bytes:
        return serialize_container(self.fulfill_request(request, decision))

    def _assemble(self, request, template: MultiModelTemplate, source, caps) -> MultiModelContainer:
        models, times = [], []
        for model_type, need in sorted(template.required().items(), key=lambda kv: type_order(kv[0])):
            cap = caps.get(model_type)
            if cap is not None and cap < need:
                raise AccessNotPermitted(
                    f"{model_type}: template needs lod {need} but the active role is capped at {cap}")
            entry = self.store.find_model(model_type, need, template.min_status)
            if entry is None:
                raise ModelUnresolvable(f"no registered {model_type} model at lod >= {need}")
            model = self.store.load_model(entry.model_id)
            if model.metadata.lod > need:
                if model.structured:
                    model = derive_lod(model, need)
                elif cap is not None and model.metadata.lod > cap:
                    raise ModelUnresolvable(
                        f"{model_type}: opaque model {model.model_id} at lod {model.metadata.lod} "
                        f"exceeds cap {cap} and cannot be coarsened")
            models.append(model)
            times.append(entry.registered_at)

        if source is not None:
            project, created, links = source.metadata.project_id, source.metadata.created_at, source.link_models
        else:
            project, created, links = request.object_ref, max(times, default=EMPTY_CREATED), ()
        skeleton = MultiModelContainer(
            f"{request.object_ref}.{template.name}",
            ContainerMetadata(project, template.phase, template.task, created, template.name),
            (), links)
        return with_models(skeleton, models)

    def _unfiltered(self, request, source, caps) -> MultiModelContainer:
        if source is None:
            try:
                entry = self.store.get_model_entry(request.object_ref)
            except NotFound:
                raise ModelUnresolvable(
                    f"{request.object_ref!r} has no registered container or model") from None
            model = self.store.load_model(entry.model_id)
            source = MultiModelContainer(
                request.object_ref,
                ContainerMetadata(request.object_ref, "", request.task, entry.registered_at),
                (model,))
        models = []
        for m in source.models:
            cap = caps.get(m.metadata.model_type)
            if cap is not None and m.metadata.lod > cap:
                if not m.structured:
                    raise AccessNotPermitted(
                        f"opaque model {m.model_id} at lod {m.metadata.lod} exceeds cap {cap}")
                m = derive_lod(m, cap)
            models.append(m)
        return with_models(source, models)


# ---------------------------------------------------------------------------
# XML wire formats

def request_to_xml(request: AccessRequest) -> bytes:
    root = ET.Element("AccessRequest", actor=request.actor_id, task=request.task,
                      object=request.object_ref, action=request.requested_action,
                      preference=request.preference.value)
    for k in sorted(request.context):
        ET.SubElement(root, "Context", key=k, value=request.context[k])
    return xml_bytes(root)


def request_from_xml(data: bytes) -> AccessRequest:
    root = parse_xml(data, "access request")
    if root.tag != "AccessRequest":
        raise SchemaError(f"expected <AccessRequest>, got <{root.tag}>")
    try:
        pref = Preference(root.get("preference", "Strict"))
    except ValueError:
        raise SchemaError(f"unknown preference {root.get('preference')!r}") from None
    context = {}
    for node in root:
        if node.tag != "Context":
            raise SchemaError(f"unexpected <{node.tag}> in access request")
        context[_req(node, "key")] = _req(node, "value")
    return AccessRequest(_req(root, "actor"), _req(root, "task"), _req(root, "object"),
                         root.get("action", "Read"), context, pref)


def decision_to_xml(decision: AccessDecision) -> bytes:
    attrs = {"outcome": decision.outcome.value}
    if decision.active_role is not None:
        attrs["role"] = decision.active_role
    if decision.applied_template is not None:
        attrs["template"] = decision.applied_template
    root = ET.Element("Decision", attrs)
    for p in sorted(decision.granted_permissions):
        ET.SubElement(root, "Permission", id=p)
    for s in decision.rationale:
        ET.SubElement(root, "Step", n=str(s.n), outcome=s.outcome, detail=s.detail)
    return xml_bytes(root)


def decision_from_xml(data: bytes) -> AccessDecision:
    root = parse_xml(data, "decision")
    if root.tag != "Decision":
        raise SchemaError(f"expected <Decision>, got <{root.tag}>")
    perms = frozenset(_req(n, "id") for n in root if n.tag == "Permission")
    steps = tuple(StepRecord(int(_req(n, "n")), _req(n, "outcome"), n.get("detail", ""))
                  for n in root if n.tag == "Step")
    return AccessDecision(Outcome(_req(root, "outcome")), root.get("role"), perms,
                          root.get("template"), steps)
