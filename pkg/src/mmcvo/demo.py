"""Deterministic demo corpus: a five-model container and a small VO.

Used by the ``seed`` CLI command, the README walkthrough and the tests.
"""
from __future__ import annotations

from datetime import datetime, timedelta, timezone

from .container import (
    ContainerMetadata,
    Element,
    ElementaryModel,
    Link,
    LinkModel,
    ModelMetadata,
    MultiModelContainer,
    ProcessingStatus,
)
from .filters import BUILTIN_TEMPLATES
from .ontology import (
    Actor,
    BindingKind,
    Permission,
    Resource,
    Restriction,
    Role,
    VOModel,
    parse_rule,
)
from .workflow import DEFAULT_TASK_TABLE

EPOCH = datetime(2012, 3, 1, tzinfo=timezone.utc)
SCHEDULE_LADDER = ((0.1, 3), (0.2, 5), (1.0, 40))  # frame / coarse / detail schedule
BUILDING_LADDER = (0.1, 0.2, 0.5, 0.7, 1.0)


def schedule_model(model_id: str = "PM-1", model_type: str = "PM", lod: float = 1.0) -> ElementaryModel:
    """Process model: 3 frame, 5 coarse and 40 detail activities with time spans."""
    elements = []
    day = 0
    for tag, count in SCHEDULE_LADDER:
        for i in range(count):
            start = EPOCH + timedelta(days=day)
            span = {0.1: 60, 0.2: 20}.get(tag, 5)
            elements.append(Element(
                f"act-{tag}-{i}", tag,
                {"level": {0.1: "frame", 0.2: "coarse"}.get(tag, "detail"), "floor": str(i % 4)},
                timespan=(start, start + timedelta(days=span)),
            ))
            day += 3
    return ElementaryModel(ModelMetadata(model_id, model_type, lod, ProcessingStatus.Released), elements)


def building_model(model_id: str = "BM-1", n: int = 40) -> ElementaryModel:
    elements = []
    for i in range(n):
        floor = i % 4
        x = float(i % 10) * 2.0
        elements.append(Element(
            f"wall-{i}", BUILDING_LADDER[i % len(BUILDING_LADDER)],
            {"kind": ("wall", "slab", "column", "door")[i % 4], "floor": str(floor)},
            bbox=(x, 0.0, floor * 3.0, x + 2.0, 0.3, floor * 3.0 + 3.0),
        ))
    return ElementaryModel(ModelMetadata(model_id, "BM", 1.0, ProcessingStatus.Released), elements)


def _flat_model(model_id: str, model_type: str, n: int, key: str) -> ElementaryModel:
    elements = [Element(f"{key}-{i}", BUILDING_LADDER[i % len(BUILDING_LADDER)],
                        {key: f"{key}-{i}", "floor": str(i % 4)}) for i in range(n)]
    return ElementaryModel(ModelMetadata(model_id, model_type, 1.0, ProcessingStatus.Released), elements)


def five_model_container(container_id: str = "tower") -> MultiModelContainer:
    """BM, OM, PM, CM and CSM at lod 1.0 joined by one link model."""
    bm = building_model()
    om = _flat_model("OM-1", "OM", 20, "service")
    pm = schedule_model()
    cm = _flat_model("CM-1", "CM", 30, "position")
    csm = _flat_model("CSM-1", "CSM", 15, "siteitem")
    links = []
    for i in range(40):
        wall = ("BM-1", f"wall-{i}")
        act = ("PM-1", pm.elements[i % len(pm.elements)].element_id)
        pos = ("CM-1", f"position-{i % 30}")
        links.append(Link(f"l-bpc-{i}", [wall, act, pos], "builds"))
        links.append(Link(f"l-bp-{i}", [wall, act], "schedules"))
        if i < 20:
            links.append(Link(f"l-ob-{i}", [("OM-1", f"service-{i}"), wall], "serves"))
        if i < 15:
            links.append(Link(f"l-sb-{i}", [("CSM-1", f"siteitem-{i}"), wall], "supports"))
    meta = ContainerMetadata("P-tower", "Offer", "Offer request", EPOCH)
    return MultiModelContainer(container_id, meta, [bm, om, pm, cm, csm],
                               [LinkModel("main", links)])


SOD_RULE = ("Actor(?a) ^ hasRole(?a,?e) ^ hasTarget(?a,?r) ^ notOwnedBy(?r,?a) "
            "-> PermittedRole(?e)")

CORE_RULES = {
    "role-assignment": "(Actor(?a), Role(?e), Resource(?r), hasTarget(?a,?r), hasRole(?a,?e), "
                       "hasOwner(?r,?a)) -> PermittedRole(?e)",
    "ownership": "(Action(?a), Resource(?r), hasTarget(?a,?r), hasActor(?a,?x), hasOwner(?r,?x)) "
                 "-> PermittedAction(?a)",
    "state-dependence": "(Action(?a), Resource(?r), hasTarget(?a,?r), hasObjectRestriction(?a,?x), "
                        "hasPassRestriction(?r,?x)) -> PermittedAction(?a)",
}


def demo_vo() -> VOModel:
    """Plan creator/evaluator separation of duty plus generic model readers."""
    vo = VOModel()
    vo.add(
        Permission("mmc.read", "Read", "MultiModelContainer"),
        Permission("mmc.write", "Write", "MultiModelContainer"),
        Permission("mmc.create", "Create", "MultiModelContainer"),
        Permission("plan.create", "Create", "Plan"),
        Permission("plan.evaluate", "Evaluate", "Plan"),
        Permission("plan.release", "Write", "Plan"),
        Restriction("sod-evaluator", parse_rule(SOD_RULE), BindingKind.ActorRoleAssignment),
        Restriction("released-only", parse_rule(CORE_RULES["state-dependence"]),
                    BindingKind.PermissionRoleAssignment),
        Role("Viewer", {"mmc.read"}, "reads model views"),
        Role("Estimator", {"mmc.read", "mmc.create"}, "prepares offers"),
        Role("Scheduler", {"mmc.read", "mmc.write"}, "maintains schedules"),
        Role("PlanCreator", {"mmc.read", "mmc.write", "plan.create"}, "creates plans"),
        Role("PlanEvaluator", {"mmc.read", "plan.evaluate", "plan.release"}, "evaluates plans",
             {"plan.release": {"released-only"}}),
        Actor("alice", {"PlanCreator", "PlanEvaluator"}, {"company": "ArchCo"},
              {"PlanEvaluator": {"sod-evaluator"}}),
        Actor("bob", {"Viewer", "Estimator"}, {"company": "BuildCo"}),
        Actor("carol", {"Scheduler"}, {"company": "SiteCo"}),
        Resource("plan-1", {"alice"}, {"approved"}),
        Resource("plan-2", {"bob"}, {"approved"}),
        Resource("tower", {"bob"}),
    )
    return vo


DEMO_TASKS = dict(DEFAULT_TASK_TABLE.needs)
DEMO_TASKS.update({
    "Plan creation": frozenset({"plan.create"}),
    "Plan evaluation": frozenset({"plan.evaluate"}),
})


def seed_store(store, with_templates: bool = True) -> None:
    """Populate an empty store with the demo VO, templates and the tower container."""
    vo = demo_vo()
    for kind in (vo.permissions, vo.restrictions, vo.roles, vo.actors, vo.resources):
        store.put_entities(kind.values())
    store.set_task_table(DEMO_TASKS, DEFAULT_TASK_TABLE.default)
    if with_templates:
        for t in BUILTIN_TEMPLATES.values():
            store.register_template(t)
    store.register_container(five_model_container(), uploader="bob", registered_at=EPOCH)
