"""VO access-control model and a forward-chaining Horn-rule engine.

The VO model has four classes (Actor, Role, Permission, Restriction) plus
resources that carry object-side context. Actor-role and role-permission
assignments may carry restrictions; an assignment holds when it has no
restriction or every attached restriction derives its head.

Rules are positive Horn clauses over unary and binary predicates, written as::

    Actor(?a) ^ hasRole(?a,?e) ^ hasTarget(?a,?r) ^ hasOwner(?r,?a) -> PermittedRole(?e)

The comma form ``(Actor(?a), Role(?e)) -> PermittedRole(?e)`` is
accepted as well.
"""
from __future__ import annotations

import enum
import itertools
import re
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .container import parse_xml, xml_bytes, _req
from .errors import RuleSyntaxError, SchemaError, UnknownEntity, UnsafeRule

ENVIRONMENT = "Environment"
PERMITTED_ROLE = "PermittedRole"
PERMITTED_ACTION = "PermittedAction"
ACTIONS = ("Read", "Write", "Create", "Evaluate")


# ---------------------------------------------------------------------------
# terms, atoms, rules

@dataclass(frozen=True, order=True)
class Var:
    name: str

    def __str__(self):
        return f"?{self.name}"


class Atom(NamedTuple):
    predicate: str
    args: tuple

    def __str__(self):
        return f"{self.predicate}({', '.join(_term_str(a) for a in self.args)})"

    def variables(self) -> set:
        return {a for a in self.args if isinstance(a, Var)}

    def is_ground(self) -> bool:
        return not self.variables()


def _term_str(term) -> str:
    if isinstance(term, Var) or _BARE.match(term):
        return str(term)
    return f'"{term}"'


def atom(predicate: str, *args) -> Atom:
    """Build an atom; string arguments starting with ``?`` become variables."""
    return Atom(predicate, tuple(Var(a[1:]) if isinstance(a, str) and a.startswith("?") else a
                                 for a in args))


@dataclass(frozen=True)
class Rule:
    body: tuple
    head: Atom

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))

    def __str__(self):
        return f"{' ^ '.join(str(a) for a in self.body)} -> {self.head}"

    def check(self) -> None:
        for a in (*self.body, self.head):
            if len(a.args) not in (1, 2):
                raise UnsafeRule(f"{a.predicate}/{len(a.args)}: only unary or binary predicates")
        body_vars = set().union(*(a.variables() for a in self.body)) if self.body else set()
        missing = self.head.variables() - body_vars
        if missing:
            names = ", ".join(sorted(str(v) for v in missing))
            raise UnsafeRule(f"head variable(s) {names} not bound in body of: {self}")


_ATOM = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*\(([^()]*)\)")
_BARE = re.compile(r"^[A-Za-z0-9_.:\-]+$")
_CONST = re.compile(r'^(?:[A-Za-z0-9_.:\-]+|"[^"]*")$')


def _parse_atoms(text: str, where: str) -> list:
    atoms = []
    for m in _ATOM.finditer(text):
        args = []
        for raw in m.group(2).split(","):
            raw = raw.strip()
            if raw.startswith("?") and re.match(r"^\?[A-Za-z0-9_]+$", raw):
                args.append(Var(raw[1:]))
            elif _CONST.match(raw):
                args.append(raw[1:-1] if raw.startswith('"') else raw)
            else:
                raise RuleSyntaxError(f"bad argument {raw!r} in {where}")
        atoms.append(Atom(m.group(1), tuple(args)))
    residue = _ATOM.sub("", text)
    if re.sub(r"[\s^,()∧]", "", residue):
        raise RuleSyntaxError(f"unparsable text {residue.strip()!r} in {where}")
    return atoms


def parse_rule(text: str) -> Rule:
    """Parse one rule; raises :class:`RuleSyntaxError` or :class:`UnsafeRule`."""
    src = text.replace("→", "->").replace("&gt;", ">")
    if src.count("->") != 1:
        raise RuleSyntaxError(f"rule needs exactly one '->': {text!r}")
    body_text, head_text = src.split("->")
    body = _parse_atoms(body_text, "rule body")
    head = _parse_atoms(head_text, "rule head")
    if len(head) != 1:
        raise RuleSyntaxError(f"rule head must be a single atom: {head_text.strip()!r}")
    rule = Rule(tuple(body), head[0])
    rule.check()
    return rule


def parse_rules(text: str) -> list:
    """Parse a rule file: one rule per line, ``#`` starts a comment."""
    rules = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rules.append(parse_rule(line))
        except RuleSyntaxError as exc:
            raise RuleSyntaxError(f"line {lineno}: {exc}") from None
    return rules


# ---------------------------------------------------------------------------
# forward chaining

def _unify(pattern: Atom, fact_args: tuple, binding: dict) -> Optional[dict]:
    out = binding
    for p, v in zip(pattern.args, fact_args):
        if isinstance(p, Var):
            bound = out.get(p)
            if bound is None:
                if out is binding:
                    out = dict(binding)
                out[p] = v
            elif bound != v:
                return None
        elif p != v:
            return None
    return out


def _join(atoms: Sequence[Atom], index: Mapping, binding: dict):
    if not atoms:
        yield binding
        return
    first, rest = atoms[0], atoms[1:]
    for args in index.get((first.predicate, len(first.args)), ()):
        b = _unify(first, args, binding)
        if b is not None:
            yield from _join(rest, index, b)


def _ground(a: Atom, binding: Mapping) -> Atom:
    return Atom(a.predicate, tuple(binding[x] if isinstance(x, Var) else x for x in a.args))


def infer(facts: Iterable[Atom], rules: Sequence[Rule]) -> frozenset:
    """Least fixpoint of ``facts`` under ``rules`` (semi-naive forward chaining)."""
    rules = list(rules)
    for r in rules:
        r.check()
    known = set()
    for f in facts:
        if not f.is_ground():
            raise ValueError(f"fact {f} is not ground")
        known.add(f)

    full = defaultdict(set)
    for f in known:
        full[(f.predicate, len(f.args))].add(f.args)
    delta = {k: set(v) for k, v in full.items()}

    # bodiless rules fire once
    new = {r.head for r in rules if not r.body} - known
    while True:
        for rule in rules:
            body = rule.body
            for i, pivot in enumerate(body):
                for args in delta.get((pivot.predicate, len(pivot.args)), ()):
                    b = _unify(pivot, args, {})
                    if b is None:
                        continue
                    for full_b in _join(body[:i] + body[i + 1:], full, b):
                        h = _ground(rule.head, full_b)
                        if h not in known:
                            new.add(h)
        if not new:
            return frozenset(known)
        known |= new
        delta = defaultdict(set)
        for f in new:
            key = (f.predicate, len(f.args))
            full[key].add(f.args)
            delta[key].add(f.args)
        new = set()


# ---------------------------------------------------------------------------
# VO model

class BindingKind(enum.Enum):
    ActorRoleAssignment = "ActorRoleAssignment"
    PermissionRoleAssignment = "PermissionRoleAssignment"


_HEAD_FOR = {
    BindingKind.ActorRoleAssignment: PERMITTED_ROLE,
    BindingKind.PermissionRoleAssignment: PERMITTED_ACTION,
}


@dataclass(frozen=True)
class Restriction:
    restriction_id: str
    rule: Rule
    binds_to: BindingKind

    def __post_init__(self):
        want = _HEAD_FOR[self.binds_to]
        if self.rule.head.predicate != want:
            raise ValueError(f"restriction {self.restriction_id}: {self.binds_to.value} "
                             f"rules must conclude {want}, not {self.rule.head.predicate}")


@dataclass(frozen=True)
class Actor:
    actor_id: str
    potential_roles: frozenset = frozenset()
    attributes: Mapping[str, str] = field(default_factory=dict)
    # role_id -> restriction ids attached to that actor-role assignment
    role_restrictions: Mapping[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "potential_roles", frozenset(self.potential_roles))
        object.__setattr__(self, "attributes", dict(self.attributes))
        object.__setattr__(self, "role_restrictions",
                           {k: frozenset(v) for k, v in self.role_restrictions.items()})


@dataclass(frozen=True)
class Role:
    role_id: str
    permission_ids: frozenset = frozenset()
    description: str = ""
    permission_restrictions: Mapping[str, frozenset] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "permission_ids", frozenset(self.permission_ids))
        object.__setattr__(self, "permission_restrictions",
                           {k: frozenset(v) for k, v in self.permission_restrictions.items()})


@dataclass(frozen=True)
class Permission:
    permission_id: str
    action: str
    resource_type: str = "*"
    # e.g. {"maxLod.BM": "0.5"}
    constraints: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "constraints", dict(self.constraints))

    def max_lod(self, model_type: str) -> Optional[float]:
        value = self.constraints.get(f"maxLod.{model_type}", self.constraints.get("maxLod"))
        return float(value) if value is not None else None


@dataclass(frozen=True)
class Resource:
    """Object-side context: ownership, pass-restriction tokens, deputy attributes."""

    resource_id: str
    owners: frozenset = frozenset()
    pass_restrictions: frozenset = frozenset()
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "owners", frozenset(self.owners))
        object.__setattr__(self, "pass_restrictions", frozenset(self.pass_restrictions))
        object.__setattr__(self, "attributes", dict(self.attributes))


@dataclass(frozen=True)
class AssignmentBinding:
    source_id: str
    target_id: str
    restrictions: frozenset = frozenset()


@dataclass(frozen=True)
class ContextAttribute:
    owner: str
    key: str
    value: str

    def to_atom(self) -> Atom:
        return Atom(self.key, (self.owner, self.value))


@dataclass
class VOModel:
    actors: dict = field(default_factory=dict)
    roles: dict = field(default_factory=dict)
    permissions: dict = field(default_factory=dict)
    restrictions: dict = field(default_factory=dict)
    resources: dict = field(default_factory=dict)

    def add(self, *entities) -> "VOModel":
        for e in entities:
            if isinstance(e, Actor):
                self.actors[e.actor_id] = e
            elif isinstance(e, Role):
                self.roles[e.role_id] = e
            elif isinstance(e, Permission):
                self.permissions[e.permission_id] = e
            elif isinstance(e, Restriction):
                self.restrictions[e.restriction_id] = e
            elif isinstance(e, Resource):
                self.resources[e.resource_id] = e
            else:
                raise TypeError(f"not a VO entity: {e!r}")
        return self

    def actor(self, actor_id: str) -> Actor:
        try:
            return self.actors[actor_id]
        except KeyError:
            raise UnknownEntity(f"unknown actor {actor_id!r}") from None

    def role(self, role_id: str) -> Role:
        try:
            return self.roles[role_id]
        except KeyError:
            raise UnknownEntity(f"unknown role {role_id!r}") from None

    # forward and inverse views of the two assignment relations
    def actor_role_bindings(self, actor_id: str) -> list:
        a = self.actor(actor_id)
        return [AssignmentBinding(a.actor_id, r, a.role_restrictions.get(r, frozenset()))
                for r in sorted(a.potential_roles)]

    def role_actor_bindings(self, role_id: str) -> list:
        return [AssignmentBinding(a.actor_id, role_id, a.role_restrictions.get(role_id, frozenset()))
                for a in sorted(self.actors.values(), key=lambda a: a.actor_id)
                if role_id in a.potential_roles]

    def role_permission_bindings(self, role_id: str) -> list:
        r = self.role(role_id)
        return [AssignmentBinding(r.role_id, p, r.permission_restrictions.get(p, frozenset()))
                for p in sorted(r.permission_ids)]

    def permission_role_bindings(self, permission_id: str) -> list:
        return [AssignmentBinding(r.role_id, permission_id,
                                  r.permission_restrictions.get(permission_id, frozenset()))
                for r in sorted(self.roles.values(), key=lambda r: r.role_id)
                if permission_id in r.permission_ids]

    def problems(self) -> list:
        """Dangling references between VO entities, as readable strings."""
        out = []
        for a in self.actors.values():
            out += [f"actor {a.actor_id}: unknown role {r}" for r in a.potential_roles
                    if r not in self.roles]
            for r, rids in a.role_restrictions.items():
                out += [f"actor {a.actor_id}: unknown restriction {x}" for x in rids
                        if x not in self.restrictions]
        for r in self.roles.values():
            out += [f"role {r.role_id}: unknown permission {p}" for p in r.permission_ids
                    if p not in self.permissions]
            for p, rids in r.permission_restrictions.items():
                out += [f"role {r.role_id}: unknown restriction {x}" for x in rids
                        if x not in self.restrictions]
        return sorted(out)


# ---------------------------------------------------------------------------
# fact base construction and restriction evaluation

@dataclass(frozen=True)
class RequestContext:
    actor_id: str
    object_id: str
    action: str
    environment: Mapping[str, str] = field(default_factory=dict)
    object_restrictions: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "environment", dict(self.environment))
        object.__setattr__(self, "object_restrictions", frozenset(self.object_restrictions))


def context_attributes(vo: VOModel, ctx: RequestContext) -> list:
    actor = vo.actor(ctx.actor_id)
    resource = vo.resources[ctx.object_id]
    attrs = [ContextAttribute(actor.actor_id, k, v) for k, v in sorted(actor.attributes.items())]
    attrs += [ContextAttribute(resource.resource_id, k, v) for k, v in sorted(resource.attributes.items())]
    attrs += [ContextAttribute(ENVIRONMENT, k, v) for k, v in sorted(ctx.environment.items())]
    return attrs


def build_fact_base(vo: VOModel, ctx: RequestContext) -> frozenset:
    """Ground the request universe into atoms the rules can match.

    ``hasTarget`` is emitted for both the action and the requesting actor, and
    ``notOwnedBy(o, a)`` when the requester is not among the object's owners,
    so separation-of-duty style restrictions stay expressible as positive rules.
    """
    actor = vo.actor(ctx.actor_id)
    if ctx.object_id not in vo.resources:
        raise UnknownEntity(f"unknown resource {ctx.object_id!r}")
    resource = vo.resources[ctx.object_id]
    a, o, act = actor.actor_id, resource.resource_id, ctx.action

    facts = {Atom("Actor", (a,)), Atom("Resource", (o,)), Atom("Action", (act,)),
             Atom("hasTarget", (act, o)), Atom("hasTarget", (a, o)), Atom("hasActor", (act, a))}
    for r in actor.potential_roles:
        facts.add(Atom("Role", (r,)))
        facts.add(Atom("hasRole", (a, r)))
    for w in resource.owners:
        facts.add(Atom("hasOwner", (o, w)))
    if a not in resource.owners:
        facts.add(Atom("notOwnedBy", (o, a)))
    for x in ctx.object_restrictions:
        facts.add(Atom("hasObjectRestriction", (act, x)))
    for x in resource.pass_restrictions:
        facts.add(Atom("hasPassRestriction", (o, x)))
    facts.update(c.to_atom() for c in context_attributes(vo, ctx))

    universe = sorted({arg for f in facts for arg in f.args})
    facts.update(Atom("distinctFrom", (x, y)) for x, y in itertools.permutations(universe, 2))
    return frozenset(facts)


def evaluate_restriction(restriction: Optional[Restriction], facts: Iterable[Atom], subject: str) -> bool:
    """True iff the restriction's rule derives its head for ``subject``.

    Any evaluation failure (including an unknown restriction) is a denial.
    """
    if restriction is None:
        return False
    try:
        derived = infer(facts, [restriction.rule])
    except Exception:
        return False
    return Atom(restriction.rule.head.predicate, (subject,)) in derived


def _binding_holds(vo: VOModel, restriction_ids, facts, subject) -> list:
    """Restriction ids that fail; an empty list means the assignment holds."""
    return [rid for rid in sorted(restriction_ids)
            if not evaluate_restriction(vo.restrictions.get(rid), facts, subject)]


def role_evaluation(vo: VOModel, actor_id: str, facts: Iterable[Atom]) -> dict:
    """Map every potential role to the restriction ids that withhold it."""
    facts = frozenset(facts)
    return {b.target_id: _binding_holds(vo, b.restrictions, facts, b.target_id)
            for b in vo.actor_role_bindings(actor_id)}


def permitted_roles(vo: VOModel, actor_id: str, facts: Iterable[Atom]) -> set:
    return {r for r, failed in role_evaluation(vo, actor_id, facts).items() if not failed}


def _request_action(facts: frozenset) -> Optional[str]:
    acts = sorted(f.args[0] for f in facts if f.predicate == "Action" and len(f.args) == 1)
    return acts[0] if len(acts) == 1 else None


def permission_evaluation(vo: VOModel, role_id: str, facts: Iterable[Atom],
                          action: Optional[str] = None) -> dict:
    facts = frozenset(facts)
    subject = action if action is not None else _request_action(facts)
    out = {}
    for b in vo.role_permission_bindings(role_id):
        if not b.restrictions:
            out[b.target_id] = []
        elif subject is None:
            out[b.target_id] = sorted(b.restrictions)
        else:
            out[b.target_id] = _binding_holds(vo, b.restrictions, facts, subject)
    return out


def permitted_actions(vo: VOModel, role_id: str, facts: Iterable[Atom],
                      action: Optional[str] = None) -> set:
    """Permission ids of ``role_id`` whose restrictions hold for the requested action."""
    return {p for p, failed in permission_evaluation(vo, role_id, facts, action).items() if not failed}


# ---------------------------------------------------------------------------
# XML records

def _refs(node: ET.Element, tag: str) -> list:
    return [_req(c, "ref") for c in node if c.tag == tag]


def _attrs_xml(parent: ET.Element, attrs: Mapping, tag: str = "Attr") -> None:
    for k in sorted(attrs):
        ET.SubElement(parent, tag, k=k, v=attrs[k])


def _attrs_from(node: ET.Element, tag: str = "Attr") -> dict:
    return {_req(c, "k"): _req(c, "v") for c in node if c.tag == tag}


def entity_to_xml(entity) -> ET.Element:
    if isinstance(entity, Actor):
        root = ET.Element("Actor", id=entity.actor_id)
        for r in sorted(entity.potential_roles):
            node = ET.SubElement(root, "PotentialRole", ref=r)
            for x in sorted(entity.role_restrictions.get(r, ())):
                ET.SubElement(node, "RestrictedBy", ref=x)
        _attrs_xml(root, entity.attributes)
    elif isinstance(entity, Role):
        root = ET.Element("Role", id=entity.role_id, description=entity.description)
        for p in sorted(entity.permission_ids):
            node = ET.SubElement(root, "Grant", ref=p)
            for x in sorted(entity.permission_restrictions.get(p, ())):
                ET.SubElement(node, "RestrictedBy", ref=x)
    elif isinstance(entity, Permission):
        root = ET.Element("Permission", id=entity.permission_id, action=entity.action,
                          resourceType=entity.resource_type)
        _attrs_xml(root, entity.constraints, "Constraint")
    elif isinstance(entity, Restriction):
        root = ET.Element("Restriction", id=entity.restriction_id, bindsTo=entity.binds_to.value)
        root.text = str(entity.rule)
    elif isinstance(entity, Resource):
        root = ET.Element("Resource", id=entity.resource_id)
        for w in sorted(entity.owners):
            ET.SubElement(root, "Owner", ref=w)
        for t in sorted(entity.pass_restrictions):
            ET.SubElement(root, "Pass", token=t)
        _attrs_xml(root, entity.attributes)
    else:
        raise TypeError(f"not a VO entity: {entity!r}")
    return root


def entity_from_xml(root: ET.Element):
    tag = root.tag
    if tag == "Actor":
        roles = [c for c in root if c.tag == "PotentialRole"]
        return Actor(_req(root, "id"), [_req(c, "ref") for c in roles], _attrs_from(root),
                     {_req(c, "ref"): _refs(c, "RestrictedBy") for c in roles if len(c)})
    if tag == "Role":
        grants = [c for c in root if c.tag == "Grant"]
        return Role(_req(root, "id"), [_req(c, "ref") for c in grants], root.get("description", ""),
                    {_req(c, "ref"): _refs(c, "RestrictedBy") for c in grants if len(c)})
    if tag == "Permission":
        return Permission(_req(root, "id"), _req(root, "action"), root.get("resourceType", "*"),
                          _attrs_from(root, "Constraint"))
    if tag == "Restriction":
        try:
            kind = BindingKind(_req(root, "bindsTo"))
            return Restriction(_req(root, "id"), parse_rule(root.text or ""), kind)
        except ValueError as exc:
            raise SchemaError(str(exc)) from None
    if tag == "Resource":
        return Resource(_req(root, "id"), _refs(root, "Owner"),
                        [_req(c, "token") for c in root if c.tag == "Pass"], _attrs_from(root))
    raise SchemaError(f"unknown VO record <{tag}>")


def entity_id(entity) -> str:
    for attr in ("actor_id", "role_id", "permission_id", "restriction_id", "resource_id"):
        if hasattr(entity, attr):
            return getattr(entity, attr)
    raise TypeError(f"not a VO entity: {entity!r}")


def dump_entity(entity) -> bytes:
    return xml_bytes(entity_to_xml(entity))


def load_entity(data: bytes):
    return entity_from_xml(parse_xml(data, "VO record"))
