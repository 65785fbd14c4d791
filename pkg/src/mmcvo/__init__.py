"""Multi-model containers with link-preserving filters and context-sensitive RBAC."""
from .container import (
    ContainerMetadata,
    Element,
    ElementaryModel,
    Link,
    LinkModel,
    ModelMetadata,
    MultiModelContainer,
    ProcessingStatus,
    Violation,
    parse_container,
    serialize_container,
    validate_container,
)
from .filters import (
    BUILTIN_TEMPLATES,
    ClosureMode,
    MultiModelTemplate,
    apply_cutout,
    apply_template,
    derive_lod,
    match_template,
    parse_expression,
    reduce_link_model,
)
from .ontology import Rule, build_fact_base, infer, parse_rule, permitted_actions, permitted_roles
from .store import RegistryStore, open_store
from .workflow import AccessDecision, AccessRequest, AccessWorkflow, Preference

__version__ = "0.1.0"

__all__ = [
    "AccessDecision", "AccessRequest", "AccessWorkflow", "BUILTIN_TEMPLATES", "ClosureMode",
    "ContainerMetadata", "Element", "ElementaryModel", "Link", "LinkModel", "ModelMetadata",
    "MultiModelContainer", "MultiModelTemplate", "Preference", "ProcessingStatus", "RegistryStore",
    "Rule", "Violation", "apply_cutout", "apply_template", "build_fact_base", "derive_lod", "infer",
    "match_template", "open_store", "parse_container", "parse_expression", "parse_rule",
    "permitted_actions", "permitted_roles", "reduce_link_model", "serialize_container",
    "validate_container",
]
