"""Exception hierarchy shared by all mmcvo modules.

Every error carries a machine-readable ``code`` (the class name) so the HTTP
and CLI layers can report it without a lookup table.
"""
from __future__ import annotations


class MMCError(Exception):
    """Base class for all mmcvo errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# container format

class MalformedArchive(MMCError):
    pass


class MissingMetadata(MMCError):
    pass


class SchemaError(MMCError):
    pass


class ValidationFailed(MMCError):
    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"container invalid: {lines}")


# filtering

class MissingModel(MMCError):
    def __init__(self, model_type: str):
        self.model_type = model_type
        super().__init__(f"required model type {model_type!r} absent")


class InsufficientLOD(MMCError):
    def __init__(self, model_type: str, have: float, need: float):
        self.model_type, self.have, self.need = model_type, have, need
        super().__init__(f"{model_type}: lod {have} below required {need}")


class InsufficientStatus(MMCError):
    def __init__(self, model_type: str, have, need):
        self.model_type, self.have, self.need = model_type, have, need
        super().__init__(f"{model_type}: status {have} below required {need}")


class CannotRefine(MMCError):
    pass


class OpaqueModel(MMCError):
    pass


class OpaqueOnlyContainer(UserWarning):
    """Warning: a cut-out predicate found nothing it could filter."""


class ExpressionError(MMCError):
    pass


# access control

class UnknownEntity(MMCError):
    pass


class UnsafeRule(MMCError):
    pass


class RuleSyntaxError(MMCError):
    pass


class NoPermittedRole(MMCError):
    pass


class AccessNotPermitted(MMCError):
    pass


class ModelUnresolvable(MMCError):
    pass


# registry

class DuplicateName(MMCError):
    pass


class StorageFailure(MMCError):
    pass


class NotFound(MMCError):
    pass
