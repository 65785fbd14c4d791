"""HTTP interface over the registry store and the access workflow.

All request and response bodies are XML except container archives, which
travel as raw ``application/zip`` bodies.
"""
from __future__ import annotations

import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import Response

from .container import (
    ModelMetadata,
    ProcessingStatus,
    fmt_time,
    model_metadata_to_xml,
    parse_container,
    xml_bytes,
)
from .errors import (
    AccessNotPermitted,
    DuplicateName,
    MMCError,
    ModelUnresolvable,
    NoPermittedRole,
    NotFound,
    StorageFailure,
    UnknownEntity,
)
from .filters import dump_template, load_template
from .ontology import dump_entity, entity_to_xml, load_entity
from .store import VO_KINDS, RegistryStore, open_store
from .workflow import AccessWorkflow, decision_to_xml, request_from_xml

XML = "application/xml"
ZIP = "application/zip"
TEMPLATE_HEADER = "X-MMC-Template"
ROLE_HEADER = "X-MMC-Role"
DEFAULT_PORT = 8080

_STATUS = [
    (DuplicateName, 409),
    ((NotFound, UnknownEntity, ModelUnresolvable), 404),
    ((AccessNotPermitted, NoPermittedRole), 403),
    (StorageFailure, 500),
]

_VO_PATHS = {"actors": "actors", "roles": "roles", "permissions": "permissions",
             "resources": "resources", "rules": "restrictions"}


@dataclass(frozen=True)
class ApiError:
    status: int
    code: str
    message: str

    def response(self) -> Response:
        root = ET.Element("Error", status=str(self.status), code=self.code)
        root.text = self.message
        return Response(xml_bytes(root), status_code=self.status, media_type=XML)

    @classmethod
    def from_exception(cls, exc: Exception) -> "ApiError":
        if isinstance(exc, MMCError):
            status = next((s for kinds, s in _STATUS if isinstance(exc, kinds)), 400)
            return cls(status, exc.code, str(exc))
        if isinstance(exc, (ValueError, KeyError, TypeError)):
            return cls(400, "MalformedRequest", str(exc))
        return cls(500, "StorageFailure", str(exc))


def _xml(data: bytes, status: int = 200, headers: Optional[dict] = None) -> Response:
    return Response(data, status_code=status, media_type=XML, headers=headers)


def _listing(tag: str, items) -> Response:
    root = ET.Element(tag)
    root.extend(items)
    return _xml(xml_bytes(root))


def model_entry_xml(entry) -> ET.Element:
    node = model_metadata_to_xml(entry.metadata, "ModelEntry")
    node.set("payload", entry.payload_location)
    node.set("registered", fmt_time(entry.registered_at))
    node.set("uploader", entry.uploader)
    return node


def create_app(store) -> FastAPI:
    """Build the service; ``store`` is a :class:`RegistryStore` or a store root path."""
    if not isinstance(store, RegistryStore):
        store = open_store(store)
    workflow = AccessWorkflow(store)
    app = FastAPI(title="mmcvo")
    app.state.store = store
    app.state.workflow = workflow

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return ApiError.from_exception(exc).response()

    @app.exception_handler(MMCError)
    async def _mmc_error(request: Request, exc: MMCError):
        return ApiError.from_exception(exc).response()

    # -- access --------------------------------------------------------------

    @app.post("/access/requests")
    async def access_request(request: Request):
        body = await request.body()
        try:
            req = request_from_xml(body)
        except MMCError as exc:
            return ApiError(400, "MalformedRequest", str(exc)).response()
        if not workflow.object_known(req.object_ref):
            return ApiError(404, "UnknownEntity", f"unknown object {req.object_ref!r}").response()
        decision = workflow.decide_access(req)
        if not decision.granted:
            return _xml(decision_to_xml(decision), 403)
        archive = workflow.fulfill_archive(req, decision)
        return Response(archive, media_type=ZIP, headers={
            TEMPLATE_HEADER: decision.applied_template or "",
            ROLE_HEADER: decision.active_role or "",
        })

    @app.post("/decisions")
    async def dry_run(request: Request):
        try:
            req = request_from_xml(await request.body())
        except MMCError as exc:
            return ApiError(400, "MalformedRequest", str(exc)).response()
        return _xml(decision_to_xml(workflow.decide_access(req)))

    # -- templates -----------------------------------------------------------

    @app.post("/registry/templates")
    async def post_template(request: Request):
        template = load_template(await request.body())
        store.register_template(template)
        return _xml(dump_template(template), 201)

    @app.get("/registry/templates")
    def list_templates():
        return _listing("Templates", [ET.fromstring(dump_template(t)) for t in store.list_templates()])

    @app.get("/registry/templates/{name}")
    def get_template(name: str):
        return _xml(dump_template(store.get_template(name)))

    # -- models and containers -------------------------------------------------

    @app.post("/registry/models")
    async def post_model(request: Request, id: str, type: str, lod: float,
                         status: str = "Draft", format: Optional[str] = None,
                         structured: bool = True, uploader: str = ""):
        meta_kwargs = dict(model_id=id, model_type=type, lod=lod,
                           processing_status=ProcessingStatus.parse(status), structured=structured)
        if format is not None:
            meta_kwargs["format"] = format
        store.register_model(ModelMetadata(**meta_kwargs), await request.body(), uploader)
        return _xml(xml_bytes(model_entry_xml(store.get_model_entry(id))), 201)

    @app.get("/registry/models")
    def list_models():
        return _listing("Models", [model_entry_xml(e) for e in store.list_models()])

    @app.get("/registry/models/{model_id}")
    def get_model(model_id: str):
        return _xml(xml_bytes(model_entry_xml(store.get_model_entry(model_id))))

    @app.get("/registry/models/{model_id}/payload")
    def get_model_payload(model_id: str):
        return Response(store.model_payload(model_id), media_type="application/octet-stream")

    @app.post("/registry/containers")
    async def post_container(request: Request, uploader: str = ""):
        container = parse_container(await request.body())
        store.register_container(container, uploader)
        return _xml(xml_bytes(ET.Element("Container", id=container.container_id)), 201)

    @app.get("/registry/containers/{container_id}")
    def get_container(container_id: str):
        return Response(store.container_archive(container_id), media_type=ZIP)

    # -- VO entities -----------------------------------------------------------

    def _vo_routes(path: str, kind: str):
        cls = next(c for c, k in VO_KINDS.items() if k == kind)

        async def post(request: Request):
            entity = load_entity(await request.body())
            if not isinstance(entity, cls):
                return ApiError(400, "MalformedRequest",
                                f"/vo/{path} expects <{cls.__name__}>").response()
            store.put_entity(entity)
            return _xml(dump_entity(entity), 201)

        def list_all():
            return _listing(kind.capitalize(), [entity_to_xml(e) for e in store.list_entities(kind)])

        def get_one(ident: str):
            return _xml(dump_entity(store.get_entity(kind, ident)))

        app.add_api_route(f"/vo/{path}", post, methods=["POST"])
        app.add_api_route(f"/vo/{path}", list_all, methods=["GET"])
        app.add_api_route(f"/vo/{path}/{{ident}}", get_one, methods=["GET"])

    for path, kind in _VO_PATHS.items():
        _vo_routes(path, kind)

    return app


def app_from_env() -> FastAPI:
    """Factory for ``uvicorn --factory``; reads the store root from ``MMC_STORE``."""
    root = os.environ.get("MMC_STORE")
    if not root:
        raise StorageFailure("MMC_STORE is not set")
    return create_app(root)
