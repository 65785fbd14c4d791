"""``mmc`` command-line tool.

Exit status: 0 success, 1 validation/filter/usage errors, 2 access denied.
"""
from __future__ import annotations

import os
import sys
from pathlib import Path

import click

from .container import parse_container, serialize_container
from .errors import MMCError, ValidationFailed
from .filters import (
    BUILTIN_TEMPLATES,
    ClosureMode,
    apply_cutout,
    apply_model_lod,
    apply_template,
    load_template,
    parse_expression,
)

EXIT_OK, EXIT_ERROR, EXIT_DENIED = 0, 1, 2


def _fail(exc: Exception, status: int = EXIT_ERROR):
    code = exc.code if isinstance(exc, MMCError) else type(exc).__name__
    click.echo(f"error: {code}: {exc}", err=True)
    sys.exit(status)


def _read_container(path: str):
    try:
        return parse_container(Path(path).read_bytes())
    except (MMCError, OSError) as exc:
        _fail(exc)


def _write_container(container, path: str) -> None:
    Path(path).write_bytes(serialize_container(container))


@click.group()
def main():
    """Multi-model container filtering and context-sensitive access control."""


@main.command()
@click.argument("mmc", type=click.Path(exists=True, dir_okay=False))
def validate(mmc):
    """Check a container archive; list every violation."""
    try:
        parse_container(Path(mmc).read_bytes())
    except ValidationFailed as exc:
        for v in exc.violations:
            click.echo(str(v))
        sys.exit(EXIT_ERROR)
    except MMCError as exc:
        _fail(exc)
    click.echo("valid")


@main.group()
def filter():
    """Produce a model view or cut-out from a container."""


@filter.command("template")
@click.option("--template", "template_ref", required=True,
              help="Template XML file or a built-in template name.")
@click.option("--downscale", is_flag=True, help="Coarsen finer models to the required LOD.")
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
def filter_template(template_ref, downscale, src, dst):
    if os.path.isfile(template_ref):
        try:
            template = load_template(Path(template_ref).read_bytes())
        except MMCError as exc:
            _fail(exc)
    elif template_ref in BUILTIN_TEMPLATES:
        template = BUILTIN_TEMPLATES[template_ref]
    else:
        _fail(FileNotFoundError(f"no template file or built-in named {template_ref!r}"))
    container = _read_container(src)
    try:
        _write_container(apply_template(container, template, downscale=downscale), dst)
    except MMCError as exc:
        _fail(exc)


@filter.command("cutout")
@click.option("--where", "expr", required=True, help="Predicate, e.g. 'floor=1 & lod<=0.5'.")
@click.option("--closure", type=click.Choice([m.value for m in ClosureMode]), default="none",
              show_default=True)
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
def filter_cutout(expr, closure, src, dst):
    try:
        predicate = parse_expression(expr)
    except MMCError as exc:
        _fail(exc)
    container = _read_container(src)
    try:
        _write_container(apply_cutout(container, predicate, ClosureMode(closure)), dst)
    except MMCError as exc:
        _fail(exc)


@main.command()
@click.option("--target", type=float, required=True, help="Target level of detail.")
@click.option("--model", "model_id", required=True, help="Id of the model to coarsen.")
@click.argument("src", type=click.Path(exists=True, dir_okay=False))
@click.argument("dst", type=click.Path(dir_okay=False))
def lod(target, model_id, src, dst):
    """Derive a coarser level of detail for one model."""
    container = _read_container(src)
    try:
        _write_container(apply_model_lod(container, model_id, target), dst)
    except (MMCError, ValueError) as exc:
        _fail(exc)


def _store_option(f):
    return click.option("--store", "store_root", envvar="MMC_STORE", required=True,
                        type=click.Path(file_okay=False),
                        help="Registry store root (default: $MMC_STORE).")(f)


@main.command()
@_store_option
@click.option("--actor", required=True)
@click.option("--task", required=True)
@click.option("--object", "object_ref", required=True)
@click.option("--action", default="Read", show_default=True)
@click.option("--context", "context", multiple=True, metavar="K=V")
@click.option("--preference", type=click.Choice(["Strict", "Permissive"]), default="Strict",
              show_default=True)
@click.option("--out", "out", type=click.Path(dir_okay=False),
              help="Also fulfil the request and write the container here.")
def decide(store_root, actor, task, object_ref, action, context, preference, out):
    """Evaluate an access request and print the decision as XML."""
    from .store import open_store
    from .workflow import AccessRequest, AccessWorkflow, Preference, decision_to_xml

    ctx = {}
    for item in context:
        key, sep, value = item.partition("=")
        if not sep:
            _fail(ValueError(f"--context expects K=V, got {item!r}"))
        ctx[key] = value
    try:
        workflow = AccessWorkflow(open_store(store_root, create=False))
        request = AccessRequest(actor, task, object_ref, action, ctx, Preference(preference))
        decision = workflow.decide_access(request)
        click.echo(decision_to_xml(decision).decode("utf-8"))
        if not decision.granted:
            sys.exit(EXIT_DENIED)
        if out:
            Path(out).write_bytes(workflow.fulfill_archive(request, decision))
    except MMCError as exc:
        from .errors import AccessNotPermitted
        _fail(exc, EXIT_DENIED if isinstance(exc, AccessNotPermitted) else EXIT_ERROR)


@main.command()
@_store_option
@click.option("--port", type=int, default=8080, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve(store_root, port, host):
    """Run the HTTP service."""
    import uvicorn

    from .api import create_app

    uvicorn.run(create_app(store_root), host=host, port=port)


@main.command()
@_store_option
def seed(store_root):
    """Populate a store with the demo VO, built-in templates and the tower container."""
    from .demo import seed_store
    from .store import open_store

    try:
        seed_store(open_store(store_root))
    except MMCError as exc:
        _fail(exc)
    click.echo(f"seeded {store_root}")


@main.command()
@click.option("--out", "out", required=True, type=click.Path(dir_okay=False))
def fixture(out):
    """Write the demo five-model container archive."""
    from .demo import five_model_container

    _write_container(five_model_container(), out)


if __name__ == "__main__":
    main()
