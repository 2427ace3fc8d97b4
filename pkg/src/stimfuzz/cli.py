"""Command-line client for the fuzzing service.

All subcommands speak to the HTTP API.  By default the app is mounted
in-process (no server needed); pass --server (or set FUZZ_SERVER) to talk
to a running instance instead, in which case file paths are resolved on
the server host.

Exit codes: 0 success (violations are findings, not failures), 2 invalid
config or request, 1 runtime error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

from .images import load_image

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # no server given: mount the app in-process behind the same HTTP interface
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette deprecation chatter on import
        from fastapi.testclient import TestClient

    from .service.app import app
    return TestClient(app)


def _request(client: httpx.Client, method: str, path: str, payload: dict | None = None,
             params: dict | None = None) -> dict:
    try:
        response = client.request(method, path, json=payload, params=params)
    except httpx.HTTPError as exc:
        click.echo(json.dumps({"error": str(exc), "kind": "transport"}), err=True)
        raise SystemExit(1)
    if response.status_code == 422:
        detail = response.json().get("detail")
        click.echo(json.dumps({"error": detail, "kind": "config"}), err=True)
        raise SystemExit(2)
    if response.status_code >= 400:
        click.echo(json.dumps({"error": response.text, "kind": "runtime"}), err=True)
        raise SystemExit(1)
    return response.json()


@click.group()
@click.option("--server", envvar="FUZZ_SERVER", default=None,
              help="URL of a running service; default runs in-process.")
@click.pass_context
def main(ctx, server):
    """Stress-test stimulation encoders against biophysical safety limits."""
    ctx.obj = server


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", default="campaign_out", type=click.Path())
@click.option("--rng-seed", type=int, default=None,
              help="Overrides FUZZ_RNG_SEED and the config value.")
@click.pass_obj
def run(server, config_path, out_dir, rng_seed):
    """Run one fuzzing campaign from a config file."""
    path = Path(config_path)
    try:
        if path.suffix.lower() == ".json":
            config = json.loads(path.read_text())
        else:
            config = tomllib.loads(path.read_text())
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        click.echo(json.dumps({"error": f"cannot parse {path}: {exc}",
                               "kind": "config"}), err=True)
        raise SystemExit(2)
    if rng_seed is None and os.environ.get("FUZZ_RNG_SEED"):
        rng_seed = int(os.environ["FUZZ_RNG_SEED"])
    with _client(server) as client:
        result = _request(client, "POST", "/campaigns", {
            "config": config, "out_dir": str(out_dir), "rng_seed": rng_seed,
            "base_dir": str(path.parent)})
    report = result["report"]
    click.echo(f"strategy={report['strategy']} tests={report['tests_executed']} "
               f"unique_violations={report['violations']['unique']} "
               f"coverage={report['coverage']['final']:.4f}")
    click.echo(f"report: {Path(out_dir) / 'report.json'}")


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--space", type=click.Choice(["outputs", "neurons", "features"]),
              required=True)
@click.option("--extractor", default="pool8")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.pass_obj
def profile(server, model_path, data_dir, space, extractor, out_path):
    """Profile per-dimension value ranges over a dataset."""
    with _client(server) as client:
        result = _request(client, "POST", "/profile", {
            "model_path": str(model_path), "data_dir": str(data_dir), "space": space,
            "extractor": extractor, "out_path": str(out_path)})
    click.echo(f"profiled {result['dimensions']} {space} dimensions -> {out_path}")


def _load_reports(paths) -> list[dict]:
    reports = []
    for p in paths:
        try:
            reports.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            click.echo(json.dumps({"error": f"cannot read report {p}: {exc}",
                                   "kind": "config"}), err=True)
            raise SystemExit(2)
    return reports


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_obj
def compare(server, reports, out_path):
    """Rank campaign reports by combined violation/diversity score."""
    with _client(server) as client:
        result = _request(client, "POST", "/compare",
                          {"reports": _load_reports(reports)})
    if out_path:
        Path(out_path).write_text(result["csv"])
        click.echo(f"wrote {out_path}")
    else:
        click.echo(result["csv"], nl=False)


@main.command()
@click.argument("reports", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", default=None, type=click.Path())
@click.option("--json-out", "json_path", default=None, type=click.Path())
@click.pass_obj
def breakdown(server, reports, out_path, json_path):
    """Per-model, per-constraint violation counts (same-budget campaigns)."""
    with _client(server) as client:
        result = _request(client, "POST", "/breakdown",
                          {"reports": _load_reports(reports)})
    if json_path:
        Path(json_path).write_text(json.dumps(result["rows"], indent=2, sort_keys=True))
    if out_path:
        Path(out_path).write_text(result["csv"])
        click.echo(f"wrote {out_path}")
    else:
        click.echo(result["csv"], nl=False)


@main.command()
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--image", "image_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--trace", is_flag=True, default=False)
@click.option("--out", "out_path", default=None, type=click.Path())
@click.pass_obj
def forward(server, model_path, image_paths, trace, out_path):
    """Evaluate a model on image files; prints raw outputs and decoded pulses."""
    images = [load_image(p).tolist() for p in image_paths]
    with _client(server) as client:
        result = _request(client, "POST", "/forward", {
            "model_path": str(model_path), "images": images, "trace": trace,
            "decode": True})
    text = json.dumps(result, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(text)


@main.command()
@click.option("--name", required=True)
@click.option("--seed", type=int, default=1)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--with-seeds", is_flag=True, default=False,
              help="Also write seed images and a profiling sweep next to the model.")
@click.pass_obj
def fixture(server, name, seed, out_path, with_seeds):
    """Generate a synthetic planted-violation encoder."""
    with _client(server) as client:
        result = _request(client, "POST", "/fixtures", {
            "name": name, "seed": seed, "out_path": str(out_path),
            "with_seeds": with_seeds})
    click.echo(f"wrote {result['out_path']} ({result['bytes_written']} bytes)")
    if result.get("seed_dir"):
        click.echo(f"seeds: {result['seed_dir']}  profiling: {result['profile_dir']}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8321)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    uvicorn.run("stimfuzz.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
