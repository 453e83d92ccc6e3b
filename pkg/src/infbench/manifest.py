"""Model manifest parsing, validation, and artifact resolution.

A manifest is a YAML document describing a model: identity, framework
constraint, input/output modalities, where the graph lives (with a SHA-256
checksum), and how samples are pre/post-processed. Processing is either a
declarative block of built-in image steps (``steps:``) or external
``preprocess:``/``postprocess:`` sources executed by a worker process
(``worker_launch:``) speaking the frame protocol; exactly one style must be
present.
"""

from __future__ import annotations

import hashlib
import logging
import re
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import yaml
from filelock import FileLock

from .errors import (
    ChecksumFormatError,
    ChecksumMismatch,
    ConstraintParseError,
    FetchError,
    ManifestSyntaxError,
    ValidationError,
)
from .tensor import Ctx, ElementType

logger = logging.getLogger(__name__)

_HEX64_RE = re.compile(r"^[0-9a-fA-F]{64}$")
_VERSION_RE = re.compile(r"^(\d+)\.(\d+)\.(\d+)$")

KNOWN_TOP_LEVEL_KEYS = {
    "name", "version", "task", "framework", "inputs", "outputs",
    "model", "steps", "preprocess", "postprocess", "worker_launch", "ctx",
}

STEP_NAMES = ("decode", "crop", "resize", "mean", "rescale", "layout")


@dataclass(frozen=True)
class FrameworkSpec:
    name: str
    version_constraint: str


@dataclass(frozen=True)
class IoSpec:
    modality: str
    element_type: ElementType


@dataclass(frozen=True)
class ModelSource:
    graph_path: str
    graph_checksum: str


@dataclass(frozen=True)
class StepSpec:
    name: str
    params: dict


@dataclass(frozen=True)
class ExternalProcessing:
    preprocess_source: str
    postprocess_source: str
    worker_launch: str


@dataclass(frozen=True)
class ProcessingSpec:
    built_in: tuple[StepSpec, ...] | None = None
    external: ExternalProcessing | None = None

    @property
    def kind(self) -> str:
        return "built_in" if self.built_in is not None else "external"


@dataclass(frozen=True)
class Manifest:
    name: str
    version: str
    framework: FrameworkSpec
    inputs: tuple[IoSpec, ...]
    outputs: tuple[IoSpec, ...]
    model_source: ModelSource
    processing: ProcessingSpec
    task: str | None = None
    extra_ctx: tuple[tuple[str, str], ...] = field(default=())


# --- version constraints ------------------------------------------------------

Version = tuple[int, int, int]


def parse_version(text: str) -> Version:
    """Parse a strict MAJOR.MINOR.PATCH version."""
    m = _VERSION_RE.match(str(text).strip())
    if not m:
        raise ConstraintParseError(f"version {text!r} is not MAJOR.MINOR.PATCH")
    return (int(m.group(1)), int(m.group(2)), int(m.group(3)))


def _parse_caret_floor(body: str) -> tuple[int, Version]:
    parts = body.split(".")
    if len(parts) not in (2, 3):
        raise ConstraintParseError(f"caret constraint ^{body} needs 2 or 3 components")
    if not parts[0].isdigit():
        raise ConstraintParseError(f"caret constraint ^{body} needs a numeric major")
    nums = []
    for p in parts:
        if p.isdigit():
            nums.append(int(p))
        elif p in ("x", "X"):
            nums.append(0)  # wildcard floors to 0
        else:
            raise ConstraintParseError(f"bad component {p!r} in caret constraint ^{body}")
    while len(nums) < 3:
        nums.append(0)
    return int(parts[0]), (nums[0], nums[1], nums[2])


def parse_constraint(text: str):
    """Parse a framework version constraint.

    Supported forms: exact ``X.Y.Z``, caret ``^X.x`` / ``^X.Y.Z`` (same major,
    at least the floor), comparator ``>=X.Y.Z``. Anything else is rejected.
    """
    text = str(text).strip()
    if text.startswith("^"):
        major, floor = _parse_caret_floor(text[1:])
        return ("caret", major, floor)
    if text.startswith(">="):
        return ("gte", parse_version(text[2:].strip()))
    if _VERSION_RE.match(text):
        return ("exact", parse_version(text))
    raise ConstraintParseError(f"unsupported constraint syntax {text!r}")


def matches_constraint(constraint: str, version: str) -> bool:
    """True iff the version satisfies the constraint expression."""
    parsed = parse_constraint(constraint)
    v = parse_version(version)
    if parsed[0] == "exact":
        return v == parsed[1]
    if parsed[0] == "gte":
        return v >= parsed[1]
    _, major, floor = parsed
    return v[0] == major and v >= floor


# --- checksums and artifact resolution ----------------------------------------

def verify_checksum(content: bytes, expected: str) -> bool:
    """True iff SHA-256(content) equals the expected 64-char hex digest."""
    if not _HEX64_RE.match(expected or ""):
        raise ChecksumFormatError(
            f"expected checksum must be 64 hex chars, got {len(expected or '')}"
        )
    return hashlib.sha256(content).hexdigest() == expected.lower()


def _default_fetcher(url: str) -> bytes:
    try:
        with urllib.request.urlopen(url) as resp:
            return resp.read()
    except Exception as e:
        raise FetchError(f"failed to fetch {url}: {e}") from e


def resolve_model_source(
    source: ModelSource,
    cache_dir: str | Path,
    fetcher: Callable[[str], bytes] | None = None,
    base_dir: str | Path | None = None,
) -> Path:
    """Make the model graph available locally and verify its checksum.

    Local paths are verified in place and returned as-is (relative paths
    resolve against ``base_dir``). URLs are fetched once into ``cache_dir``,
    keyed by checksum; later calls reuse the cached copy without touching the
    network. Cache writes are serialized with a per-path lock file.
    """
    path_str = source.graph_path
    if path_str.startswith("file://"):
        path_str = path_str[len("file://"):]
    is_url = bool(re.match(r"^https?://", path_str))

    if not is_url:
        path = Path(path_str)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        if not path.is_file():
            raise FetchError(f"model source {path} does not exist")
        if not verify_checksum(path.read_bytes(), source.graph_checksum):
            raise ChecksumMismatch(f"{path} does not match declared checksum")
        return path

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cached = cache_dir / f"{source.graph_checksum.lower()}.bin"
    with FileLock(str(cached) + ".lock"):
        if cached.is_file():
            if not verify_checksum(cached.read_bytes(), source.graph_checksum):
                raise ChecksumMismatch(f"cached copy {cached} is corrupt")
            return cached
        content = (fetcher or _default_fetcher)(path_str)
        if not verify_checksum(content, source.graph_checksum):
            raise ChecksumMismatch(f"downloaded {path_str} does not match declared checksum")
        tmp = cached.with_suffix(".tmp")
        tmp.write_bytes(content)
        tmp.replace(cached)
    return cached


# --- parsing -------------------------------------------------------------------

def _require(doc: dict, key: str):
    if key not in doc or doc[key] is None:
        raise ValidationError(f"missing required field {key!r}")
    return doc[key]


def _parse_io_list(raw, which: str) -> tuple[IoSpec, ...]:
    if not isinstance(raw, list) or not raw:
        raise ValidationError(f"{which} must be a non-empty list")
    specs = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise ValidationError(f"{which}[{i}] must be a mapping")
        modality = entry.get("type")
        if not modality or not isinstance(modality, str):
            raise ValidationError(f"{which}[{i}].type missing")
        try:
            et = ElementType.from_name(str(entry.get("element_type")))
        except ValueError as e:
            raise ValidationError(f"{which}[{i}].element_type: {e}") from None
        specs.append(IoSpec(modality, et))
    return tuple(specs)


def _validate_step(name: str, value) -> StepSpec:
    if name == "decode":
        params = dict(value or {})
        et = params.get("element_type", "uint8")
        if et not in ("uint8", "int8"):
            raise ValidationError(f"decode.element_type must be uint8 or int8, got {et!r}")
        if params.get("data_layout", "NHWC") not in ("NHWC", "NCHW"):
            raise ValidationError("decode.data_layout must be NHWC or NCHW")
        if params.get("color_layout", "RGB") not in ("RGB", "BGR"):
            raise ValidationError("decode.color_layout must be RGB or BGR")
        return StepSpec(name, params)
    if name == "crop":
        params = dict(value or {})
        if params.get("method", "center") != "center":
            raise ValidationError(f"crop.method {params.get('method')!r} is not supported")
        pct = params.get("percentage")
        if not isinstance(pct, (int, float)) or not (0 < pct <= 100):
            raise ValidationError(f"crop.percentage must be in (0, 100], got {pct!r}")
        return StepSpec(name, params)
    if name == "resize":
        params = dict(value or {})
        dims = params.get("dimensions")
        if (not isinstance(dims, list) or len(dims) not in (2, 3)
                or not all(isinstance(d, int) and d > 0 for d in dims)):
            raise ValidationError(
                f"resize.dimensions must be 2 or 3 positive integers, got {dims!r}"
            )
        if params.get("method", "bilinear") != "bilinear":
            raise ValidationError(f"resize.method {params.get('method')!r} is not supported")
        if not isinstance(params.get("keep_aspect_ratio", False), bool):
            raise ValidationError("resize.keep_aspect_ratio must be a boolean")
        return StepSpec(name, params)
    if name == "mean":
        if (not isinstance(value, list) or not value
                or not all(isinstance(v, (int, float)) for v in value)):
            raise ValidationError(f"mean must be a non-empty list of numbers, got {value!r}")
        return StepSpec(name, {"values": [float(v) for v in value]})
    if name == "rescale":
        if not isinstance(value, (int, float)) or value == 0:
            raise ValidationError(f"rescale must be a non-zero number, got {value!r}")
        return StepSpec(name, {"value": float(value)})
    if name == "layout":
        if value not in ("NHWC", "NCHW"):
            raise ValidationError(f"layout must be NHWC or NCHW, got {value!r}")
        return StepSpec(name, {"value": value})
    raise ValidationError(f"unknown step {name!r}")


def _parse_processing(doc: dict) -> ProcessingSpec:
    has_steps = "steps" in doc
    has_external = "preprocess" in doc or "postprocess" in doc or "worker_launch" in doc
    if has_steps and has_external:
        raise ValidationError("manifest declares both built-in steps and external processing")
    if not has_steps and not has_external:
        raise ValidationError("manifest declares neither built-in steps nor external processing")
    if has_steps:
        raw = doc["steps"] or {}
        if not isinstance(raw, dict):
            raise ValidationError("steps must be a mapping")
        steps = tuple(_validate_step(name, value) for name, value in raw.items())
        return ProcessingSpec(built_in=steps)
    for key in ("preprocess", "postprocess", "worker_launch"):
        if not isinstance(doc.get(key), str) or not doc.get(key).strip():
            raise ValidationError(f"external processing requires a non-empty {key!r}")
    return ProcessingSpec(external=ExternalProcessing(
        preprocess_source=doc["preprocess"],
        postprocess_source=doc["postprocess"],
        worker_launch=doc["worker_launch"],
    ))


def parse_manifest(text: str) -> Manifest:
    """Parse and fully validate a manifest document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ManifestSyntaxError(f"malformed manifest: {e}") from e
    if not isinstance(doc, dict):
        raise ManifestSyntaxError("manifest must be a non-empty mapping document")

    for key in doc:
        if key not in KNOWN_TOP_LEVEL_KEYS:
            logger.warning("ignoring unknown manifest key %r", key)

    name = _require(doc, "name")
    if not isinstance(name, str) or not name.strip():
        raise ValidationError("name must be a non-empty string")
    version = str(_require(doc, "version"))
    try:
        parse_version(version)
    except ConstraintParseError as e:
        raise ValidationError(str(e)) from None

    fw_raw = _require(doc, "framework")
    if not isinstance(fw_raw, dict) or not fw_raw.get("name"):
        raise ValidationError("framework.name missing")
    constraint = str(_require(fw_raw, "version"))
    try:
        parse_constraint(constraint)
    except ConstraintParseError as e:
        raise ValidationError(f"framework.version: {e}") from None
    framework = FrameworkSpec(str(fw_raw["name"]), constraint)

    inputs = _parse_io_list(_require(doc, "inputs"), "inputs")
    outputs = _parse_io_list(_require(doc, "outputs"), "outputs")

    model_raw = _require(doc, "model")
    if not isinstance(model_raw, dict):
        raise ValidationError("model must be a mapping")
    graph_path = _require(model_raw, "graph_path")
    checksum = str(_require(model_raw, "graph_checksum"))
    if not _HEX64_RE.match(checksum):
        raise ValidationError(
            f"model.graph_checksum must be 64 hex chars, got {len(checksum)}"
        )
    model_source = ModelSource(str(graph_path), checksum.lower())

    processing = _parse_processing(doc)

    extra_ctx = ()
    if "ctx" in doc and doc["ctx"] is not None:
        if not isinstance(doc["ctx"], dict):
            raise ValidationError("ctx must be a mapping of strings")
        extra_ctx = tuple((str(k), str(v)) for k, v in doc["ctx"].items())

    task = doc.get("task")
    return Manifest(
        name=name,
        version=version,
        framework=framework,
        inputs=inputs,
        outputs=outputs,
        model_source=model_source,
        processing=processing,
        task=str(task) if task is not None else None,
        extra_ctx=extra_ctx,
    )


def load_manifest(path: str | Path) -> Manifest:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def manifest_to_dict(m: Manifest) -> dict:
    """Plain-dict view with canonical key order, suitable for YAML dumping."""
    doc: dict = {
        "name": m.name,
        "version": m.version,
    }
    if m.task is not None:
        doc["task"] = m.task
    doc["framework"] = {"name": m.framework.name, "version": m.framework.version_constraint}
    doc["inputs"] = [
        {"type": io.modality, "element_type": io.element_type.name} for io in m.inputs
    ]
    doc["outputs"] = [
        {"type": io.modality, "element_type": io.element_type.name} for io in m.outputs
    ]
    doc["model"] = {
        "graph_path": m.model_source.graph_path,
        "graph_checksum": m.model_source.graph_checksum,
    }
    if m.processing.built_in is not None:
        steps = {}
        for step in m.processing.built_in:
            if step.name == "mean":
                steps["mean"] = list(step.params["values"])
            elif step.name in ("rescale", "layout"):
                steps[step.name] = step.params["value"]
            else:
                steps[step.name] = dict(step.params)
        doc["steps"] = steps
    else:
        ext = m.processing.external
        doc["preprocess"] = ext.preprocess_source
        doc["postprocess"] = ext.postprocess_source
        doc["worker_launch"] = ext.worker_launch
    if m.extra_ctx:
        doc["ctx"] = {k: v for k, v in m.extra_ctx}
    return doc


def serialize_manifest(m: Manifest) -> str:
    """Canonical YAML re-serialization; parse(serialize(m)) equals m."""
    return yaml.safe_dump(manifest_to_dict(m), sort_keys=False)


def build_ctx(m: Manifest) -> Ctx:
    """Derive the hook context passed to processing from the manifest."""
    ctx: Ctx = {"model_name": m.name, "model_version": m.version}
    for k, v in m.extra_ctx:
        ctx[k] = v
    if m.processing.external is not None:
        ctx["preprocess_source"] = m.processing.external.preprocess_source
        ctx["postprocess_source"] = m.processing.external.postprocess_source
    return ctx
