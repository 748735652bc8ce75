"""Exact serialization: genotype JSON documents, DOT export, checkpoints.

Genotypes travel as canonical JSON (sorted keys, two-space indent, one
trailing newline) so equal genotypes always serialize to identical bytes.
Checkpoints are a one-line header, a JSON manifest of named shapes, and a
raw little-endian float64 payload, preserving every bit of the values.
"""

from __future__ import annotations

import json
from collections import OrderedDict

import numpy as np

from .pruning import Genotype
from .topology import NORMAL, REDUCTION, build_topology, op_set_from_names
from .transition import CellArchParams

__all__ = [
    "SCHEMA_VERSION",
    "GenotypeFormatError",
    "CheckpointError",
    "genotype_to_doc",
    "doc_to_genotype",
    "serialize_genotype",
    "parse_genotype",
    "validate_doc",
    "validate_genotype",
    "to_dot",
    "save_checkpoint",
    "load_checkpoint",
    "save_arch_checkpoint",
    "load_arch_checkpoint",
    "save_weights_checkpoint",
    "load_weights_checkpoint",
]

SCHEMA_VERSION = 1
_CKPT_MAGIC = b"CKPT1"


class GenotypeFormatError(ValueError):
    """Genotype document is malformed; ``errors`` lists each violation."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class CheckpointError(ValueError):
    """Checkpoint bytes do not follow the manifest + payload layout."""


# ---------------------------------------------------------------------------
# genotype documents
# ---------------------------------------------------------------------------


def genotype_to_doc(g: Genotype) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "normal": [[[src, op] for src, op in pairs] for pairs in g.normal],
        "reduction": [[[src, op] for src, op in pairs] for pairs in g.reduction],
        "op_set": {"name": g.op_set.name, "ops": list(g.op_set.names)},
        "provenance": g.provenance_dict,
    }


def serialize_genotype(g: Genotype) -> bytes:
    """Canonical bytes: identical genotypes produce identical documents."""
    doc = genotype_to_doc(g)
    return (json.dumps(doc, sort_keys=True, indent=2) + "\n").encode("utf-8")


def validate_doc(doc) -> list[str]:
    """All structural violations in a parsed genotype document (empty = ok)."""
    errors: list[str] = []
    if not isinstance(doc, dict):
        return [f"document is not an object (got {type(doc).__name__})"]
    if doc.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"unsupported schema_version {doc.get('schema_version')!r}")

    ops_field = doc.get("op_set")
    op_names: list[str] = []
    if not isinstance(ops_field, dict) or not isinstance(ops_field.get("ops"), list):
        errors.append("op_set must be an object with an 'ops' name list")
    else:
        op_names = [str(o) for o in ops_field["ops"]]
        try:
            op_set_from_names(op_names, set_name=str(ops_field.get("name", "custom")))
        except ValueError as exc:
            errors.append(str(exc))

    for kind in (NORMAL, REDUCTION):
        half = doc.get(kind)
        if not isinstance(half, list) or len(half) != 4:
            errors.append(f"{kind}: expected 4 node entries")
            continue
        for idx, pairs in enumerate(half):
            node = idx + 2
            if not isinstance(pairs, list) or len(pairs) != 2:
                errors.append(f"{kind} node {node}: expected exactly 2 (source, op) pairs")
                continue
            sources = []
            for pair in pairs:
                if not (isinstance(pair, list) and len(pair) == 2):
                    errors.append(f"{kind} node {node}: malformed pair {pair!r}")
                    continue
                src, op = pair
                if not isinstance(src, int) or isinstance(src, bool):
                    errors.append(f"{kind} node {node}: source {src!r} is not an integer")
                    continue
                if not 0 <= src < node:
                    errors.append(
                        f"{kind} node {node}: source {src} on edge ({src},{node}) "
                        f"must satisfy 0 <= source < {node}"
                    )
                sources.append(src)
                if op_names and op not in op_names:
                    errors.append(f"{kind} node {node}: unknown operation {op!r}")
            if len(sources) == 2 and sources[0] == sources[1]:
                errors.append(f"{kind} node {node}: duplicate source {sources[0]}")
    return errors


def validate_genotype(g: Genotype) -> list[str]:
    return validate_doc(genotype_to_doc(g))


def doc_to_genotype(doc) -> Genotype:
    errors = validate_doc(doc)
    if errors:
        raise GenotypeFormatError(errors)
    ops_field = doc["op_set"]
    op_set = op_set_from_names([str(o) for o in ops_field["ops"]], set_name=str(ops_field["name"]))
    halves = {
        kind: tuple(tuple((int(s), str(o)) for s, o in pairs) for pairs in doc[kind])
        for kind in (NORMAL, REDUCTION)
    }
    return Genotype.make(halves[NORMAL], halves[REDUCTION], op_set, dict(doc.get("provenance", {})))


def parse_genotype(data) -> Genotype:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GenotypeFormatError([f"invalid JSON: {exc}"]) from exc
    return doc_to_genotype(doc)


# ---------------------------------------------------------------------------
# DOT export
# ---------------------------------------------------------------------------

_DOT_INPUTS = {0: "c_{k-2}", 1: "c_{k-1}"}


def _dot_node_name(src: int) -> str:
    return _DOT_INPUTS.get(src, str(src - 2))


def to_dot(g: Genotype, kind: str) -> str:
    """DOT text for one cell kind: inputs, four intermediates, concat output."""
    if kind not in (NORMAL, REDUCTION):
        raise ValueError(f"kind must be normal or reduction, got {kind!r}")
    choices = g.for_kind(kind)
    lines = [
        f"digraph {kind} {{",
        "  rankdir=LR;",
        '  "c_{k-2}" [shape=box];',
        '  "c_{k-1}" [shape=box];',
    ]
    for i in range(4):
        lines.append(f'  "{i}" [shape=circle];')
    lines.append('  "c_k" [shape=box];')
    for idx, pairs in enumerate(choices):
        for src, op in pairs:
            lines.append(f'  "{_dot_node_name(src)}" -> "{idx}" [label="{op}"];')
    for i in range(4):
        lines.append(f'  "{i}" -> "c_k" [label="concat"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints: text manifest + little-endian float64 payload
# ---------------------------------------------------------------------------


def save_checkpoint(path, entries, meta: dict | None = None) -> None:
    """Write named float64 arrays with a JSON manifest; bit-exact round trip."""
    entries = [(str(n), np.asarray(a, dtype=np.float64)) for n, a in entries]
    manifest = {
        "version": 1,
        "meta": meta or {},
        "entries": [{"name": n, "shape": list(a.shape)} for n, a in entries],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + b" " + str(len(blob)).encode("ascii") + b"\n")
        fh.write(blob)
        for _, a in entries:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    with open(path, "rb") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2 or parts[0] != _CKPT_MAGIC:
            raise CheckpointError(f"{path}: bad checkpoint header {header!r}")
        try:
            manifest_len = int(parts[1])
        except ValueError as exc:
            raise CheckpointError(f"{path}: bad manifest length {parts[1]!r}") from exc
        blob = fh.read(manifest_len)
        if len(blob) != manifest_len:
            raise CheckpointError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for entry in manifest.get("entries", []):
            shape = tuple(int(s) for s in entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
            out[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after payload")
    return out, manifest.get("meta", {})


def save_arch_checkpoint(path, arch, meta: dict | None = None) -> None:
    """Checkpoint both cell kinds' architecture parameters."""
    entries = [(name, t.values) for name, t in arch.named_tensors()]
    save_checkpoint(path, entries, meta)


def load_arch_checkpoint(path):
    """Rebuild ArchParams (gradient-enabled) from a checkpoint; returns (arch, meta)."""
    from .search import ArchParams
    from .topology import Edge

    arrays, meta = load_checkpoint(path)
    topology = build_topology()
    halves = {}
    for kind in (NORMAL, REDUCTION):
        outer, transition, attention = {}, {}, {}
        k = None
        for name, values in arrays.items():
            if not name.startswith(kind + "/"):
                continue
            _, group, key = name.split("/")
            from .autodiff import Tensor

            t = Tensor(values, requires_grad=True)
            nums = [int(p) for p in key.split("-")]
            if group == "outer":
                outer[Edge(*nums)] = t
                k = values.shape[0]
            elif group == "transition":
                transition[tuple(nums)] = t
            elif group == "attention":
                attention[Edge(*nums)] = t
            else:
                raise CheckpointError(f"{path}: unknown parameter group {group!r}")
        if k is None:
            raise CheckpointError(f"{path}: no outer logits for kind {kind!r}")
        halves[kind] = CellArchParams(
            k=k, outer=outer, transition=transition, attention=attention
        )
        expected = len(topology.outer), len(topology.inner)
        if (len(halves[kind].outer), len(halves[kind].attention)) != expected:
            raise CheckpointError(f"{path}: incomplete parameter set for {kind!r}")
    return ArchParams(normal=halves[NORMAL], reduction=halves[REDUCTION]), meta


def save_weights_checkpoint(path, net, meta: dict | None = None) -> None:
    save_checkpoint(path, [(n, t.values) for n, t in net.parameters()], meta)


def load_weights_checkpoint(path, net) -> dict:
    """Load values into an existing network's parameters; returns the meta dict."""
    arrays, meta = load_checkpoint(path)
    for name, t in net.parameters():
        if name not in arrays:
            raise CheckpointError(f"{path}: missing parameter {name!r}")
        if arrays[name].shape != t.values.shape:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {t.values.shape}"
            )
        t.values = arrays[name]
    return meta
