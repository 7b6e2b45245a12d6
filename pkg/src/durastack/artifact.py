"""Single-file locked-model container with a human-auditable manifest.

Layout: 4-byte magic, unsigned 64-bit little-endian manifest length, a
JSON manifest with sorted keys, a dense payload of little-endian float64
arrays, and a SHA-256 digest of everything before it. The manifest names
every array with its element offset and shape, so the file is
self-describing; all numeric state rides in the payload. Identical models
serialize to identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from typing import BinaryIO, Union

import numpy as np

from .errors import ArtifactError, ArtifactVersionError
from .learners import KINDS, LearnerSpec, learner_class
from .mice import FieldModel, ImputationModelSet, Marginals, StreamModels
from .schema import EncodingMeta
from .stack import FORMAT_VERSION, LockedModel, Pipeline, StackWeights

MAGIC = b"DSTK"
_DIGEST_BYTES = 32


class _ArrayBag:
    """Accumulates arrays into one payload, handing out manifest ids."""

    def __init__(self):
        self.chunks: list[np.ndarray] = []
        self.table: dict[str, dict] = {}
        self.offset = 0

    def add(self, arr: np.ndarray) -> str:
        a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        aid = f"a{len(self.chunks)}"
        self.table[aid] = {"offset": self.offset, "shape": list(a.shape)}
        self.chunks.append(a)
        self.offset += a.size
        return aid

    def payload(self) -> bytes:
        if not self.chunks:
            return b""
        return np.concatenate([c.ravel() for c in self.chunks]).tobytes()


class _ArrayView:
    """Reads arrays back out of a loaded payload by manifest id."""

    def __init__(self, table: dict, payload: np.ndarray):
        self.table = table
        self.payload = payload

    def get(self, aid: str) -> np.ndarray:
        entry = self.table[aid]
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        flat = self.payload[start:start + size]
        if flat.size != size:
            raise ArtifactError("artifact payload is truncated")
        return flat.reshape(shape).copy()


def _field_model_out(model: FieldModel, bag: _ArrayBag) -> dict:
    out = {"kind": model.kind, "coef": bag.add(model.coef)}
    if model.donor_means is not None:
        out["donor_means"] = bag.add(model.donor_means)
        out["donor_values"] = bag.add(model.donor_values)
    return out


def _field_model_in(doc: dict, view: _ArrayView) -> FieldModel:
    return FieldModel(
        kind=doc["kind"],
        coef=view.get(doc["coef"]),
        donor_means=view.get(doc["donor_means"]) if "donor_means" in doc else None,
        donor_values=view.get(doc["donor_values"]) if "donor_values" in doc else None,
    )


def _imputer_out(imp: ImputationModelSet, bag: _ArrayBag) -> dict:
    # iterate in sorted key order so array ids (and hence the payload
    # layout) do not depend on dict insertion history; a loaded model
    # saves back to the same bytes
    marg = {
        "continuous": {k: bag.add(imp.marginals.continuous[k])
                       for k in sorted(imp.marginals.continuous)},
        "binary": dict(imp.marginals.binary),
        "categorical": {k: bag.add(imp.marginals.categorical[k])
                        for k in sorted(imp.marginals.categorical)},
    }
    streams = []
    for s in imp.streams:
        streams.append({
            "index": s.index,
            "primary": {k: _field_model_out(s.primary[k], bag)
                        for k in sorted(s.primary)},
            "companion": {k: _field_model_out(s.companion[k], bag)
                          for k in sorted(s.companion)},
        })
    return {
        "seed": imp.seed,
        "iterations": imp.iterations,
        "cluster_levels": list(imp.cluster_levels),
        "visit_order": list(imp.visit_order),
        "marginals": marg,
        "streams": streams,
    }


def _imputer_in(doc: dict, meta: EncodingMeta, view: _ArrayView) -> ImputationModelSet:
    marg = Marginals(
        continuous={k: view.get(v) for k, v in doc["marginals"]["continuous"].items()},
        binary={k: float(v) for k, v in doc["marginals"]["binary"].items()},
        categorical={k: view.get(v) for k, v in doc["marginals"]["categorical"].items()},
    )
    streams = []
    for sdoc in doc["streams"]:
        streams.append(StreamModels(
            index=int(sdoc["index"]),
            primary={k: _field_model_in(v, view) for k, v in sdoc["primary"].items()},
            companion={k: _field_model_in(v, view) for k, v in sdoc["companion"].items()},
        ))
    return ImputationModelSet(
        meta=meta,
        cluster_levels=tuple(doc["cluster_levels"]),
        visit_order=tuple(doc["visit_order"]),
        iterations=int(doc["iterations"]),
        marginals=marg,
        streams=streams,
        seed=int(doc["seed"]),
    )


def _learner_out(learner, bag: _ArrayBag) -> dict:
    return {
        "scalars": learner.state_scalars(),
        "arrays": {k: bag.add(v) for k, v in learner.state_arrays().items()},
    }


def _pipeline_out(pipe: Pipeline, bag: _ArrayBag) -> dict:
    return {
        "index": pipe.index,
        "specs": {kind: pipe.specs[kind].as_dict() for kind in KINDS},
        "weights": bag.add(pipe.weights.w),
        "learners": {kind: _learner_out(pipe.learners[kind], bag)
                     for kind in KINDS},
    }


def _pipeline_in(doc: dict, view: _ArrayView) -> Pipeline:
    learners = {}
    for kind in KINDS:
        ldoc = doc["learners"][kind]
        arrays = {k: view.get(v) for k, v in ldoc["arrays"].items()}
        learners[kind] = learner_class(kind).from_state(ldoc["scalars"], arrays)
    specs = {kind: LearnerSpec.make(kind, doc["specs"][kind]) for kind in KINDS}
    return Pipeline(
        index=int(doc["index"]),
        specs=specs,
        learners=learners,
        weights=StackWeights(view.get(doc["weights"])),
    )


def _creation_stamp() -> Union[int, None]:
    raw = os.environ.get("SOURCE_DATE_EPOCH")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        return None


def save(model: LockedModel, dest: Union[str, os.PathLike, BinaryIO]) -> None:
    """Write the locked model; byte-identical for identical models."""
    bag = _ArrayBag()
    manifest = {
        "format_version": model.format_version,
        "created": _creation_stamp(),
        "meta": model.meta.to_json(),
        "imputer": _imputer_out(model.imputer, bag),
        "pipelines": [_pipeline_out(p, bag) for p in model.pipelines],
        "provenance": model.provenance,
    }
    manifest["arrays"] = bag.table
    manifest["payload_elements"] = bag.offset
    blob = json.dumps(manifest, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<Q", len(blob)) + blob + bag.payload()
    data = body + hashlib.sha256(body).digest()
    if hasattr(dest, "write"):
        dest.write(data)
    else:
        try:
            with open(dest, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise ArtifactError(f"cannot write artifact: {exc}") from exc


def load(src: Union[str, os.PathLike, BinaryIO]) -> LockedModel:
    """Read a locked model; rejects wrong versions and corrupt bytes."""
    if hasattr(src, "read"):
        data = src.read()
    else:
        try:
            with open(src, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise ArtifactError(f"cannot read artifact: {exc}") from exc
    head = len(MAGIC) + 8
    if len(data) < head + _DIGEST_BYTES:
        raise ArtifactError("artifact is truncated")
    if data[:len(MAGIC)] != MAGIC:
        raise ArtifactError("not a locked-model artifact (bad magic)")
    (manifest_len,) = struct.unpack("<Q", data[len(MAGIC):head])
    if head + manifest_len + _DIGEST_BYTES > len(data):
        raise ArtifactError("artifact is truncated")
    body = data[:-_DIGEST_BYTES]
    digest = data[-_DIGEST_BYTES:]
    if hashlib.sha256(body).digest() != digest:
        raise ArtifactError("artifact digest mismatch (corrupt file)")
    try:
        manifest = json.loads(data[head:head + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"artifact manifest is unreadable: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactVersionError(found=version, expected=FORMAT_VERSION)
    payload_start = head + manifest_len
    expected = int(manifest["payload_elements"]) * 8
    payload_bytes = body[payload_start:]
    if len(payload_bytes) != expected:
        raise ArtifactError("artifact payload length mismatch")
    payload = np.frombuffer(payload_bytes, dtype="<f8")
    view = _ArrayView(manifest["arrays"], payload)
    meta = EncodingMeta.from_json(manifest["meta"])
    return LockedModel(
        meta=meta,
        imputer=_imputer_in(manifest["imputer"], meta, view),
        pipelines=[_pipeline_in(p, view) for p in manifest["pipelines"]],
        provenance=manifest["provenance"],
        format_version=int(version),
    )
