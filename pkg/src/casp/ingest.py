"""On-disk dataset format.

A dataset directory holds ``manifest.json`` and one blob per split and
modality named ``<split>_<modality>.f32``. Blobs are little-endian float32,
time-major rows, with no headers; every sample's ``[offset, seq_len]`` (in
rows) lives in the manifest.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .data import MODALITIES, DomainDataset, MultimodalSample, validate_dataset

FORMAT = "casp-dataset"
VERSION = 1
_F32 = np.dtype("<f4")


class DatasetFormatError(ValueError):
    """A dataset directory or manifest is missing, corrupt, or inconsistent."""


def blob_name(split: str, modality: str) -> str:
    return f"{split}_{modality}.f32"


def save_dataset(ds: DomainDataset, directory: str | os.PathLike) -> Path:
    """Write ``ds`` to ``directory``. Refuses to write an invalid dataset."""
    problems = validate_dataset(ds)
    if problems:
        raise ValueError(f"refusing to save invalid dataset {ds.name!r}: " + "; ".join(problems[:5]))
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "name": ds.name,
        "label_range": list(ds.label_range),
        "feat_dims": {m: ds.feat_dims[m] for m in MODALITIES},
        "splits": {},
    }
    for split, samples in ds.splits.items():
        offsets = dict.fromkeys(MODALITIES, 0)
        records = []
        chunks: dict[str, list[np.ndarray]] = {m: [] for m in MODALITIES}
        for s in samples:
            segs = {}
            for m in MODALITIES:
                arr = s.features[m]
                segs[m] = [offsets[m], int(arr.shape[0])]
                offsets[m] += int(arr.shape[0])
                chunks[m].append(arr)
            records.append(
                {
                    "id": s.id,
                    "label": s.reveal_label(),
                    "label_hidden": s.label_hidden,
                    "segments": segs,
                }
            )
        manifest["splits"][split] = records
        for m in MODALITIES:
            if chunks[m]:
                data = np.concatenate(chunks[m], axis=0).astype(_F32, copy=False)
            else:
                data = np.zeros((0, ds.feat_dims[m]), dtype=_F32)
            (directory / blob_name(split, m)).write_bytes(np.ascontiguousarray(data).tobytes())

    text = json.dumps(manifest, indent=1, allow_nan=False)
    (directory / "manifest.json").write_text(text + "\n", encoding="utf-8")
    return directory


def _check_manifest(manifest: dict) -> None:
    for key in ("name", "label_range", "feat_dims", "splits"):
        if key not in manifest:
            raise DatasetFormatError(f"manifest missing field {key!r}")
    if manifest.get("format", FORMAT) != FORMAT:
        raise DatasetFormatError(f"unknown manifest format {manifest.get('format')!r}")
    dims = manifest["feat_dims"]
    for m in MODALITIES:
        if not isinstance(dims.get(m), int) or dims[m] < 1:
            raise DatasetFormatError(f"manifest feat_dims[{m!r}] missing or invalid")
    seen: set[str] = set()
    for split, records in manifest["splits"].items():
        for rec in records:
            sid = rec.get("id")
            if not isinstance(sid, str):
                raise DatasetFormatError(f"split {split!r}: record without string id")
            if sid in seen:
                raise DatasetFormatError(f"duplicate sample id {sid!r}")
            seen.add(sid)
            label = rec.get("label")
            if label is not None and not (isinstance(label, (int, float)) and math.isfinite(label)):
                raise DatasetFormatError(f"sample {sid!r}: invalid label {label!r}")


def load_dataset(directory: str | os.PathLike) -> DomainDataset:
    """Read a dataset directory, checking manifest bounds before touching blob contents."""
    directory = Path(directory)
    path = directory / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DatasetFormatError(f"no manifest.json in {directory}") from e
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"corrupt manifest {path}: {e}") from e
    if not isinstance(manifest, dict):
        raise DatasetFormatError(f"corrupt manifest {path}: top level is not an object")
    _check_manifest(manifest)
    dims = manifest["feat_dims"]

    splits: dict[str, list[MultimodalSample]] = {}
    for split, records in manifest["splits"].items():
        blobs: dict[str, np.ndarray] = {}
        for m in MODALITIES:
            bpath = directory / blob_name(split, m)
            if not bpath.exists():
                raise DatasetFormatError(f"missing blob {bpath.name}")
            nbytes = bpath.stat().st_size
            row_bytes = _F32.itemsize * dims[m]
            if nbytes % row_bytes:
                raise DatasetFormatError(
                    f"blob {bpath.name} size {nbytes} is not a multiple of feat_dim {dims[m]} float32 rows"
                )
            n_rows = nbytes // row_bytes
            spans = []
            for rec in records:
                off, length = rec["segments"][m]
                if not (isinstance(off, int) and isinstance(length, int)) or off < 0 or length < 1:
                    raise DatasetFormatError(f"sample {rec['id']!r}: invalid segment for {m!r}")
                if off + length > n_rows:
                    raise DatasetFormatError(
                        f"sample {rec['id']!r}: {m!r} segment [{off}, {off + length}) "
                        f"out of bounds for {bpath.name} with {n_rows} rows"
                    )
                spans.append((off, off + length, rec["id"]))
            spans.sort()
            for (a0, a1, aid), (b0, b1, bid) in zip(spans, spans[1:]):
                if b0 < a1:
                    raise DatasetFormatError(f"overlapping {m!r} segments for samples {aid!r} and {bid!r}")
            if sum(b - a for a, b, _ in spans) != n_rows:
                raise DatasetFormatError(f"blob {bpath.name} has {n_rows} rows not covered by the manifest")
            blobs[m] = np.frombuffer(bpath.read_bytes(), dtype=_F32).reshape(n_rows, dims[m])

        samples = []
        for rec in records:
            feats = {}
            for m in MODALITIES:
                off, length = rec["segments"][m]
                feats[m] = blobs[m][off : off + length]
            samples.append(
                MultimodalSample(rec["id"], feats, rec.get("label"), label_hidden=bool(rec.get("label_hidden", False)))
            )
        splits[split] = samples

    return DomainDataset(
        name=manifest["name"],
        label_range=tuple(manifest["label_range"]),
        feat_dims=dims,
        splits=splits,
    )
