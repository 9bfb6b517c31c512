"""Line-delimited persistence for posterior draws.

An archive is UTF-8 text: a header line of JSON metadata, then one JSON
line per draw.  Trees serialize through the pre-order list encoding, so
files are human-inspectable and diff-friendly.  A ``.gz`` suffix switches
on gzip compression (written with a zeroed timestamp, keeping bytes
deterministic for a given draw sequence).
"""

from __future__ import annotations

import gzip
import hashlib
import json
import os
from pathlib import Path

import numpy as np

from .draws import DrawRecord, PackedForest, PosteriorDraws
from .exceptions import ArchiveError
from .trees import decode_regression_tree, encode_regression_tree

FORMAT_NAME = "vcbart-draws"


def _is_gzip(path) -> bool:
    return Path(path).name.endswith(".gz")


def _open_read(path):
    if _is_gzip(path):
        return gzip.open(path, "rt")
    return open(path, "r")


def _meta_to_jsonable(meta: dict) -> dict:
    out = {}
    for key, value in meta.items():
        if isinstance(value, np.ndarray):
            out[key] = value.tolist()
        elif isinstance(value, (np.integer, np.floating)):
            out[key] = value.item()
        else:
            out[key] = value
    return out


def save_draws(draws: PosteriorDraws, path) -> None:
    """Write header plus one line per draw; callers own cleanup on error."""
    header = {"format": FORMAT_NAME, **_meta_to_jsonable(draws.meta)}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(_encode_record(rec), sort_keys=True)
              for rec in draws.records]
    text = "\n".join(lines) + "\n"
    if _is_gzip(path):
        # mtime=0 so identical draws give identical bytes
        Path(path).write_bytes(gzip.compress(text.encode("utf-8"), mtime=0))
    else:
        Path(path).write_text(text)


def _encode_record(rec: DrawRecord) -> dict:
    return {
        "forests": [[encode_regression_tree(rt) for rt in forest.to_trees()]
                    for forest in rec.forests],
        "sigma": rec.sigma,
        "split_probs": rec.split_probs.tolist(),
        "concentrations": rec.concentrations.tolist(),
        "concentration_index": rec.concentration_index.tolist(),
        "split_counts": rec.split_count_matrix.tolist(),
    }


def _decode_record(obj: dict, lineno: int) -> DrawRecord:
    try:
        forests = [PackedForest.from_trees(
            [decode_regression_tree(items) for items in forest])
            for forest in obj["forests"]]
        return DrawRecord(
            forests=forests,
            sigma=float(obj["sigma"]),
            split_probs=np.asarray(obj["split_probs"], dtype=np.float64),
            concentrations=np.asarray(obj["concentrations"], dtype=np.float64),
            concentration_index=np.asarray(obj["concentration_index"],
                                           dtype=np.int64),
            split_count_matrix=np.asarray(obj["split_counts"], dtype=np.int64),
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ArchiveError(f"malformed draw on line {lineno}: {exc}") from exc


def load_draws(path) -> PosteriorDraws:
    """Read an archive back; any structural problem raises ArchiveError."""
    path = Path(path)
    if not path.exists():
        raise ArchiveError(f"no archive at {path}")
    try:
        with _open_read(path) as fh:
            first = fh.readline()
            if not first.strip():
                raise ArchiveError(f"{path} is empty")
            try:
                header = json.loads(first)
            except json.JSONDecodeError as exc:
                raise ArchiveError(f"{path}: bad header: {exc}") from exc
            if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
                raise ArchiveError(f"{path} is not a {FORMAT_NAME} archive")
            from .sampler import SCHEMA_VERSION
            if header.get("schema_version") != SCHEMA_VERSION:
                raise ArchiveError(
                    f"archive schema {header.get('schema_version')} does not "
                    f"match reader schema {SCHEMA_VERSION}")
            records = []
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ArchiveError(
                        f"{path}: corrupt draw on line {lineno}: {exc}") from exc
                records.append(_decode_record(obj, lineno))
    except (OSError, EOFError) as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from exc
    if not records:
        raise ArchiveError(f"{path} has a header but no draws")
    meta = {k: v for k, v in header.items() if k != "format"}
    return PosteriorDraws(records=records, meta=meta)


def archive_hash(path) -> str:
    """sha256 of the file bytes (the determinism witness)."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_draws_atomic(draws: PosteriorDraws, path) -> None:
    """Write via a temp file and rename, removing partial output on failure.

    The temp name keeps the real name as a suffix so compression detection
    still sees the .gz ending.
    """
    path = Path(path)
    tmp = path.with_name(".partial-" + path.name)
    try:
        save_draws(draws, tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def check_columns(meta: dict, x_names, z_names) -> None:
    """Reject column declarations that disagree with the archive's."""
    ax, az = list(meta.get("x_names", [])), list(meta.get("z_names", []))
    if list(x_names) != ax or list(z_names) != az:
        raise ArchiveError(
            "dataset columns do not match the archive: archive has "
            f"x={ax}, z={az}; dataset has x={list(x_names)}, z={list(z_names)}")


def check_same_dataset(meta: dict, fingerprint: str) -> None:
    """Reject a dataset whose fingerprint differs from the one fit."""
    stored = meta.get("dataset_fingerprint")
    if stored != fingerprint:
        raise ArchiveError(
            "dataset fingerprint does not match the archive; this archive "
            "was fit on different data")
