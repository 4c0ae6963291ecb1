"""CSV and manifest input/output for the command line tools."""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np


class CovarianceFormatError(ValueError):
    """A CSV cell failed to parse; carries 1-based row/column positions."""

    def __init__(self, path, row: int, col: int, detail: str):
        super().__init__(
            f"{path}: row {row}, column {col}: {detail}"
        )
        self.row = row
        self.col = col


def _parse_numeric_rows(path, reader, n_cols: int) -> list[list[float]]:
    rows = []
    for i, raw in enumerate(reader, start=2):  # row 1 is the header
        if not raw:
            continue
        if len(raw) != n_cols:
            raise CovarianceFormatError(
                path, i, min(len(raw), n_cols) + 1,
                f"expected {n_cols} values, found {len(raw)}",
            )
        values = []
        for j, cell in enumerate(raw, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise CovarianceFormatError(
                    path, i, j, f"not a number: {cell!r}"
                ) from None
        rows.append(values)
    return rows


def read_cov_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a covariance matrix CSV: T header labels, then T rows of T values.

    The matrix must be square and symmetric within 1e-8 relative tolerance.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CovarianceFormatError(path, 1, 1, "empty file") from None
        labels = [h.strip() for h in header]
        rows = _parse_numeric_rows(path, reader, len(labels))
    if len(rows) != len(labels):
        raise CovarianceFormatError(
            path, len(rows) + 2, 1,
            f"expected {len(labels)} data rows, found {len(rows)}",
        )
    s = np.array(rows)
    scale = max(float(np.max(np.abs(s))), 1.0)
    if np.max(np.abs(s - s.T)) > 1e-8 * scale:
        raise ValueError(f"{path}: covariance matrix is not symmetric")
    return labels, (s + s.T) / 2.0


def read_raw_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a raw dataset CSV: header labels, then one row per person."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CovarianceFormatError(path, 1, 1, "empty file") from None
        labels = [h.strip() for h in header]
        rows = _parse_numeric_rows(path, reader, len(labels))
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least 2 data rows")
    return labels, np.array(rows)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, *, seed, theta_true, files) -> dict:
    """Record a simulation's seed, generating parameters and file hashes."""
    manifest = {
        "seed": seed,
        "theta_true": theta_true,
        "files": {
            os.path.basename(f): file_sha256(f) for f in files
        },
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


class ManifestIntegrityError(RuntimeError):
    """A file listed in a manifest no longer matches its recorded hash."""


def verify_manifest(path) -> dict:
    """Re-hash the files listed in a manifest and compare.

    Files are resolved relative to the manifest's directory.  Raises
    ManifestIntegrityError on the first mismatch or missing file.
    """
    with open(path) as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    for name, recorded in sorted(manifest.get("files", {}).items()):
        target = os.path.join(base, name)
        if not os.path.exists(target):
            raise ManifestIntegrityError(f"{name}: file is missing")
        actual = file_sha256(target)
        if actual != recorded:
            raise ManifestIntegrityError(
                f"{name}: hash mismatch (recorded {recorded[:12]}..., "
                f"actual {actual[:12]}...)"
            )
    return manifest
