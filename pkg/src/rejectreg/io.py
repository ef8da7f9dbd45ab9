"""CSV ingestion and model artifacts.

Artifact layout (all integers and floats little-endian)::

    8 bytes   magic  b"RJREGKNN"
    uint32    format version
    uint32    header length L
    L bytes   UTF-8 JSON header (n, d, N, k_f, k_sigma, epsilon, u, seed, ...)
    float64   training features, n*d values, row-major
    float64   training labels, n values
    float64   sorted calibration values, N values

The JSON twin holds the same header plus the three arrays as lists; Python's
float repr makes it exact as well, but the binary file is canonical.
"""

from __future__ import annotations

import csv
import json
import math
import os
import struct
from pathlib import Path

import numpy as np

from .calibration import EmpiricalCdf, PluginPredictor
from .core import (
    STREAM_ZETA_QUERY,
    FeatureSet,
    LabeledDataset,
    RejectRegError,
    make_rng,
)
from .knn import KnnModel

MAGIC = b"RJREGKNN"
FORMAT_VERSION = 1
DATA_DIR_ENV = "REJECTREG_DATA_DIR"


class ParseError(RejectRegError, ValueError):
    def __init__(self, path, row: int, column: int, message: str):
        self.path, self.row, self.column = str(path), row, column
        super().__init__(f"{path}: row {row}, column {column}: {message}")


class ArtifactError(RejectRegError, ValueError):
    pass


def resolve_data_path(path) -> Path:
    """``path`` as given, else relative to ``$REJECTREG_DATA_DIR`` (``name`` or ``name.csv``)."""
    p = Path(path)
    if p.exists():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base:
        for cand in (Path(base) / p, Path(base) / f"{p}.csv"):
            if cand.exists():
                return cand
    raise FileNotFoundError(f"no such data file: {path}")


def read_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a comma-separated file with a header row."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path, 1, 1, "empty file, header row required") from None
        rows = []
        for r, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise ParseError(path, r, len(rec), f"expected {len(header)} columns, got {len(rec)}")
            vals = []
            for c, cell in enumerate(rec, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(path, r, c, f"not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise ParseError(path, r, c, f"non-finite value: {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(path, 2, 1, "no data rows")
    return header, np.array(rows, dtype=np.float64)


def read_labeled_csv(path) -> LabeledDataset:
    """Labeled CSV: the last column is the label."""
    header, M = read_matrix_csv(path)
    if M.shape[1] < 2:
        raise ParseError(path, 1, 1, "labeled file needs at least one feature and a label")
    return LabeledDataset(M[:, :-1], M[:, -1])


def read_features_csv(path) -> FeatureSet:
    return FeatureSet(read_matrix_csv(path)[1])


def write_text(path, text: str) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)


def format_outcomes(accept: np.ndarray, values: np.ndarray) -> str:
    lines = ["prediction"]
    lines += ["%.17g" % v if a else "reject" for a, v in zip(accept, values)]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# standardization

class Standardizer:
    """Per-feature affine map ``(x - mean) / scale``; constant columns keep scale 1."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        scale = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(scale > 0, scale, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


# ---------------------------------------------------------------------------
# artifacts

def _header(pred: PluginPredictor, model: KnnModel, scaler: Standardizer | None) -> dict:
    h = {
        "format_version": FORMAT_VERSION,
        "n": model.data.n,
        "d": model.dimension,
        "N": pred.cdf.size,
        "k_f": model.k,
        "k_sigma": model.k_sigma,
        "epsilon": pred.epsilon,
        "u": pred.u,
        "seed": pred.seed,
        "deterministic_zeta": pred.deterministic_zeta,
        "scaler": None,
    }
    if scaler is not None:
        h["scaler"] = {"mean": scaler.mean.tolist(), "scale": scaler.scale.tolist()}
    return h


class ModelArtifact:
    """A calibrated kNN predictor plus the optional input standardization."""

    def __init__(self, predictor: PluginPredictor, scaler: Standardizer | None = None):
        if predictor.model is None:
            raise ArtifactError("only kNN-backed predictors can be saved")
        self.predictor = predictor
        self.scaler = scaler

    def predict_batch(self, X):
        if self.scaler is not None:
            X = self.scaler.transform(X)
        return self.predictor.predict_batch(X)

    def save(self, path, json_twin: bool = False) -> None:
        model = self.predictor.model
        header = json.dumps(_header(self.predictor, model, self.scaler), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
            fh.write(header)
            for arr in (model.data.X, model.data.y, self.predictor.cdf.values):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if json_twin:
            doc = _header(self.predictor, model, self.scaler)
            doc["X"] = model.data.X.tolist()
            doc["y"] = model.data.y.tolist()
            doc["calibration"] = self.predictor.cdf.values.tolist()
            write_text(Path(str(path) + ".json"), json.dumps(doc, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path, deterministic_zeta: bool | None = None) -> "ModelArtifact":
        path = Path(path)
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            X = np.array(doc["X"], dtype=np.float64).reshape(doc["n"], doc["d"])
            y = np.array(doc["y"], dtype=np.float64)
            cal = np.array(doc["calibration"], dtype=np.float64)
            return cls._assemble(doc, X, y, cal, deterministic_zeta)
        raw = path.read_bytes()
        if raw[:8] != MAGIC:
            raise ArtifactError(f"{path}: not a model artifact")
        version, hlen = struct.unpack_from("<II", raw, 8)
        if version != FORMAT_VERSION:
            raise ArtifactError(f"{path}: unsupported format version {version}")
        doc = json.loads(raw[16:16 + hlen].decode())
        n, d, N = doc["n"], doc["d"], doc["N"]
        body = np.frombuffer(raw, dtype="<f8", offset=16 + hlen).astype(np.float64)
        if body.size != n * d + n + N:
            raise ArtifactError(f"{path}: truncated or corrupt payload")
        X = body[: n * d].reshape(n, d)
        y = body[n * d: n * d + n]
        cal = body[n * d + n:]
        return cls._assemble(doc, X, y, cal, deterministic_zeta)

    @classmethod
    def _assemble(cls, doc, X, y, cal, deterministic_zeta):
        model = KnnModel(LabeledDataset(X, y), doc["k_f"], doc["k_sigma"])
        det = doc["deterministic_zeta"] if deterministic_zeta is None else deterministic_zeta
        seed = doc["seed"]
        pred = PluginPredictor(
            regression=model.predict,
            variance=model.variance,
            cdf=EmpiricalCdf(cal),
            epsilon=doc["epsilon"],
            u=doc["u"],
            dimension=doc["d"],
            rng=make_rng(seed, STREAM_ZETA_QUERY),
            deterministic_zeta=det,
            seed=seed,
            both=model.predict_with_variance,
            model=model,
        )
        scaler = None
        if doc.get("scaler"):
            scaler = Standardizer(doc["scaler"]["mean"], doc["scaler"]["scale"])
        return cls(pred, scaler)
