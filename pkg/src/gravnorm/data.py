"""Jet data model, kinematic features, synthetic generator, file formats.

A jet is one point cloud: an (N, 4) array of constituent four-vectors
(E, px, py, pz) in GeV with 1 <= N <= 200, a per-node feature matrix and
a binary label.  On disk jets live either in JSONL (one object per line,
schema {"id", "label", "p4", "feat"?}) or in a compact binary format
(magic "GNRM", little-endian, length-prefixed float64 blocks per jet).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError, InputError, ParameterError

log = logging.getLogger(__name__)

MAX_NODES = 200
FEATURE_NAMES = ("log_pt", "log_e", "log_pt_rel", "log_e_rel",
                 "delta_eta", "delta_phi", "delta_r")

BIN_MAGIC = b"GNRM"
BIN_VERSION = 1

# fraction of malformed records tolerated before ingestion aborts
MALFORMED_TOLERANCE = 0.01


@dataclass
class Jet:
    four_vectors: np.ndarray  # (N, 4) as (E, px, py, pz)
    features: np.ndarray      # (N, F)
    label: int
    id: str


@dataclass
class DatasetSplit:
    jets: list[Jet]
    role: str = "train"
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.jets)

    def labels(self) -> np.ndarray:
        return np.array([j.label for j in self.jets], dtype=np.int64)


def wrap_angle(phi):
    """Wrap azimuthal differences into (-pi, pi]."""
    wrapped = np.mod(np.asarray(phi, dtype=np.float64), 2.0 * np.pi)
    return np.where(wrapped > np.pi, wrapped - 2.0 * np.pi, wrapped)


def jet_axis(four_vectors: np.ndarray) -> np.ndarray:
    """Summed four-vector of the jet."""
    return np.asarray(four_vectors, dtype=np.float64).sum(axis=0)


def compute_features(four_vectors: np.ndarray, axis: np.ndarray | None = None) -> np.ndarray:
    """Per-constituent kinematics relative to the jet axis, shape (N, 7).

    Columns: log pT, log E, log(pT/pT_jet), log(E/E_jet), delta eta,
    delta phi (wrapped to (-pi, pi]), delta R.  Constituents with zero
    transverse momentum or zero energy get an all-zero row (counted and
    logged), since their angles are undefined.
    """
    p4 = np.asarray(four_vectors, dtype=np.float64)
    if p4.ndim != 2 or p4.shape[1] != 4:
        raise InputError(f"expected (N, 4) four-vectors, got shape {p4.shape}")
    if axis is None:
        axis = jet_axis(p4)
    e_jet, px_jet, py_jet, pz_jet = (float(v) for v in axis)
    pt_jet = np.hypot(px_jet, py_jet)
    if pt_jet <= 0.0 or e_jet <= 0.0:
        raise InputError("jet axis has no transverse momentum or energy")
    eta_jet = np.arcsinh(pz_jet / pt_jet)
    phi_jet = np.arctan2(py_jet, px_jet)

    e, px, py, pz = p4[:, 0], p4[:, 1], p4[:, 2], p4[:, 3]
    pt = np.hypot(px, py)
    good = (pt > 0.0) & (e > 0.0)
    n_bad = int(np.count_nonzero(~good))
    if n_bad:
        log.warning("%d constituent(s) with zero momentum or energy; "
                    "their feature rows are zeroed", n_bad)

    out = np.zeros((len(p4), len(FEATURE_NAMES)))
    if np.any(good):
        pt_g, e_g = pt[good], e[good]
        eta = np.arcsinh(pz[good] / pt_g)
        phi = np.arctan2(py[good], px[good])
        d_eta = eta - eta_jet
        d_phi = wrap_angle(phi - phi_jet)
        out[good, 0] = np.log(pt_g)
        out[good, 1] = np.log(e_g)
        out[good, 2] = np.log(pt_g / pt_jet)
        out[good, 3] = np.log(e_g / e_jet)
        out[good, 4] = d_eta
        out[good, 5] = d_phi
        out[good, 6] = np.sqrt(d_eta ** 2 + d_phi ** 2)
    return out


# ---- synthetic two-class generator ----------------------------------------

def synth_generate(seed: int, n_jets: int, n_min: int = 10, n_max: int = 40,
                   role: str = "train") -> DatasetSplit:
    """Deterministic synthetic jets for the two-class task.

    Label 0 is a single diffuse blob whose width varies jet by jet; label 1
    has a three-prong substructure (tight clumps on a ring around the
    axis).  The widths are chosen so the per-node angular distributions of
    the two classes overlap: telling them apart requires the clumpiness of
    the neighborhood, not any single constituent.  Averaged over jets the
    three-prong class still has the larger mean pairwise delta-R.  Labels
    alternate, so every split is balanced to within one jet.
    """
    if n_min < 1 or n_max > MAX_NODES or n_min > n_max:
        raise ParameterError(f"need 1 <= n_min <= n_max <= {MAX_NODES}, "
                             f"got [{n_min}, {n_max}]")
    rng = np.random.default_rng(seed)
    jets = []
    for i in range(n_jets):
        label = i % 2
        n = int(rng.integers(n_min, n_max + 1))
        eta0 = rng.uniform(-1.5, 1.5)
        phi0 = rng.uniform(-np.pi, np.pi)
        pt_jet = rng.uniform(400.0, 800.0)

        if label == 0:
            width = rng.uniform(0.08, 0.30)
            d_eta = rng.normal(0.0, width, size=n)
            d_phi = rng.normal(0.0, width, size=n)
        else:
            base = rng.uniform(0.0, 2.0 * np.pi)
            angles = base + np.array([0.0, 2.0, 4.0]) * np.pi / 3.0
            ring = rng.uniform(0.25, 0.50)
            prong = rng.integers(0, 3, size=n)
            d_eta = ring * np.cos(angles[prong]) + rng.normal(0.0, 0.05, size=n)
            d_phi = ring * np.sin(angles[prong]) + rng.normal(0.0, 0.05, size=n)

        frac = rng.exponential(1.0, size=n)
        frac /= frac.sum()
        pt = pt_jet * frac
        eta = eta0 + d_eta
        phi = wrap_angle(phi0 + d_phi)
        px, py, pz = pt * np.cos(phi), pt * np.sin(phi), pt * np.sinh(eta)
        e = pt * np.cosh(eta)  # massless constituents
        p4 = np.stack([e, px, py, pz], axis=1)
        jets.append(Jet(p4, compute_features(p4), label, f"synth-{seed}-{i}"))
    return DatasetSplit(jets, role=role)


# ---- validation ------------------------------------------------------------

def _validate_record(p4, label, feat=None):
    p4 = np.asarray(p4, dtype=np.float64)
    if p4.ndim != 2 or p4.shape[1] != 4:
        raise InputError(f"p4 must be (N, 4), got {p4.shape}")
    n = p4.shape[0]
    if not 1 <= n <= MAX_NODES:
        raise InputError(f"jet must have 1..{MAX_NODES} constituents, got {n}")
    if not np.all(np.isfinite(p4)):
        raise InputError("non-finite four-vector entries")
    if np.any(p4[:, 0] < 0):
        raise InputError("negative constituent energy")
    if label not in (0, 1):
        raise InputError(f"label must be 0 or 1, got {label!r}")
    if feat is not None:
        feat = np.asarray(feat, dtype=np.float64)
        if feat.ndim != 2 or feat.shape[0] != n or not np.all(np.isfinite(feat)):
            raise InputError("feature matrix malformed")
    return p4, feat


# ---- JSONL ------------------------------------------------------------------

def save_jets(split: DatasetSplit, path, format: str = "jsonl",
              with_features: bool = True):
    if format == "jsonl":
        _save_jsonl(split, path, with_features)
    elif format == "bin":
        _save_bin(split, path, with_features)
    else:
        raise ParameterError(f"unknown format {format!r}")


def load_jets(path, format: str = "jsonl", role: str = "test") -> DatasetSplit:
    """Load and validate a jet file.

    Malformed records are counted and skipped; more than 1% malformed
    aborts with the first offending record named.  Records without a
    "feat" block get features computed on load.
    """
    if format == "jsonl":
        return _load_jsonl(path, role)
    if format == "bin":
        return _load_bin(path, role)
    raise ParameterError(f"unknown format {format!r}")


def _save_jsonl(split: DatasetSplit, path, with_features: bool):
    with open(path, "w") as fh:
        for jet in split.jets:
            rec = {"id": jet.id, "label": int(jet.label),
                   "p4": jet.four_vectors.tolist()}
            if with_features and jet.features is not None:
                rec["feat"] = jet.features.tolist()
            fh.write(json.dumps(rec) + "\n")


def _load_jsonl(path, role: str) -> DatasetSplit:
    jets, malformed, first_bad, total = [], 0, None, 0
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                rec = json.loads(line)
                p4, feat = _validate_record(rec["p4"], rec.get("label"),
                                            rec.get("feat"))
                feats = feat if feat is not None else compute_features(p4)
                jets.append(Jet(p4, feats, int(rec["label"]),
                                str(rec.get("id", f"row-{lineno}"))))
            except (KeyError, ValueError, TypeError, InputError) as exc:
                malformed += 1
                if first_bad is None:
                    first_bad = (lineno, str(exc))
    if total == 0:
        log.warning("no records found in %s", path)
    elif malformed / total > MALFORMED_TOLERANCE:
        raise IngestionError(
            f"{malformed}/{total} malformed records in {path}; first at "
            f"line {first_bad[0]}: {first_bad[1]}", line=first_bad[0])
    return DatasetSplit(jets, role=role, malformed=malformed)


# ---- binary -----------------------------------------------------------------

def _save_bin(split: DatasetSplit, path, with_features: bool):
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(struct.pack("<HI", BIN_VERSION, len(split.jets)))
        for jet in split.jets:
            ident = jet.id.encode()
            n, n_feat = jet.four_vectors.shape[0], 0
            feats = None
            if with_features and jet.features is not None:
                feats = np.ascontiguousarray(jet.features, dtype="<f8")
                n_feat = feats.shape[1]
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<BHH", int(jet.label), n, n_feat))
            fh.write(np.ascontiguousarray(jet.four_vectors, dtype="<f8").tobytes())
            if feats is not None:
                fh.write(feats.tobytes())


def _load_bin(path, role: str) -> DatasetSplit:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 10 or blob[:4] != BIN_MAGIC:
        raise IngestionError(f"{path} is not a jet binary file (bad magic)")
    version, n_jets = struct.unpack_from("<HI", blob, 4)
    if version != BIN_VERSION:
        raise IngestionError(f"unsupported binary version {version}")
    offset, jets, malformed, first_bad = 10, [], 0, None
    for k in range(n_jets):
        try:
            (id_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            ident = blob[offset:offset + id_len].decode()
            offset += id_len
            label, n, n_feat = struct.unpack_from("<BHH", blob, offset)
            offset += 5
            p4 = np.frombuffer(blob, dtype="<f8", count=n * 4, offset=offset)
            p4 = p4.reshape(n, 4).copy()
            offset += n * 4 * 8
            feat = None
            if n_feat:
                feat = np.frombuffer(blob, dtype="<f8", count=n * n_feat,
                                     offset=offset).reshape(n, n_feat).copy()
                offset += n * n_feat * 8
            p4, feat = _validate_record(p4, int(label), feat)
            jets.append(Jet(p4, feat if feat is not None else compute_features(p4),
                            int(label), ident))
        except (struct.error, UnicodeDecodeError) as exc:
            raise IngestionError(f"truncated or corrupt jet binary at record "
                                 f"{k}: {exc}", line=k) from exc
        except InputError as exc:
            malformed += 1
            if first_bad is None:
                first_bad = (k, str(exc))
    if n_jets == 0:
        log.warning("no records found in %s", path)
    elif malformed / n_jets > MALFORMED_TOLERANCE:
        raise IngestionError(
            f"{malformed}/{n_jets} malformed records in {path}; first at "
            f"record {first_bad[0]}: {first_bad[1]}", line=first_bad[0])
    return DatasetSplit(jets, role=role, malformed=malformed)
