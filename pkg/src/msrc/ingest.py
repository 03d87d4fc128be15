"""Loading and preprocessing of KDD-style flow-record CSV files.

Steps: clean (drop duplicates and records with missing fields), optional
address anonymisation, one-hot encoding of text columns, and min-max
normalisation with statistics fitted on the training split.  Record order
is preserved throughout because later stages treat it as time.
"""

from __future__ import annotations

import csv
import hashlib
import ipaddress
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "address", "label", "ignore")
MISSING = {"", "?", "nan", "NaN", "NA", "inf", "-inf", "Infinity", "-Infinity"}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Column:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"column {self.name!r}: unknown kind {self.kind!r}; expected one of {KINDS}")


@dataclass
class DatasetSchema:
    columns: list[Column]
    normal_label: str = "normal"
    known_labels: frozenset[str] | None = None
    vocabularies: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        n_label = sum(c.kind == "label" for c in self.columns)
        if n_label != 1:
            raise DatasetError(f"schema must have exactly one label column, found {n_label}")
        for name, vocab in self.vocabularies.items():
            if list(vocab) != sorted(set(vocab)):
                raise DatasetError(f"vocabulary for {name!r} must be sorted and duplicate-free")

    @property
    def label_index(self) -> int:
        return next(i for i, c in enumerate(self.columns) if c.kind == "label")

    def indices(self, *kinds: str) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind in kinds]

    def feature_names(self) -> list[str]:
        names = []
        for c in self.columns:
            if c.kind == "numeric":
                names.append(c.name)
            elif c.kind in ("categorical", "address"):
                names.extend(f"{c.name}={v}" for v in self.vocabularies.get(c.name, []))
        return names


@dataclass(frozen=True)
class RawRecord:
    values: tuple[str, ...]  # every CSV field, label included
    label: str
    anomaly: int


@dataclass
class NormStats:
    minimum: np.ndarray
    maximum: np.ndarray


@dataclass
class FeatureMatrix:
    rows: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) with 1 = anomaly
    columns: list[str] = field(default_factory=list)
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=int)

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def head(self, n: int) -> "FeatureMatrix":
        return FeatureMatrix(self.rows[:n], self.labels[:n], self.columns, self.norm_stats)


# -- schema presets -------------------------------------------------------------

KDD_FEATURES = [
    ("duration", "numeric"), ("protocol_type", "categorical"), ("service", "categorical"),
    ("flag", "categorical"), ("src_bytes", "numeric"), ("dst_bytes", "numeric"),
    ("land", "numeric"), ("wrong_fragment", "numeric"), ("urgent", "numeric"), ("hot", "numeric"),
    ("num_failed_logins", "numeric"), ("logged_in", "numeric"), ("num_compromised", "numeric"),
    ("root_shell", "numeric"), ("su_attempted", "numeric"), ("num_root", "numeric"),
    ("num_file_creations", "numeric"), ("num_shells", "numeric"), ("num_access_files", "numeric"),
    ("num_outbound_cmds", "numeric"), ("is_host_login", "numeric"), ("is_guest_login", "numeric"),
    ("count", "numeric"), ("srv_count", "numeric"), ("serror_rate", "numeric"),
    ("srv_serror_rate", "numeric"), ("rerror_rate", "numeric"), ("srv_rerror_rate", "numeric"),
    ("same_srv_rate", "numeric"), ("diff_srv_rate", "numeric"), ("srv_diff_host_rate", "numeric"),
    ("dst_host_count", "numeric"), ("dst_host_srv_count", "numeric"),
    ("dst_host_same_srv_rate", "numeric"), ("dst_host_diff_srv_rate", "numeric"),
    ("dst_host_same_src_port_rate", "numeric"), ("dst_host_srv_diff_host_rate", "numeric"),
    ("dst_host_serror_rate", "numeric"), ("dst_host_srv_serror_rate", "numeric"),
    ("dst_host_rerror_rate", "numeric"), ("dst_host_srv_rerror_rate", "numeric"),
]

UNSW_NB15_COLUMNS = [
    ("srcip", "address"), ("sport", "numeric"), ("dstip", "address"), ("dsport", "numeric"),
    ("proto", "categorical"), ("state", "categorical"), ("dur", "numeric"), ("sbytes", "numeric"),
    ("dbytes", "numeric"), ("sttl", "numeric"), ("dttl", "numeric"), ("sloss", "numeric"),
    ("dloss", "numeric"), ("service", "categorical"), ("Sload", "numeric"), ("Dload", "numeric"),
    ("Spkts", "numeric"), ("Dpkts", "numeric"), ("swin", "numeric"), ("dwin", "numeric"),
    ("stcpb", "numeric"), ("dtcpb", "numeric"), ("smeansz", "numeric"), ("dmeansz", "numeric"),
    ("trans_depth", "numeric"), ("res_bdy_len", "numeric"), ("Sjit", "numeric"), ("Djit", "numeric"),
    ("Stime", "numeric"), ("Ltime", "numeric"), ("Sintpkt", "numeric"), ("Dintpkt", "numeric"),
    ("tcprtt", "numeric"), ("synack", "numeric"), ("ackdat", "numeric"), ("is_sm_ips_ports", "numeric"),
    ("ct_state_ttl", "numeric"), ("ct_flw_http_mthd", "numeric"), ("is_ftp_login", "numeric"),
    ("ct_ftp_cmd", "numeric"), ("ct_srv_src", "numeric"), ("ct_srv_dst", "numeric"),
    ("ct_dst_ltm", "numeric"), ("ct_src_ltm", "numeric"), ("ct_src_dport_ltm", "numeric"),
    ("ct_dst_sport_ltm", "numeric"), ("ct_dst_src_ltm", "numeric"), ("attack_cat", "ignore"),
    ("Label", "label"),
]

_CIC_NUMERIC = (
    "Flow Duration,Tot Fwd Pkts,Tot Bwd Pkts,TotLen Fwd Pkts,TotLen Bwd Pkts,Fwd Pkt Len Max,"
    "Fwd Pkt Len Min,Fwd Pkt Len Mean,Fwd Pkt Len Std,Bwd Pkt Len Max,Bwd Pkt Len Min,"
    "Bwd Pkt Len Mean,Bwd Pkt Len Std,Flow Byts/s,Flow Pkts/s,Flow IAT Mean,Flow IAT Std,"
    "Flow IAT Max,Flow IAT Min,Fwd IAT Tot,Fwd IAT Mean,Fwd IAT Std,Fwd IAT Max,Fwd IAT Min,"
    "Bwd IAT Tot,Bwd IAT Mean,Bwd IAT Std,Bwd IAT Max,Bwd IAT Min,Fwd PSH Flags,Bwd PSH Flags,"
    "Fwd URG Flags,Bwd URG Flags,Fwd Header Len,Bwd Header Len,Fwd Pkts/s,Bwd Pkts/s,Pkt Len Min,"
    "Pkt Len Max,Pkt Len Mean,Pkt Len Std,Pkt Len Var,FIN Flag Cnt,SYN Flag Cnt,RST Flag Cnt,"
    "PSH Flag Cnt,ACK Flag Cnt,URG Flag Cnt,CWE Flag Count,ECE Flag Cnt,Down/Up Ratio,Pkt Size Avg,"
    "Fwd Seg Size Avg,Bwd Seg Size Avg,Fwd Byts/b Avg,Fwd Pkts/b Avg,Fwd Blk Rate Avg,"
    "Bwd Byts/b Avg,Bwd Pkts/b Avg,Bwd Blk Rate Avg,Subflow Fwd Pkts,Subflow Fwd Byts,"
    "Subflow Bwd Pkts,Subflow Bwd Byts,Init Fwd Win Byts,Init Bwd Win Byts,Fwd Act Data Pkts,"
    "Fwd Seg Size Min,Active Mean,Active Std,Active Max,Active Min,Idle Mean,Idle Std,Idle Max,Idle Min"
).split(",")

CIC_IDS2018_COLUMNS = (
    [("Dst Port", "numeric"), ("Protocol", "categorical"), ("Timestamp", "ignore")]
    + [(name, "numeric") for name in _CIC_NUMERIC]
    + [("Label", "label")]
)


def _schema(cols, normal_label):
    return DatasetSchema([Column(n, k) for n, k in cols], normal_label)


def preset_schema(name: str, n_features: int | None = None) -> DatasetSchema:
    """Built-in schemas.

    ``nsl-kdd`` expects the 43-field distribution files (41 features, label,
    difficulty); ``kdd99`` the 42-field files.  ``synthetic`` needs
    ``n_features``.
    """
    key = name.lower()
    if key == "kdd99":
        return _schema(KDD_FEATURES + [("label", "label")], "normal")
    if key == "nsl-kdd":
        return _schema(KDD_FEATURES + [("label", "label"), ("difficulty", "ignore")], "normal")
    if key == "unsw-nb15":
        return _schema(UNSW_NB15_COLUMNS, "0")
    if key == "cic-ids2018":
        return _schema(CIC_IDS2018_COLUMNS, "Benign")
    if key == "synthetic":
        if not n_features:
            raise DatasetError("synthetic schema needs n_features")
        return _schema([(f"f{i}", "numeric") for i in range(n_features)] + [("label", "label")], "normal")
    raise DatasetError(f"unknown schema preset {name!r}; choose kdd99, nsl-kdd, unsw-nb15, cic-ids2018, synthetic")


def parse_columns(spec: str, normal_label: str = "normal") -> DatasetSchema:
    """Schema from ``"name:kind, name:kind, ..."``."""
    cols = []
    for item in spec.split(","):
        if not item.strip():
            continue
        name, _, kind = item.strip().rpartition(":")
        cols.append(Column(name.strip(), kind.strip()))
    return DatasetSchema(cols, normal_label)


# -- operations -------------------------------------------------------------

def _norm_label(value: str) -> str:
    return value.strip().rstrip(".")


def _parse_number(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return float(int(text.strip(), 0))


def _is_header(row: list[str], schema: DatasetSchema) -> bool:
    numeric = schema.indices("numeric")
    if not numeric:
        return [v.strip() for v in row] == [c.name for c in schema.columns]
    for i in numeric:
        try:
            _parse_number(row[i])
            return False
        except (ValueError, IndexError):
            continue
    return True


def load_dataset(path, schema: DatasetSchema) -> list[RawRecord]:
    """Read a comma-separated flow file in file order; an optional header row is skipped."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    n_cols = len(schema.columns)
    li = schema.label_index
    normal = _norm_label(schema.normal_label)
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if lineno == 1 and len(row) == n_cols and _is_header(row, schema):
                continue
            if len(row) != n_cols:
                raise DatasetError(f"{path}: row {lineno} has {len(row)} fields, schema expects {n_cols}")
            label = _norm_label(row[li])
            if schema.known_labels is not None and label not in schema.known_labels and label != normal:
                raise DatasetError(f"{path}: row {lineno} has unknown label value {label!r}")
            records.append(RawRecord(tuple(v.strip() for v in row), label, int(label != normal)))
    log.info("loaded %d records from %s", len(records), path)
    return records


def clean(records: list[RawRecord]) -> list[RawRecord]:
    """Drop exact duplicates (first occurrence kept) and records with missing fields."""
    seen = set()
    out = []
    for r in records:
        if any(v in MISSING for v in r.values) or r.values in seen:
            continue
        seen.add(r.values)
        out.append(r)
    log.info("clean: %d -> %d records", len(records), len(out))
    return out


def _feistel32(value: int, key: bytes, rounds: int = 4) -> int:
    left, right = value >> 16, value & 0xFFFF
    for r in range(rounds):
        digest = hashlib.blake2b(right.to_bytes(2, "big") + bytes([r]), key=key, digest_size=2).digest()
        left, right = right, left ^ int.from_bytes(digest, "big")
    return (left << 16) | right


def _replacement(value: str, key: bytes) -> str:
    try:
        ip = ipaddress.IPv4Address(value)
    except ValueError:
        digest = hashlib.blake2b(value.encode(), key=key, digest_size=16).digest()
        return str(ipaddress.IPv6Address(digest))
    return str(ipaddress.IPv4Address(_feistel32(int(ip), key)))


def anonymize(records: list[RawRecord], schema: DatasetSchema, seed: int) -> list[RawRecord]:
    """Replace every address field by a keyed pseudo-random address.

    IPv4 addresses go through a keyed 32-bit permutation, so distinct inputs
    always get distinct outputs; other address strings are hashed to an
    IPv6-formatted value.  The mapping depends only on ``(seed, value)``.
    """
    cols = schema.indices("address")
    if not cols:
        return list(records)
    key = hashlib.blake2b(str(seed).encode(), digest_size=16).digest()
    cache: dict[str, str] = {}
    out = []
    for r in records:
        vals = list(r.values)
        for i in cols:
            if vals[i] not in cache:
                cache[vals[i]] = _replacement(vals[i], key)
            vals[i] = cache[vals[i]]
        out.append(replace(r, values=tuple(vals)))
    return out


def encode_categorical(records: list[RawRecord], schema: DatasetSchema) -> tuple[FeatureMatrix, DatasetSchema]:
    """One-hot text columns; numeric columns pass through.

    Vocabularies already present on ``schema`` are reused (values outside them
    encode to an all-zero block); missing ones are fitted on ``records``.
    """
    vocabs = dict(schema.vocabularies)
    for i in schema.indices("categorical", "address"):
        name = schema.columns[i].name
        if name not in vocabs:
            vocabs[name] = sorted({r.values[i] for r in records})
    fitted = replace(schema, vocabularies=vocabs)
    blocks = []
    n = len(records)
    for i, col in enumerate(schema.columns):
        if col.kind == "numeric":
            try:
                blocks.append(np.array([_parse_number(r.values[i]) for r in records], dtype=float)[:, None])
            except ValueError as exc:
                raise DatasetError(f"column {col.name!r}: non-numeric value ({exc})") from None
        elif col.kind in ("categorical", "address"):
            vocab = vocabs[col.name]
            index = {v: j for j, v in enumerate(vocab)}
            block = np.zeros((n, len(vocab)))
            for row, r in enumerate(records):
                j = index.get(r.values[i])
                if j is not None:
                    block[row, j] = 1.0
            blocks.append(block)
    rows = np.hstack(blocks) if blocks else np.zeros((n, 0))
    if not np.all(np.isfinite(rows)):
        raise DatasetError("encoded features contain non-finite values")
    labels = np.array([r.anomaly for r in records], dtype=int)
    return FeatureMatrix(rows, labels, fitted.feature_names()), fitted


def normalize(matrix: FeatureMatrix, stats: NormStats | None = None) -> tuple[FeatureMatrix, NormStats]:
    """Min-max scale each column to [0, 1].

    Without ``stats`` they are fitted on ``matrix``; given stats are applied
    and the result clamped.  Constant columns map to 0.
    """
    x = matrix.rows
    if stats is None:
        if len(x):
            stats = NormStats(x.min(axis=0), x.max(axis=0))
        else:
            stats = NormStats(np.zeros(x.shape[1]), np.zeros(x.shape[1]))
    span = stats.maximum - stats.minimum
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (x - stats.minimum) / safe, 0.0)
    scaled = np.clip(scaled, 0.0, 1.0)
    return FeatureMatrix(scaled, matrix.labels, matrix.columns, stats), stats


@dataclass
class PreparedData:
    train: FeatureMatrix
    test: FeatureMatrix | None
    schema: DatasetSchema
    counts: dict[str, int]


def prepare(train_path, schema: DatasetSchema, test_path=None, max_train: int | None = None,
            max_test: int | None = None, anonymize_seed: int | None = None) -> PreparedData:
    """load -> clean -> prefix cap -> (anonymize) -> encode -> normalize, fitted on the training file."""
    counts = {}

    def read(path, cap, tag):
        recs = load_dataset(path, schema)
        counts[f"{tag}_loaded"] = len(recs)
        recs = clean(recs)
        counts[f"{tag}_clean"] = len(recs)
        if cap:
            recs = recs[:cap]
        counts[f"{tag}_used"] = len(recs)
        if anonymize_seed is not None:
            recs = anonymize(recs, schema, anonymize_seed)
        return recs

    train_recs = read(train_path, max_train, "train")
    train_fm, fitted = encode_categorical(train_recs, schema)
    train_fm, stats = normalize(train_fm)
    test_fm = None
    if test_path is not None:
        test_recs = read(test_path, max_test, "test")
        test_fm, _ = encode_categorical(test_recs, fitted)
        test_fm, _ = normalize(test_fm, stats)
    log.info("prepared data: %s, width d=%d", counts, train_fm.width)
    return PreparedData(train_fm, test_fm, fitted, counts)
