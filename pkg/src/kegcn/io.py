"""Dataset ingestion, config files, binary checkpoints, and report files.

Data files are tab-separated text; blank lines and lines starting with
`#` are ignored.  Within one triples file ids are either all
non-negative integers (used directly) or all strings (interned in
first-seen order); mixing the two is an error.  Every malformed line is
reported with its line number, nothing is skipped silently.

Checkpoints are a flat binary container: magic `KEGC`, a 4-byte
little-endian version, then named sections, each
`name-length(4B LE) | name(UTF-8) | elem-count(8B LE) | float64 LE payload`.
Array shapes ride inside the section name after a `:` separator, so the
container itself stays a plain list of float vectors.  Sections are
written sorted by name, which makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import os
import re
import struct
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .graph import KnowledgeGraph, build_graph
from .propagation import MODES, EmbeddingState, LayerParams
from .scorers import SCORERS
from .tasks import AlignmentSeeds, LabelSet, TrainConfig


class DataError(ValueError):
    """Malformed or inconsistent dataset file."""


class ConfigError(ValueError):
    """Bad configuration key or value."""


class CheckpointError(ValueError):
    """Unreadable or corrupt checkpoint file."""


_INT_RE = re.compile(r"[0-9]+\Z")
TASKS = ("align", "classify")


# ---------------- vocabularies and TSV loaders ----------------


class Vocabulary:
    """Token to dense-id map.  Integer mode passes ids through and only
    tracks the implied count; string mode interns in first-seen order."""

    def __init__(self, int_mode: Optional[bool] = None):
        self.int_mode = int_mode
        self._ids: dict = {}
        self._names: list = []
        self._count = 0

    @property
    def size(self) -> int:
        return self._count if self.int_mode else len(self._ids)

    def names(self):
        if self.int_mode:
            return [str(i) for i in range(self._count)]
        return list(self._names)

    def intern(self, token: str, where: str) -> int:
        is_int = bool(_INT_RE.fullmatch(token))
        if self.int_mode is None:
            self.int_mode = is_int
        if self.int_mode:
            if not is_int:
                raise DataError(f"{where}: mixed integer and string ids")
            i = int(token)
            self._count = max(self._count, i + 1)
            return i
        if token not in self._ids:
            self._ids[token] = len(self._ids)
            self._names.append(token)
        return self._ids[token]

    def resolve(self, token: str, where: str, what: str = "entity") -> int:
        if self.int_mode:
            if _INT_RE.fullmatch(token):
                i = int(token)
                if i < self._count:
                    return i
        elif token in self._ids:
            return self._ids[token]
        raise DataError(f"{where}: unknown {what} {token!r}")


def _data_rows(path: str, n_fields: int):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            tokens = [t.strip() for t in line.split("\t")]
            if len(tokens) != n_fields or any(not t for t in tokens):
                raise DataError(
                    f"{path} line {lineno}: expected {n_fields} tab-separated fields")
            rows.append((lineno, tokens))
    return rows


def load_triples(path: str):
    """Parse `head<TAB>relation<TAB>tail` lines; returns the triple list
    plus entity and relation vocabularies."""
    rows = _data_rows(path, 3)
    int_mode = bool(rows) and all(_INT_RE.fullmatch(t) for t in rows[0][1])
    ent = Vocabulary(int_mode)
    rel = Vocabulary(int_mode)
    triples = []
    for lineno, tokens in rows:
        row_int = all(_INT_RE.fullmatch(t) for t in tokens)
        if row_int != int_mode:
            raise DataError(f"{path} line {lineno}: mixed integer and string ids")
        where = f"{path} line {lineno}"
        h = ent.intern(tokens[0], where)
        r = rel.intern(tokens[1], where)
        t = ent.intern(tokens[2], where)
        triples.append((h, r, t))
    return triples, ent, rel


def load_graph(path: str):
    triples, ent, rel = load_triples(path)
    return build_graph(triples, ent.size, rel.size), ent, rel


def load_alignments(path: str, vocab1: Vocabulary, vocab2: Vocabulary):
    """Parse `e1<TAB>e2` seed pairs; both sides must already be known."""
    pairs = []
    for lineno, tokens in _data_rows(path, 2):
        where = f"{path} line {lineno}"
        pairs.append((vocab1.resolve(tokens[0], where),
                      vocab2.resolve(tokens[1], where)))
    return pairs


def load_labels(path: str, ent_vocab: Vocabulary, class_vocab: Vocabulary):
    """Parse `entity<TAB>label[,label...]` lines; returns the entity to
    label-tuple map and whether any line carried several labels."""
    labels: dict = {}
    multi = False
    for lineno, tokens in _data_rows(path, 2):
        where = f"{path} line {lineno}"
        e = ent_vocab.resolve(tokens[0], where)
        if e in labels:
            raise DataError(f"{where}: duplicate labels for entity {tokens[0]!r}")
        parts = [p.strip() for p in tokens[1].split(",")]
        if any(not p for p in parts):
            raise DataError(f"{where}: empty label token")
        ids = tuple(dict.fromkeys(class_vocab.intern(p, where) for p in parts))
        labels[e] = ids
        multi = multi or len(ids) > 1
    return labels, multi


@dataclass
class DatasetBundle:
    graphs: list
    entity_vocabs: list
    relation_vocabs: list
    seeds: Optional[AlignmentSeeds] = None
    label_set: Optional[LabelSet] = None
    class_vocab: Optional[Vocabulary] = None


def _require_path(values: dict, key: str) -> str:
    if key not in values:
        raise ConfigError(f"config key '{key}' is required for this task")
    return values[key]


def load_alignment_bundle(values: dict) -> DatasetBundle:
    g1, ev1, rv1 = load_graph(_require_path(values, "graph1"))
    g2, ev2, rv2 = load_graph(_require_path(values, "graph2"))
    splits = {}
    for split in ("train", "valid", "test"):
        path = values.get(split)
        splits[split] = load_alignments(path, ev1, ev2) if path else []
    seeds = AlignmentSeeds(**splits)
    return DatasetBundle([g1, g2], [ev1, ev2], [rv1, rv2], seeds=seeds)


def load_classification_bundle(values: dict) -> DatasetBundle:
    g, ev, rv = load_graph(_require_path(values, "graph1"))
    class_vocab = Vocabulary()
    merged: dict = {}
    split_ids = {}
    multi = False
    for split in ("train", "valid", "test"):
        path = values.get(split)
        if not path:
            split_ids[split] = []
            continue
        labels, m = load_labels(path, ev, class_vocab)
        multi = multi or m
        for e in labels:
            if e in merged:
                raise DataError(f"{path}: entity id {e} labeled in more than one split")
        merged.update(labels)
        split_ids[split] = sorted(labels)
    label_set = LabelSet(merged, class_vocab.size, multi, **split_ids)
    return DatasetBundle([g], [ev], [rv], label_set=label_set,
                         class_vocab=class_vocab)


# ---------------- configuration ----------------


_INT_KEYS = ("dim", "layers", "negatives", "epochs", "patience", "seed", "runs")
_FLOAT_KEYS = ("lr", "alpha", "gamma")
_CHOICE_KEYS = {"task": TASKS, "mode": MODES, "scorer": tuple(sorted(SCORERS))}
_PATH_KEYS = ("graph1", "graph2", "train", "valid", "test", "rel_test",
              "report", "checkpoint")
_DEFAULTS = {
    "task": "align", "scorer": "transe", "mode": "kegcn", "layers": 4,
    "lr": 0.01, "alpha": 0.3, "gamma": 3.0, "negatives": 5,
    "epochs": 1000, "patience": 50, "seed": 0, "runs": 1,
}


def _convert(key: str, value: str):
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"config key '{key}': expected integer, got {value!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"config key '{key}': expected number, got {value!r}") from None
    if key in _CHOICE_KEYS:
        if value not in _CHOICE_KEYS[key]:
            raise ConfigError(
                f"config key '{key}': expected one of {_CHOICE_KEYS[key]}, got {value!r}")
        return value
    if key in _PATH_KEYS:
        return value
    raise ConfigError(f"unknown config key '{key}'")


def parse_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> dict:
    """`key = value` lines merged with command-line overrides (which win),
    then defaults; dim defaults to 200 for alignment, 32 for classification."""
    values: dict = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = line.partition("=")
                if not sep:
                    raise ConfigError(f"{path} line {lineno}: expected key = value")
                values[key.strip()] = _convert(key.strip(), value.strip())
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _convert(key, str(value))
    for key, value in _DEFAULTS.items():
        values.setdefault(key, value)
    values.setdefault("dim", 200 if values["task"] == "align" else 32)
    return values


def train_config(values: dict) -> TrainConfig:
    return TrainConfig(mode=values["mode"], scorer=values["scorer"],
                       dim=values["dim"], layers=values["layers"],
                       alpha=values["alpha"], lr=values["lr"],
                       epochs=values["epochs"], patience=values["patience"],
                       gamma=values["gamma"], negatives=values["negatives"],
                       seed=values["seed"])


def thread_cap() -> Optional[int]:
    """Validated KEGCN_THREADS value.  The engine runs message passing
    sequentially, so the cap is an upper bound it trivially honors."""
    raw = os.environ.get("KEGCN_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"KEGCN_THREADS must be a positive integer, got {raw!r}")
    return n


# ---------------- checkpoints ----------------


MAGIC = b"KEGC"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    sections: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION


def atomic_write_bytes(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, cp: Checkpoint) -> None:
    blob = bytearray(MAGIC)
    blob += struct.pack("<I", cp.version)
    for name in sorted(cp.sections):
        arr = np.atleast_1d(np.asarray(cp.sections[name], dtype="<f8"))
        full = f"{name}:{'x'.join(str(s) for s in arr.shape)}".encode("utf-8")
        blob += struct.pack("<I", len(full))
        blob += full
        blob += struct.pack("<Q", arr.size)
        blob += np.ascontiguousarray(arr).tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    if len(data) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    version = struct.unpack_from("<I", data, 4)[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 8
    sections: dict = {}

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = data[off:off + n]
        off += n
        return out

    while off < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        full = take(name_len).decode("utf-8")
        (count,) = struct.unpack("<Q", take(8))
        payload = take(8 * count)
        name, sep, shape_txt = full.rpartition(":")
        if not sep:
            raise CheckpointError(f"{path}: section {full!r} lacks a shape")
        shape = tuple(int(p) for p in shape_txt.split("x")) if shape_txt else ()
        if int(np.prod(shape, dtype=np.int64)) != count:
            raise CheckpointError(f"{path}: section {name!r} shape/count mismatch")
        if name in sections:
            raise CheckpointError(f"{path}: duplicate section {name!r}")
        sections[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return Checkpoint(sections, version)


_PARAM_FIELDS = ("w", "w0", "w_rel", "w_per_rel", "rel_scale")
_ECHO_KEYS = ("dim", "layers", "lr", "alpha", "gamma", "negatives",
              "epochs", "patience", "seed")


def pack_model(values: dict, params_list: list, tables: dict,
               best_valid: Optional[float]) -> Checkpoint:
    """Model state as a checkpoint: config echo, layer weights, embedding
    tables, best validation metric (NaN when there was no validation)."""
    sections: dict = {
        "config/task": [float(TASKS.index(values["task"]))],
        "config/mode": [float(MODES.index(values["mode"]))],
        "config/scorer": [float(sorted(SCORERS).index(values["scorer"]))],
        "best_valid": [np.nan if best_valid is None else float(best_valid)],
    }
    for key in _ECHO_KEYS:
        sections[f"config/{key}"] = [float(values[key])]
    for i, p in enumerate(params_list):
        for f in _PARAM_FIELDS:
            arr = getattr(p, f)
            if arr is not None:
                sections[f"param/layer{i}.{f}"] = arr
    for gname, st in tables.items():
        sections[f"table/{gname}.entity"] = st.entity
        if st.relation is not None:
            sections[f"table/{gname}.relation"] = st.relation
    return Checkpoint(sections)


def unpack_model(cp: Checkpoint):
    """Inverse of pack_model: (config values, layer params, tables, best)."""
    sec = cp.sections

    def one(name: str) -> float:
        if name not in sec:
            raise CheckpointError(f"checkpoint lacks section {name!r}")
        return float(np.asarray(sec[name]).ravel()[0])

    def coded(name: str, choices) -> str:
        idx = int(one(name))
        if not (0 <= idx < len(choices)):
            raise CheckpointError(f"checkpoint section {name!r} out of range")
        return choices[idx]

    values = {
        "task": coded("config/task", TASKS),
        "mode": coded("config/mode", MODES),
        "scorer": coded("config/scorer", tuple(sorted(SCORERS))),
    }
    for key in _ECHO_KEYS:
        v = one(f"config/{key}")
        values[key] = v if key in _FLOAT_KEYS else int(v)
    values["runs"] = 1

    params_list = []
    for i in range(values["layers"]):
        fields = {}
        for f in _PARAM_FIELDS:
            name = f"param/layer{i}.{f}"
            fields[f] = sec[name].copy() if name in sec else None
        if fields["w"] is None and fields["w_per_rel"] is None:
            raise CheckpointError(f"checkpoint lacks weights for layer {i}")
        last = i == values["layers"] - 1
        params_list.append(LayerParams(
            w=fields["w"], w0=fields["w0"], w_rel=fields["w_rel"],
            w_per_rel=fields["w_per_rel"], rel_scale=fields["rel_scale"],
            act_ent="identity" if last else "relu",
            act_rel="identity" if (last or values["mode"].startswith("compgcn")) else "relu",
            alpha=values["alpha"],
        ))

    tables: dict = {}
    for name in sec:
        if not name.startswith("table/"):
            continue
        gname, _, part = name[len("table/"):].partition(".")
        if gname not in tables:
            tables[gname] = EmbeddingState(np.zeros((0, 0)))
        if part == "entity":
            tables[gname].entity = sec[name].copy()
        elif part == "relation":
            tables[gname].relation = sec[name].copy()
        else:
            raise CheckpointError(f"unexpected table section {name!r}")

    best = one("best_valid")
    return values, params_list, tables, (None if np.isnan(best) else best)


# ---------------- report files ----------------


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report(path: str, entries: dict) -> None:
    """`key<TAB>value` lines, sorted by key, written atomically."""
    text = "".join(f"{k}\t{format_value(entries[k])}\n" for k in sorted(entries))
    atomic_write_bytes(path, text.encode("utf-8"))


def read_report(path: str) -> dict:
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                continue
            key, sep, value = line.partition("\t")
            if not sep:
                raise DataError(f"{path} line {lineno}: expected key<TAB>value")
            out[key] = value
    return out
