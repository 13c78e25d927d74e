"""Data model and interchange formats.

Conventions fixed here and relied on everywhere else:

* Canonical in-memory pixel range is the symmetric interval [-1, 1]; the
  unit range [0, 1] is supported for interchange via :func:`convert_range`.
* Image payloads are raw little-endian 32-bit floats, C row-major,
  channel-last, one file per image.  In memory tensors are float64 (the
  float32 file values load exactly); :func:`save_payload` quantizes.
* RMSE values are always reported in [0,1]-range units, i.e. canonical-range
  differences are divided by 2 before the root-mean-square.
* Manifests are JSON documents with an explicit ``schema_version`` (currently
  1).  Relative payload paths resolve against the manifest's directory.
* Tabular outputs are CSV with fixed header rows (see ``DESCRIPTOR_HEADER``
  and ``SENSITIVITY_HEADER``); floats are written with ``repr`` so re-reading
  is lossless.
* The distorted twin of image ``<id>`` is named ``<id> + DIST_SUFFIX`` and a
  pair carries the reference image's id as ``pair_id``.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ValidationError

SCHEMA_VERSION = 1
DIST_SUFFIX = "__distorted"

RANGE_UNIT = "unit"          # [0, 1]
RANGE_SYMMETRIC = "symmetric"  # [-1, 1]
_RANGE_BOUNDS = {RANGE_UNIT: (0.0, 1.0), RANGE_SYMMETRIC: (-1.0, 1.0)}

DESCRIPTOR_HEADER = [
    "pair_id", "logp_x", "logp_xt", "grad_norm_x", "grad_norm_xt",
    "dir_proj", "mu_x", "sigma_x", "path_integral",
]
SENSITIVITY_HEADER = ["pair_id", "metric", "distance", "rmse", "sensitivity"]


def range_bounds(range_tag):
    try:
        return _RANGE_BOUNDS[range_tag]
    except KeyError:
        raise ValidationError(
            f"unknown range tag {range_tag!r}; expected one of {sorted(_RANGE_BOUNDS)}"
        ) from None


@dataclass(frozen=True)
class ImageTensor:
    """An H x W x C image stored flat, with a declared value range."""

    data: np.ndarray
    height: int
    width: int
    channels: int
    range: str = RANGE_SYMMETRIC

    def __post_init__(self):
        if min(self.height, self.width, self.channels) < 1:
            raise ValidationError("height, width and channels must be >= 1")
        arr = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64).ravel())
        if arr.size != self.height * self.width * self.channels:
            raise ValidationError(
                f"data length {arr.size} != "
                f"{self.height}x{self.width}x{self.channels}"
            )
        lo, hi = range_bounds(self.range)
        if arr.size and (arr.min() < lo - 1e-9 or arr.max() > hi + 1e-9):
            raise ValidationError(
                f"pixel values outside declared range {self.range!r} "
                f"([{arr.min():.6g}, {arr.max():.6g}])"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def size(self):
        return self.data.size

    @property
    def shape(self):
        return (self.height, self.width, self.channels)

    def as_hwc(self):
        """View as (height, width, channels)."""
        return self.data.reshape(self.height, self.width, self.channels)


def convert_range(img: ImageTensor, target: str) -> ImageTensor:
    """Affine map between the two supported ranges.

    [-1,1] -> [0,1] is (x + 1) / 2 and the inverse is 2x - 1; a forward plus
    inverse round trip reproduces the input up to float64 rounding.
    """
    range_bounds(target)
    if target == img.range:
        return img
    if img.range == RANGE_SYMMETRIC:
        data = (img.data + 1.0) / 2.0
    else:
        data = img.data * 2.0 - 1.0
    # Guard against 1-ulp overshoot at the interval endpoints.
    lo, hi = range_bounds(target)
    data = np.clip(data, lo, hi)
    return ImageTensor(data, img.height, img.width, img.channels, target)


def to_canonical(img: ImageTensor) -> ImageTensor:
    return convert_range(img, RANGE_SYMMETRIC)


def rmse_unit_range(a: ImageTensor, b: ImageTensor) -> float:
    """Root-mean-square difference reported in [0,1]-range units."""
    if a.shape != b.shape or a.range != b.range:
        raise ValidationError("images must share shape and range tag")
    diff = a.data - b.data
    scale = 2.0 if a.range == RANGE_SYMMETRIC else 1.0
    return float(np.sqrt(np.mean(diff * diff)) / scale)


@dataclass(frozen=True)
class ImagePair:
    """Reference image, its distorted twin and the recorded distortion stats."""

    reference: ImageTensor
    distorted: ImageTensor
    epsilon: float
    rmse: float
    pair_id: str

    def __post_init__(self):
        if self.reference.shape != self.distorted.shape:
            raise ValidationError("pair members must share shape")
        if self.reference.range != self.distorted.range:
            raise ValidationError("pair members must share range tag")
        if self.rmse < 0:
            raise ValidationError("rmse must be >= 0")

    def recompute_rmse(self):
        return rmse_unit_range(self.reference, self.distorted)

    def l2_distance(self):
        """Euclidean distance in canonical-range units."""
        diff = self.reference.data - self.distorted.data
        return float(np.linalg.norm(diff))


@dataclass(frozen=True)
class DescriptorRecord:
    """The eight probability surrogates for one pair.

    Fields a density model cannot supply are ``None`` and are written to CSV
    as empty cells; analyses drop missing columns rather than imputing.
    """

    pair_id: str
    logp_x: float | None
    logp_xt: float | None
    grad_norm_x: float | None
    grad_norm_xt: float | None
    dir_proj: float | None
    mu_x: float
    sigma_x: float
    path_integral: float | None

    def __post_init__(self):
        for name in ("grad_norm_x", "grad_norm_xt", "sigma_x"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValidationError(f"{name} must be >= 0, got {v}")
        for name in DESCRIPTOR_HEADER[1:]:
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValidationError(f"{name} must be finite, got {v}")


@dataclass(frozen=True)
class SensitivityRow:
    pair_id: str
    metric: str
    distance: float
    rmse: float
    sensitivity: float


@dataclass
class SensitivityTable:
    """Rows keyed by (pair_id, metric)."""

    rows: list = field(default_factory=list)

    def add(self, row: SensitivityRow):
        key = (row.pair_id, row.metric)
        if key in self._index():
            raise ValidationError(f"duplicate sensitivity row for {key}")
        self.rows.append(row)

    def extend(self, rows):
        for row in rows:
            self.add(row)

    def _index(self):
        return {(r.pair_id, r.metric) for r in self.rows}

    def metrics(self):
        seen = []
        for r in self.rows:
            if r.metric not in seen:
                seen.append(r.metric)
        return seen

    def for_metric(self, metric):
        return {r.pair_id: r for r in self.rows if r.metric == metric}


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ImageEntry:
    id: str
    path: str
    height: int
    width: int
    channels: int
    range: str


@dataclass(frozen=True)
class PairEntry:
    pair_id: str
    reference: str
    distorted: str
    epsilon: float
    rmse: float


@dataclass(frozen=True)
class ScoreFiles:
    logprobs: str | None = None
    distances: dict = field(default_factory=dict)
    gradients: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DatasetManifest:
    """Validated, immutable view of a dataset manifest file."""

    schema_version: int
    images: tuple
    pairs: tuple = ()
    scores: ScoreFiles = field(default_factory=ScoreFiles)
    provenance: dict = field(default_factory=dict)
    base_dir: str = "."

    def __post_init__(self):
        ids = [e.id for e in self.images]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ValidationError(f"duplicate image id(s): {sorted(dupes)}")
        known = set(ids)
        for p in self.pairs:
            for ref in (p.reference, p.distorted):
                if ref not in known:
                    raise ValidationError(
                        f"pair {p.pair_id!r} references unknown image {ref!r}"
                    )

    def entry(self, image_id):
        for e in self.images:
            if e.id == image_id:
                return e
        raise ValidationError(f"unknown image id {image_id!r}")

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def image_ids(self):
        return [e.id for e in self.images]


def save_payload(path, img: ImageTensor):
    """Write raw little-endian float32, C order, channel-last."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(img.data.astype("<f4").tobytes())


def load_payload(path, entry: ImageEntry) -> ImageTensor:
    expected = entry.height * entry.width * entry.channels
    try:
        raw = np.fromfile(path, dtype="<f4")
    except OSError as exc:
        raise ValidationError(f"cannot read payload for {entry.id!r}: {exc}") from exc
    if raw.size != expected:
        raise ValidationError(
            f"shape mismatch for image {entry.id!r}: manifest declares "
            f"{entry.height}x{entry.width}x{entry.channels} ({expected} floats) "
            f"but payload holds {raw.size}"
        )
    return ImageTensor(raw.astype(np.float64), entry.height, entry.width,
                       entry.channels, entry.range)


def load_vector_payload(path, expected_size=None):
    """Raw little-endian float32 vector (gradient payloads)."""
    raw = np.fromfile(path, dtype="<f4")
    if expected_size is not None and raw.size != expected_size:
        raise ValidationError(
            f"vector payload {path!r} holds {raw.size} floats, expected {expected_size}"
        )
    return raw.astype(np.float64)


def save_vector_payload(path, vec):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(np.asarray(vec, dtype=np.float64).astype("<f4").tobytes())


def _require(obj, key, types, path):
    if key not in obj:
        raise SchemaError(f"{path}.{key}", "missing required field")
    value = obj[key]
    if not isinstance(value, types):
        tn = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise SchemaError(f"{path}.{key}", f"expected {tn}, got {type(value).__name__}")
    return value


def load_manifest(path, check_payloads=True) -> DatasetManifest:
    """Load and validate a manifest file.

    Every image entry is checked for id uniqueness, a known range tag and,
    when ``check_payloads`` is set, an existing payload file whose byte count
    matches the declared shape.
    """
    if not os.path.exists(path):
        raise ValidationError(f"manifest file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError("$", f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("$", "top level must be an object")
    version = _require(doc, "schema_version", int, "$")
    if version != SCHEMA_VERSION:
        raise SchemaError("$.schema_version", f"unsupported version {version}")

    raw_images = _require(doc, "images", list, "$")
    images = []
    for i, item in enumerate(raw_images):
        p = f"$.images[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(p, "image entry must be an object")
        entry = ImageEntry(
            id=_require(item, "id", str, p),
            path=_require(item, "path", str, p),
            height=_require(item, "height", int, p),
            width=_require(item, "width", int, p),
            channels=_require(item, "channels", int, p),
            range=_require(item, "range", str, p),
        )
        # Ids double as derived payload file names.
        if not entry.id or any(sep in entry.id for sep in ("/", "\\")):
            raise SchemaError(f"{p}.id", f"id {entry.id!r} must be non-empty "
                                         "and free of path separators")
        if min(entry.height, entry.width, entry.channels) < 1:
            raise SchemaError(p, "height, width and channels must be >= 1")
        range_bounds(entry.range)
        images.append(entry)

    ids = [e.id for e in images]
    seen = set()
    for i, image_id in enumerate(ids):
        if image_id in seen:
            raise SchemaError(f"$.images[{i}].id", f"duplicate image id {image_id!r}")
        seen.add(image_id)

    pairs = []
    for i, item in enumerate(doc.get("pairs", [])):
        p = f"$.pairs[{i}]"
        if not isinstance(item, dict):
            raise SchemaError(p, "pair entry must be an object")
        pairs.append(PairEntry(
            pair_id=_require(item, "pair_id", str, p),
            reference=_require(item, "reference", str, p),
            distorted=_require(item, "distorted", str, p),
            epsilon=float(_require(item, "epsilon", (int, float), p)),
            rmse=float(_require(item, "rmse", (int, float), p)),
        ))

    scores_doc = doc.get("scores", {})
    if not isinstance(scores_doc, dict):
        raise SchemaError("$.scores", "must be an object")
    scores = ScoreFiles(
        logprobs=scores_doc.get("logprobs"),
        distances=dict(scores_doc.get("distances", {})),
        gradients=dict(scores_doc.get("gradients", {})),
    )

    provenance = doc.get("provenance", {})
    if not isinstance(provenance, dict):
        raise SchemaError("$.provenance", "must be an object")

    manifest = DatasetManifest(
        schema_version=version,
        images=tuple(images),
        pairs=tuple(pairs),
        scores=scores,
        provenance=provenance,
        base_dir=os.path.dirname(os.path.abspath(path)),
    )

    if check_payloads:
        for i, entry in enumerate(manifest.images):
            payload = manifest.resolve(entry.path)
            if not os.path.exists(payload):
                raise SchemaError(f"$.images[{i}].path", f"payload not found: {payload}")
            expected_bytes = entry.height * entry.width * entry.channels * 4
            actual = os.path.getsize(payload)
            if actual != expected_bytes:
                raise ValidationError(
                    f"shape mismatch for image {entry.id!r}: payload is "
                    f"{actual} bytes, expected {expected_bytes}"
                )
        score_refs = []
        if manifest.scores.logprobs:
            score_refs.append(("$.scores.logprobs", manifest.scores.logprobs))
        score_refs += [(f"$.scores.distances.{k}", v)
                       for k, v in manifest.scores.distances.items()]
        score_refs += [(f"$.scores.gradients.{k}", v)
                       for k, v in manifest.scores.gradients.items()]
        for where, ref in score_refs:
            if not os.path.exists(manifest.resolve(ref)):
                raise SchemaError(where, f"score file not found: {ref}")
    return manifest


def save_manifest(path, manifest: DatasetManifest):
    doc = {
        "schema_version": manifest.schema_version,
        "images": [vars(e).copy() for e in manifest.images],
    }
    if manifest.pairs:
        doc["pairs"] = [vars(p).copy() for p in manifest.pairs]
    scores = {}
    if manifest.scores.logprobs:
        scores["logprobs"] = manifest.scores.logprobs
    if manifest.scores.distances:
        scores["distances"] = dict(manifest.scores.distances)
    if manifest.scores.gradients:
        scores["gradients"] = dict(manifest.scores.gradients)
    if scores:
        doc["scores"] = scores
    if manifest.provenance:
        doc["provenance"] = manifest.provenance
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def load_image(manifest: DatasetManifest, image_id) -> ImageTensor:
    entry = manifest.entry(image_id)
    return load_payload(manifest.resolve(entry.path), entry)


def load_pair(manifest: DatasetManifest, pair: PairEntry) -> ImagePair:
    return ImagePair(
        reference=load_image(manifest, pair.reference),
        distorted=load_image(manifest, pair.distorted),
        epsilon=pair.epsilon,
        rmse=pair.rmse,
        pair_id=pair.pair_id,
    )


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):  # includes numpy floating scalars
        return repr(float(value))
    return str(value)


def _parse_float(cell):
    return None if cell == "" else float(cell)


def write_csv(path, header, rows):
    """Write rows (sequences) under a fixed header; floats via repr."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path, expected_header=None):
    if not os.path.exists(path):
        raise ValidationError(f"CSV file not found: {path}")
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"empty CSV file: {path}") from None
        if expected_header is not None and header != list(expected_header):
            raise ValidationError(
                f"unexpected header in {path}: {header} != {list(expected_header)}"
            )
        return header, [row for row in reader]


def write_descriptors(path, records):
    rows = [
        [r.pair_id, r.logp_x, r.logp_xt, r.grad_norm_x, r.grad_norm_xt,
         r.dir_proj, r.mu_x, r.sigma_x, r.path_integral]
        for r in records
    ]
    write_csv(path, DESCRIPTOR_HEADER, rows)


def read_descriptors(path):
    _, rows = read_csv(path, DESCRIPTOR_HEADER)
    records = []
    for row in rows:
        records.append(DescriptorRecord(
            pair_id=row[0],
            logp_x=_parse_float(row[1]),
            logp_xt=_parse_float(row[2]),
            grad_norm_x=_parse_float(row[3]),
            grad_norm_xt=_parse_float(row[4]),
            dir_proj=_parse_float(row[5]),
            mu_x=float(row[6]),
            sigma_x=float(row[7]),
            path_integral=_parse_float(row[8]),
        ))
    return records


def write_sensitivities(path, table: SensitivityTable):
    rows = [
        [r.pair_id, r.metric, r.distance, r.rmse, r.sensitivity]
        for r in table.rows
    ]
    write_csv(path, SENSITIVITY_HEADER, rows)


def read_sensitivities(path) -> SensitivityTable:
    _, rows = read_csv(path, SENSITIVITY_HEADER)
    table = SensitivityTable()
    for row in rows:
        table.add(SensitivityRow(
            pair_id=row[0], metric=row[1], distance=float(row[2]),
            rmse=float(row[3]), sensitivity=float(row[4]),
        ))
    return table


@dataclass
class JoinedTable:
    """Descriptor columns joined with one sensitivity column per metric.

    The header is ``pair_id, <8 descriptor columns>, S_<metric>...``; missing
    descriptor cells are empty and surface as NaN in :meth:`column`.
    """

    pair_ids: list
    columns: dict  # name -> list of float-or-None

    DESCRIPTOR_COLUMNS = DESCRIPTOR_HEADER[1:]

    def header(self):
        return ["pair_id"] + list(self.columns.keys())

    def column(self, name):
        if name not in self.columns:
            raise ValidationError(f"unknown column {name!r}")
        return np.array(
            [np.nan if v is None else v for v in self.columns[name]], dtype=np.float64
        )

    def metric_columns(self):
        return [c for c in self.columns if c.startswith("S_")]

    def descriptor_columns(self):
        return [c for c in self.columns if c in self.DESCRIPTOR_COLUMNS]

    def complete_columns(self, names):
        """Subset of ``names`` with no missing entries."""
        return [n for n in names if not np.any(np.isnan(self.column(n)))]


def join_tables(records, table: SensitivityTable) -> JoinedTable:
    """Inner join of descriptor records with per-metric sensitivities."""
    metric_names = table.metrics()
    by_metric = {m: table.for_metric(m) for m in metric_names}
    pair_ids, columns = [], {}
    for name in JoinedTable.DESCRIPTOR_COLUMNS:
        columns[name] = []
    for m in metric_names:
        columns[f"S_{m}"] = []
    for rec in records:
        if any(rec.pair_id not in by_metric[m] for m in metric_names):
            continue
        pair_ids.append(rec.pair_id)
        for name in JoinedTable.DESCRIPTOR_COLUMNS:
            columns[name].append(getattr(rec, name))
        for m in metric_names:
            columns[f"S_{m}"].append(by_metric[m][rec.pair_id].sensitivity)
    return JoinedTable(pair_ids=pair_ids, columns=columns)


def write_joined(path, joined: JoinedTable):
    names = list(joined.columns.keys())
    rows = [
        [pid] + [joined.columns[n][i] for n in names]
        for i, pid in enumerate(joined.pair_ids)
    ]
    write_csv(path, ["pair_id"] + names, rows)


def read_joined(path) -> JoinedTable:
    header, rows = read_csv(path)
    if not header or header[0] != "pair_id":
        raise ValidationError(f"joined table {path} must start with pair_id column")
    names = header[1:]
    pair_ids = [row[0] for row in rows]
    columns = {n: [] for n in names}
    for row in rows:
        for name, cell in zip(names, row[1:]):
            columns[name].append(_parse_float(cell))
    return JoinedTable(pair_ids=pair_ids, columns=columns)
