"""Run persistence: manifest JSON, artifact files, triple export, eval tables.

A run directory is laid out as

    run-<digest>/
        manifest.json
        anchors/anchor-1.png  anchor-2.png  anchor-1.emb  anchor-2.emb
        candidates/<id>.png
        selected.png

Manifests are JSON (human-diffable, floats in exact round-trip form);
embeddings are raw binary for bit-exact replay.  A digest audit over the
directory catches any artifact corruption or loss.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .cache import DIGEST_ALGORITHM, content_digest
from .embedding import PromptEmbedding, SwapVector, embedding_from_bytes
from .errors import SerializationError
from .sampler import PipelineConfig

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
TRIPLES_MAGIC = b"BASSTRN1"

TOOL_VERSION = "0.1.0"


def _theta_to_json(theta: float):
    return "inf" if math.isinf(theta) else theta


def _theta_from_json(value) -> float:
    return float("inf") if value == "inf" else float(value)


def config_to_json_dict(config: PipelineConfig) -> dict:
    d = asdict(config)
    d["theta"] = _theta_to_json(config.theta)
    return d


def config_from_json_dict(d: dict) -> PipelineConfig:
    d = dict(d)
    d["theta"] = _theta_from_json(d["theta"])
    return PipelineConfig(**d)


@dataclass
class AnchorRecord:
    """One of the two unmixed reference images and its source embedding."""

    prompt_raw: str
    prompt_templated: str
    image_digest: str
    media_type: str
    byte_length: int
    image_path: str
    embedding_path: str
    embedding_digest: str
    n_components: int | None = None
    mask_areas_px: list[int] | None = None


@dataclass
class CandidateRecord:
    """Flat manifest row for one candidate."""

    id: int
    bits: str
    image_digest: str
    media_type: str
    byte_length: int
    image_path: str
    sim_p1: float
    sim_p2: float
    sim_i1: float
    sim_i2: float
    gap_text: float
    gap_image: float
    sum_image: float
    r_score: float | None = None
    n_components: int | None = None
    mask_areas_px: list[int] | None = None
    excluded_no_components: bool = False


@dataclass
class RunManifest:
    """Complete record of one run; ``artifacts`` carries bytes, never JSON."""

    config: PipelineConfig
    backend: dict
    prompts: dict
    anchors: list[AnchorRecord]
    candidates: list[CandidateRecord]
    filters: dict
    selection: dict
    status: str = "complete"
    error: str | None = None
    schema_version: int = MANIFEST_SCHEMA_VERSION
    tool_version: str = TOOL_VERSION
    digest_algorithm: str = DIGEST_ALGORITHM
    timing: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict, repr=False)

    def to_json_dict(self, *, include_timing: bool = True) -> dict:
        out = {
            "schema_version": self.schema_version,
            "tool_version": self.tool_version,
            "digest_algorithm": self.digest_algorithm,
            "status": self.status,
            "error": self.error,
            "config": config_to_json_dict(self.config),
            "backend": dict(self.backend),
            "prompts": dict(self.prompts),
            "anchors": [asdict(a) for a in self.anchors],
            "candidates": [asdict(c) for c in self.candidates],
            "filters": {k: dict(v) for k, v in self.filters.items()},
            "selection": dict(self.selection),
        }
        if include_timing:
            out["timing"] = dict(self.timing)
        return out

    def to_canonical_json(self, *, include_timing: bool = True) -> str:
        return (
            json.dumps(
                self.to_json_dict(include_timing=include_timing),
                sort_keys=True,
                indent=2,
            )
            + "\n"
        )

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunManifest":
        return cls(
            config=config_from_json_dict(d["config"]),
            backend=dict(d["backend"]),
            prompts=dict(d["prompts"]),
            anchors=[AnchorRecord(**a) for a in d["anchors"]],
            candidates=[CandidateRecord(**c) for c in d["candidates"]],
            filters={k: dict(v) for k, v in d["filters"].items()},
            selection=dict(d["selection"]),
            status=d["status"],
            error=d.get("error"),
            schema_version=int(d["schema_version"]),
            tool_version=d["tool_version"],
            digest_algorithm=d["digest_algorithm"],
            timing=dict(d.get("timing", {})),
        )

    def candidate_by_id(self, cid: int) -> CandidateRecord:
        for record in self.candidates:
            if record.id == cid:
                return record
        raise KeyError(f"candidate id {cid} not in manifest")

    def validate(self) -> None:
        """Check cross-reference invariants between traces and the table."""

        known = {c.id for c in self.candidates}
        for name, trace in self.filters.items():
            for key in ("input_ids", "kept_ids"):
                missing = set(trace[key]) - known
                if missing:
                    raise ValueError(f"filter {name} references unknown ids {missing}")
            if not set(trace["kept_ids"]) <= set(trace["input_ids"]):
                raise ValueError(f"filter {name} kept ids outside its input")
        sel = self.selection
        if sel.get("selected_id") is not None:
            sid = sel["selected_id"]
            if sid not in known:
                raise ValueError(f"selection id {sid} not in candidate table")
            from_set = sel.get("from_set")
            pools = {
                "fine": set(self.filters["fine"]["kept_ids"]),
                "coarse": set(self.filters["coarse"]["kept_ids"]),
                "all": known,
                "none": known,
            }
            if from_set in pools and sid not in pools[from_set]:
                raise ValueError(
                    f"selection id {sid} not in its declared set {from_set!r}"
                )


def write_run(manifest: RunManifest, artifact_dir: str | Path) -> Path:
    """Persist a run under a fresh directory; never overwrites an earlier run."""

    artifact_dir = Path(artifact_dir)
    artifact_dir.mkdir(parents=True, exist_ok=True)
    stamp = content_digest(
        manifest.to_canonical_json(include_timing=False).encode("utf-8")
    )[:12]
    run_dir = artifact_dir / f"run-{stamp}"
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = artifact_dir / f"run-{stamp}-{suffix}"
    run_dir.mkdir()
    (run_dir / MANIFEST_NAME).write_text(manifest.to_canonical_json())
    for relpath, data in sorted(manifest.artifacts.items()):
        target = run_dir / relpath
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(data)
    return run_dir


def read_run(run_dir: str | Path) -> RunManifest:
    run_dir = Path(run_dir)
    with open(run_dir / MANIFEST_NAME, "r", encoding="utf-8") as fh:
        return RunManifest.from_json_dict(json.load(fh))


def audit_run(run_dir: str | Path, manifest: RunManifest | None = None) -> list[str]:
    """Verify every artifact in a run directory against its recorded digest.

    Returns a list of problems (empty = clean): missing files and content
    digests that no longer match, which catches any single-byte corruption.
    """

    run_dir = Path(run_dir)
    if manifest is None:
        manifest = read_run(run_dir)
    problems: list[str] = []

    def check(relpath: str, expected_digest: str) -> None:
        path = run_dir / relpath
        if not path.is_file():
            problems.append(f"missing artifact: {relpath}")
            return
        actual = content_digest(path.read_bytes())
        if actual != expected_digest:
            problems.append(f"digest mismatch: {relpath}")

    for anchor in manifest.anchors:
        check(anchor.image_path, anchor.image_digest)
        check(anchor.embedding_path, anchor.embedding_digest)
    for cand in manifest.candidates:
        check(cand.image_path, cand.image_digest)
    sid = manifest.selection.get("selected_id")
    if sid is not None:
        check("selected.png", manifest.candidate_by_id(sid).image_digest)
    return problems


# --- training-triple export -------------------------------------------------
#
# File layout: magic "BASSTRN1" | u32 record count | records.  Each record is
# u32 length | payload, payload = u32 | E1 bytes | u32 | E2 bytes
# | u32 w | w bits as bytes.  E1/E2 use the embedding binary format.


def export_training_triples(run_dirs: list[str | Path], out_path: str | Path) -> int:
    """Write (E1, E2, winning swap vector) records for every completed run.

    Returns the number of records written; incomplete runs are skipped.
    """

    records: list[bytes] = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        manifest = read_run(run_dir)
        if manifest.status != "complete":
            continue
        sid = manifest.selection.get("selected_id")
        if sid is None:
            continue
        e1 = (run_dir / manifest.anchors[0].embedding_path).read_bytes()
        e2 = (run_dir / manifest.anchors[1].embedding_path).read_bytes()
        bits = manifest.candidate_by_id(sid).bits
        payload = (
            struct.pack("<I", len(e1))
            + e1
            + struct.pack("<I", len(e2))
            + e2
            + struct.pack("<I", len(bits))
            + bytes(int(b) for b in bits)
        )
        records.append(struct.pack("<I", len(payload)) + payload)
    blob = TRIPLES_MAGIC + struct.pack("<I", len(records)) + b"".join(records)
    Path(out_path).write_bytes(blob)
    return len(records)


def read_training_triples(
    path: str | Path,
) -> list[tuple[PromptEmbedding, PromptEmbedding, SwapVector]]:
    data = Path(path).read_bytes()
    if data[:8] != TRIPLES_MAGIC:
        raise SerializationError("bad triples magic")
    (count,) = struct.unpack_from("<I", data, 8)
    off = 12
    out = []
    for index in range(count):
        (rec_len,) = struct.unpack_from("<I", data, off)
        off += 4
        rec = data[off : off + rec_len]
        if len(rec) != rec_len:
            raise SerializationError(f"truncated record {index}")
        off += rec_len
        pos = 0
        (n1,) = struct.unpack_from("<I", rec, pos)
        pos += 4
        e1 = embedding_from_bytes(rec[pos : pos + n1])
        pos += n1
        (n2,) = struct.unpack_from("<I", rec, pos)
        pos += 4
        e2 = embedding_from_bytes(rec[pos : pos + n2])
        pos += n2
        (w,) = struct.unpack_from("<I", rec, pos)
        pos += 4
        bits = list(rec[pos : pos + w])
        out.append((e1, e2, SwapVector(bits=bits, id=index)))
    return out


# --- aggregate evaluation -----------------------------------------------


@dataclass
class EvalRow:
    run: str
    text_avg: float
    text_bal: float
    image_avg: float
    image_bal: float


@dataclass
class EvalReport:
    """Per-run balance numbers for the selected image, plus the column means."""

    rows: list[EvalRow]

    COLUMNS = ("text_avg", "text_bal", "image_avg", "image_bal")

    def means(self) -> dict:
        if not self.rows:
            return {c: float("nan") for c in self.COLUMNS}
        return {
            c: sum(getattr(r, c) for r in self.rows) / len(self.rows)
            for c in self.COLUMNS
        }

    def to_csv(self) -> str:
        lines = ["run," + ",".join(self.COLUMNS)]
        for row in self.rows:
            lines.append(
                ",".join([row.run] + [repr(getattr(row, c)) for c in self.COLUMNS])
            )
        means = self.means()
        lines.append(",".join(["mean"] + [repr(means[c]) for c in self.COLUMNS]))
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        header = f"{'run':<24}" + "".join(f"{c:>12}" for c in self.COLUMNS)
        lines = [header]
        for row in self.rows:
            lines.append(
                f"{row.run:<24}"
                + "".join(f"{getattr(row, c):>12.4f}" for c in self.COLUMNS)
            )
        means = self.means()
        lines.append(f"{'mean':<24}" + "".join(f"{means[c]:>12.4f}" for c in self.COLUMNS))
        return "\n".join(lines) + "\n"


def eval_report(manifests: list[tuple[str, RunManifest]]) -> EvalReport:
    """Aggregate the selected candidates' balance metrics across runs.

    ``manifests`` pairs a display label with each manifest; incomplete runs
    and runs without a selection are skipped.
    """

    rows = []
    for label, manifest in manifests:
        if manifest.status != "complete":
            continue
        sid = manifest.selection.get("selected_id")
        if sid is None:
            continue
        rec = manifest.candidate_by_id(sid)
        rows.append(
            EvalRow(
                run=label,
                text_avg=(rec.sim_p1 + rec.sim_p2) / 2.0,
                text_bal=rec.gap_text,
                image_avg=(rec.sim_i1 + rec.sim_i2) / 2.0,
                image_bal=rec.gap_image,
            )
        )
    return EvalReport(rows=rows)
