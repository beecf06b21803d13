"""Pipeline configuration and stages.

Each stage reads its prerequisite artifacts from the work directory, writes
its own artifacts atomically, and records a manifest with input/output
hashes plus the effective-config fingerprint, so reruns are idempotent and
ablation runs are self-describing.  No artifact contains wall-clock time.
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import corpus as corpus_mod
from . import gerrit, linediff, seqbuild
from .evaluate import render_report, topk_accuracy
from .infer import beam_search, hypotheses_to_suggestions
from .neural.model import ModelConfig, PointerGenerator, load_checkpoint, save_checkpoint
from .neural.training import TrainingConfig, TrainingDiverged, train
from .storage import (
    canonical_json,
    read_json,
    read_jsonl,
    sha256_bytes,
    sha256_file,
    write_json,
    write_jsonl,
)

log = logging.getLogger(__name__)

ENV_FIXTURES = "REVFIX_FIXTURES"
ENV_ENDPOINT = "REVFIX_GERRIT_BASE"


class ConfigError(ValueError):
    pass


class ConfigConflict(ConfigError):
    pass


class StageError(RuntimeError):
    def __init__(self, message: str, missing_stage: str = ""):
        super().__init__(message)
        self.missing_stage = missing_stage


@dataclass
class PipelineConfig:
    # environment (not part of the fingerprint)
    workdir: str = "artifacts"
    fixtures: str = ""
    endpoint: str = ""
    auth_token: str = ""
    jobs: int = 1
    force: bool = False
    # mining
    query: str = "status:merged"
    page_size: int = 100
    rate_limit: float = 5.0
    # corpus
    test_fraction: float = 0.05
    near_window: int = 5  # review-line to change-anchor distance cap
    # sequence construction
    variant: str = "cc"
    token_mode: str = "hard"
    context_window: int = 400
    comment_limit: int = 200
    target_limit: int = 100
    include_insert_at_head: bool = False
    # vocabulary
    code_vocab_size: int = 2000
    comment_vocab_size: int = 8000
    # model
    embed_dim: int = 256
    encoder_hidden: int = 128
    coverage: bool = False
    coverage_weight: float = 1.0
    dropout: float = 0.3
    seed: int = 1
    # training
    steps: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.15
    clip_norm: float = 2.0
    eval_interval: int = 200
    patience: int = 2
    valid_fraction: float = 0.1
    # inference
    beam_k: int = 10
    top_n: int = 10
    length_normalize: bool = False
    merge_duplicates: bool = True

    NON_SEMANTIC = ("workdir", "fixtures", "endpoint", "auth_token", "jobs", "force")

    def __post_init__(self):
        if self.variant not in ("cc", "c"):
            raise ConfigError(f"variant must be cc or c, got {self.variant!r}")
        if self.token_mode not in ("hard", "soft"):
            raise ConfigError(f"token_mode must be hard or soft, got {self.token_mode!r}")
        if self.top_n > self.beam_k:
            raise ConfigError("top_n cannot exceed beam_k")
        if not self.fixtures:
            self.fixtures = os.environ.get(ENV_FIXTURES, "")
        if not self.endpoint:
            self.endpoint = os.environ.get(ENV_ENDPOINT, "")

    def semantic_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k in self.NON_SEMANTIC:
            d.pop(k, None)
        return d

    def fingerprint(self) -> str:
        return sha256_bytes(canonical_json(self.semantic_dict()).encode("utf-8"))[:16]

    @property
    def work(self) -> Path:
        return Path(self.workdir)

    def source_cap(self) -> int:
        return self.context_window + (self.comment_limit if self.variant == "cc" else 0)


def load_config(path: Optional[Path] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Config file (JSON) plus non-None flag overrides."""
    values: dict = {}
    if path is not None:
        raw = read_json(Path(path))
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        values.update(raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return PipelineConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e)) from e


# artifact name -> stage that produces it
ARTIFACT_STAGE = {
    "events.jsonl": "mine",
    "triples.jsonl": "extract",
    "split.json": "extract",
    "localized.jsonl": "localize",
    "vocab.txt": "build-vocab",
    "dataset_train.jsonl": "prepare",
    "dataset_test.jsonl": "prepare",
    "model.ckpt": "train",
    "suggestions.json": "suggest",
    "report.json": "evaluate",
}

STAGE_INPUTS = {
    "mine": [],
    "extract": ["events.jsonl"],
    "localize": ["triples.jsonl"],
    "build-vocab": ["triples.jsonl", "split.json", "localized.jsonl"],
    "prepare": ["triples.jsonl", "split.json", "localized.jsonl", "vocab.txt"],
    "train": ["dataset_train.jsonl", "vocab.txt"],
    "suggest": ["model.ckpt", "vocab.txt", "dataset_test.jsonl", "localized.jsonl", "triples.jsonl"],
    "evaluate": ["suggestions.json", "dataset_test.jsonl", "localized.jsonl", "triples.jsonl"],
    "report": ["report.json"],
}

STAGE_ORDER = [
    "mine",
    "extract",
    "localize",
    "build-vocab",
    "prepare",
    "train",
    "suggest",
    "evaluate",
    "report",
]


def _require_inputs(cfg: PipelineConfig, stage: str) -> Dict[str, Path]:
    paths = {}
    for name in STAGE_INPUTS[stage]:
        p = cfg.work / name
        if not p.exists():
            producer = ARTIFACT_STAGE[name]
            raise StageError(
                f"stage '{stage}' needs {name}; run '{producer}' first",
                missing_stage=producer,
            )
        paths[name] = p
    return paths


def _check_fingerprints(cfg: PipelineConfig, stage: str) -> None:
    """Refuse to mix artifacts produced under a different configuration."""
    if cfg.force:
        return
    fp = cfg.fingerprint()
    for name in STAGE_INPUTS[stage]:
        manifest_path = cfg.work / "manifests" / f"{ARTIFACT_STAGE[name]}.json"
        if manifest_path.exists():
            recorded = read_json(manifest_path).get("config_fingerprint")
            if recorded and recorded != fp:
                raise ConfigConflict(
                    f"artifact {name} was produced under config {recorded}, "
                    f"current config is {fp}; rerun upstream stages or use --force"
                )


def _write_manifest(cfg: PipelineConfig, stage: str, inputs: Dict[str, Path], outputs: List[Path]):
    manifest = {
        "stage": stage,
        "config_fingerprint": cfg.fingerprint(),
        "config": cfg.semantic_dict(),
        "inputs": {name: sha256_file(p) for name, p in sorted(inputs.items())},
        "outputs": {p.name: sha256_file(p) for p in sorted(outputs)},
    }
    write_json(cfg.work / "manifests" / f"{stage}.json", manifest)


# ---------------------------------------------------------------------------
# stages


def stage_mine(cfg: PipelineConfig) -> List[Path]:
    if cfg.fixtures:
        transport = gerrit.FixtureTransport(Path(cfg.fixtures))
    elif cfg.endpoint:
        transport = gerrit.HttpTransport(
            cfg.endpoint, token=cfg.auth_token or None, rate=cfg.rate_limit
        )
    else:
        raise ConfigError(
            "mine needs a fixture directory (--fixtures / $REVFIX_FIXTURES) "
            "or an endpoint (--endpoint / $REVFIX_GERRIT_BASE)"
        )
    client = gerrit.GerritClient(transport)
    events, skips = gerrit.mine_events(client, cfg.query, cfg.page_size, jobs=cfg.jobs)
    out = cfg.work / "events.jsonl"
    write_jsonl(out, (e.to_dict() for e in events))
    report = cfg.work / "mine_report.json"
    write_json(report, {"events": len(events), "skips": skips.to_dict()})
    return [out, report]


def stage_extract(cfg: PipelineConfig) -> List[Path]:
    events = list(read_jsonl(cfg.work / "events.jsonl"))
    triples, ereport = corpus_mod.extract_triples(events)
    before_dedup = len(triples)
    triples = corpus_mod.dedup(triples)
    split = corpus_mod.chronological_split(triples, cfg.test_fraction)
    t_path = cfg.work / "triples.jsonl"
    write_jsonl(t_path, (t.to_dict() for t in triples))
    s_path = cfg.work / "split.json"
    write_json(s_path, split.to_dict())
    r_path = cfg.work / "extract_report.json"
    write_json(
        r_path,
        {
            "extract": ereport.to_dict(),
            "duplicates_removed": before_dedup - len(triples),
            "triples": len(triples),
            "train": len(split.train),
            "test": len(split.test),
        },
    )
    return [t_path, s_path, r_path]


def stage_localize(cfg: PipelineConfig) -> List[Path]:
    rows = []
    distances = []
    dropped_out_of_window = 0
    no_hunks = 0
    kinds: Dict[str, int] = {}
    for rec in read_jsonl(cfg.work / "triples.jsonl"):
        triple = corpus_mod.ReviewTriple.from_dict(rec)
        hunks = linediff.line_diff(triple.code_before, triple.code_after)
        if not hunks:
            no_hunks += 1
            continue
        hunk = linediff.select_relevant_hunk(hunks, triple.review_line, cfg.near_window)
        if hunk is None:
            dropped_out_of_window += 1
            continue
        region = linediff.extract_edit_region(hunk, triple.code_before, triple.code_after)
        dist = linediff.hunk_distance(hunk, triple.review_line)
        distances.append(dist)
        kinds[region.kind] = kinds.get(region.kind, 0) + 1
        row = {"triple_id": rec["triple_id"], "distance": dist}
        row.update(region.to_dict())
        rows.append(row)
    out = cfg.work / "localized.jsonl"
    write_jsonl(out, rows)
    report = cfg.work / "localize_report.json"
    write_json(
        report,
        {
            "localized": len(rows),
            "dropped_out_of_window": dropped_out_of_window,
            "no_hunks": no_hunks,
            "kinds": dict(sorted(kinds.items())),
            # distance = |review_line - hunk anchor| in lines of the old file
            "distance_histogram": {
                str(k): v for k, v in linediff.distance_histogram(distances).items()
            },
            "near_window": cfg.near_window,
        },
    )
    return [out, report]


def _load_triples(cfg: PipelineConfig) -> Dict[str, corpus_mod.ReviewTriple]:
    return {
        rec["triple_id"]: corpus_mod.ReviewTriple.from_dict(rec)
        for rec in read_jsonl(cfg.work / "triples.jsonl")
    }


def _load_localized(cfg: PipelineConfig) -> Dict[str, dict]:
    return {rec["triple_id"]: rec for rec in read_jsonl(cfg.work / "localized.jsonl")}


def _build_samples(
    cfg: PipelineConfig, ids: List[str], triples, localized
) -> Tuple[List[seqbuild.TrainingSample], Dict[str, int]]:
    samples = []
    rejections: Dict[str, int] = {}
    for tid in ids:
        rec = localized.get(tid)
        if rec is None:
            rejections["not-localized"] = rejections.get("not-localized", 0) + 1
            continue
        triple = triples[tid]
        region = linediff.EditRegion.from_dict(rec)
        try:
            samples.append(
                seqbuild.build_training_sample(
                    sample_id=tid,
                    code_before=triple.code_before,
                    review_comment=triple.review_comment,
                    region=region,
                    variant=cfg.variant,
                    mode=cfg.token_mode,
                    window=cfg.context_window,
                    comment_limit=cfg.comment_limit,
                    target_limit=cfg.target_limit,
                    include_insert_at_head=cfg.include_insert_at_head,
                )
            )
        except seqbuild.SampleRejected as e:
            rejections[e.reason] = rejections.get(e.reason, 0) + 1
    samples.sort(key=lambda s: s.sample_id)
    return samples, rejections


def stage_build_vocab(cfg: PipelineConfig) -> List[Path]:
    triples = _load_triples(cfg)
    localized = _load_localized(cfg)
    split = corpus_mod.SplitManifest.from_dict(read_json(cfg.work / "split.json"))
    train_samples, rejections = _build_samples(cfg, split.train, triples, localized)
    code_counts, comment_counts = seqbuild.collect_token_counts(train_samples)
    vocab, vreport = seqbuild.build_vocab(
        code_counts, comment_counts, cfg.code_vocab_size, cfg.comment_vocab_size
    )
    v_path = cfg.work / "vocab.txt"
    vocab.save(v_path)
    r_path = cfg.work / "vocab_report.json"
    write_json(
        r_path,
        {
            "coverage": vreport.to_dict(),
            "code_vocab": len(vocab.code),
            "comment_vocab": len(vocab.comment),
            "train_samples_counted": len(train_samples),
            "rejections": dict(sorted(rejections.items())),
        },
    )
    return [v_path, r_path]


def stage_prepare(cfg: PipelineConfig) -> List[Path]:
    triples = _load_triples(cfg)
    localized = _load_localized(cfg)
    split = corpus_mod.SplitManifest.from_dict(read_json(cfg.work / "split.json"))
    vocab = seqbuild.DualVocabulary.load(cfg.work / "vocab.txt")
    outputs = []
    report: Dict[str, object] = {}
    for name, ids in (("train", split.train), ("test", split.test)):
        samples, rejections = _build_samples(cfg, ids, triples, localized)
        unreachable = 0
        for s in samples:
            unreachable += seqbuild.encode_sample(s, vocab).unreachable_targets
        path = cfg.work / f"dataset_{name}.jsonl"
        write_jsonl(path, (s.to_dict() for s in samples))
        outputs.append(path)
        report[name] = {
            "samples": len(samples),
            "rejections": dict(sorted(rejections.items())),
            "unreachable_target_tokens": unreachable,
        }
    r_path = cfg.work / "prepare_report.json"
    write_json(r_path, report)
    outputs.append(r_path)
    return outputs


def _model_config(cfg: PipelineConfig, vocab: seqbuild.DualVocabulary) -> ModelConfig:
    return ModelConfig(
        source_vocab_size=vocab.source_size(cfg.variant),
        target_vocab_size=vocab.target_size,
        embed_dim=cfg.embed_dim,
        encoder_hidden=cfg.encoder_hidden,
        decoder_hidden=2 * cfg.encoder_hidden,
        max_source_len=cfg.source_cap(),
        max_target_len=cfg.target_limit,
        coverage_enabled=cfg.coverage,
        coverage_weight=cfg.coverage_weight,
        dropout=cfg.dropout,
        seed=cfg.seed,
    )


def stage_train(cfg: PipelineConfig) -> List[Path]:
    vocab = seqbuild.DualVocabulary.load(cfg.work / "vocab.txt")
    samples = [
        seqbuild.TrainingSample.from_dict(rec)
        for rec in read_jsonl(cfg.work / "dataset_train.jsonl")
    ]
    if not samples:
        raise StageError("dataset_train.jsonl holds no samples")
    encoded = [seqbuild.encode_sample(s, vocab) for s in samples]
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(encoded))
    n_valid = int(cfg.valid_fraction * len(encoded))
    valid = [encoded[i] for i in order[:n_valid]]
    train_set = [encoded[i] for i in order[n_valid:]] or encoded
    model = PointerGenerator(_model_config(cfg, vocab))
    tcfg = TrainingConfig(
        steps=cfg.steps,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        clip_norm=cfg.clip_norm,
        eval_interval=cfg.eval_interval,
        patience=cfg.patience,
        seed=cfg.seed,
    )
    result = train(model, train_set, tcfg, valid_samples=valid)
    ckpt = cfg.work / "model.ckpt"
    save_checkpoint(ckpt, model)
    log_path = cfg.work / "train_log.json"
    write_json(log_path, result.to_dict())
    if result.diverged:
        raise TrainingDiverged(
            f"training diverged; best checkpoint (step {result.best_step}) kept at {ckpt}"
        )
    return [ckpt, log_path]


def stage_suggest(cfg: PipelineConfig) -> List[Path]:
    vocab = seqbuild.DualVocabulary.load(cfg.work / "vocab.txt")
    model = load_checkpoint(cfg.work / "model.ckpt")
    triples = _load_triples(cfg)
    localized = _load_localized(cfg)
    samples = [
        seqbuild.TrainingSample.from_dict(rec)
        for rec in read_jsonl(cfg.work / "dataset_test.jsonl")
    ]
    fixed_dir = cfg.work / "fixed"
    fixed_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    written: List[Path] = []
    for sample in samples:
        enc_sample = seqbuild.encode_sample(sample, vocab)
        batch_src = np.array([enc_sample.src_ids], dtype=np.int64)
        mask = np.ones_like(batch_src, dtype=model.config.dtype)
        ext = np.array([enc_sample.src_ext_ids], dtype=np.int64)
        enc = model.encode(batch_src, mask, ext, len(enc_sample.ext_surfaces))
        hyps = beam_search(
            model,
            enc,
            k=cfg.beam_k,
            n=cfg.beam_k,
            max_len=cfg.target_limit,
            length_normalize=cfg.length_normalize,
        )
        region = linediff.EditRegion.from_dict(localized[sample.sample_id])
        suggestions = hypotheses_to_suggestions(
            hyps,
            enc_sample,
            vocab,
            triples[sample.sample_id].code_before,
            region,
            merge_duplicates=cfg.merge_duplicates,
            limit=cfg.top_n,
            length_normalize=cfg.length_normalize,
            mode=cfg.token_mode,
        )
        row = {"sample_id": sample.sample_id, "suggestions": []}
        for s in suggestions:
            entry = s.to_dict()
            if cfg.token_mode == "hard":
                fixed_path = fixed_dir / f"{sample.sample_id}_{s.rank}.java"
                fixed_path.write_text(s.fixed_file, encoding="utf-8")
                written.append(fixed_path)
                entry["fixed_file_path"] = str(fixed_path.relative_to(cfg.work))
            row["suggestions"].append(entry)
        entries.append(row)
    out = cfg.work / "suggestions.json"
    write_json(out, {"samples": entries})
    return [out] + written


def _gold_text(cfg: PipelineConfig, sample: seqbuild.TrainingSample, localized_rec: dict) -> str:
    if cfg.token_mode == "soft":
        return " ".join(sample.target_tokens)
    return "\n".join(localized_rec["target_lines"])


def stage_evaluate(cfg: PipelineConfig) -> List[Path]:
    triples = _load_triples(cfg)
    localized = _load_localized(cfg)
    samples = {
        rec["sample_id"]: seqbuild.TrainingSample.from_dict(rec)
        for rec in read_jsonl(cfg.work / "dataset_test.jsonl")
    }
    suggestions = read_json(cfg.work / "suggestions.json")["samples"]
    predictions = {
        row["sample_id"]: [s["target_text"] for s in row["suggestions"]]
        for row in suggestions
    }
    golds = {}
    projects = {}
    labels = {}
    for sid, sample in samples.items():
        golds[sid] = _gold_text(cfg, sample, localized[sid])
        projects[sid] = triples[sid].project
        labels[sid] = triples[sid].taxonomy_label
    ks = tuple(sorted({1, 5, min(10, cfg.top_n), cfg.top_n}))
    report = topk_accuracy(
        predictions,
        golds,
        ks=ks,
        projects=projects,
        labels=labels,
        config_fingerprint=cfg.fingerprint(),
        config_summary={
            "variant": cfg.variant,
            "token_mode": cfg.token_mode,
            "context_window": cfg.context_window,
            "comment_limit": cfg.comment_limit,
            "target_limit": cfg.target_limit,
            "code_vocab_size": cfg.code_vocab_size,
            "comment_vocab_size": cfg.comment_vocab_size,
            "embed_dim": cfg.embed_dim,
            "coverage": cfg.coverage,
            "beam_k": cfg.beam_k,
            "seed": cfg.seed,
        },
    )
    j_path = cfg.work / "report.json"
    write_json(j_path, report.to_dict())
    t_path = cfg.work / "report.txt"
    title = f"exact-match accuracy (variant={cfg.variant}, mode={cfg.token_mode})"
    from .storage import atomic_write_text

    atomic_write_text(t_path, render_report(report, title))
    return [j_path, t_path]


def stage_report(cfg: PipelineConfig, csv_path: Optional[Path] = None, row_name: str = "run") -> List[Path]:
    text = (cfg.work / "report.txt").read_text(encoding="utf-8")
    print(text, end="")
    outputs: List[Path] = []
    if csv_path is not None:
        raw = read_json(cfg.work / "report.json")
        line = ",".join(
            [row_name, str(raw["total"])]
            + [str(raw["accuracy_pct"][k]) for k in sorted(raw["accuracy_pct"], key=int)]
            + [raw["config_fingerprint"]]
        )
        with open(csv_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        outputs.append(Path(csv_path))
    return outputs


STAGE_FUNCS = {
    "mine": stage_mine,
    "extract": stage_extract,
    "localize": stage_localize,
    "build-vocab": stage_build_vocab,
    "prepare": stage_prepare,
    "train": stage_train,
    "suggest": stage_suggest,
    "evaluate": stage_evaluate,
}


def run_stage(stage: str, cfg: PipelineConfig) -> List[Path]:
    """Validate prerequisites and fingerprints, run, record a manifest."""
    if stage == "report":
        _require_inputs(cfg, stage)
        return stage_report(cfg)
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage: {stage}")
    cfg.work.mkdir(parents=True, exist_ok=True)
    inputs = _require_inputs(cfg, stage)
    _check_fingerprints(cfg, stage)
    outputs = STAGE_FUNCS[stage](cfg)
    _write_manifest(cfg, stage, inputs, outputs)
    return outputs


def run_all(cfg: PipelineConfig) -> None:
    for stage in STAGE_ORDER[:-1]:
        log.info("running stage %s", stage)
        run_stage(stage, cfg)
