"""Command-line pipeline: ingest, preprocess, split, build-dataset, generate,
study-create, study-results.

Each stage writes its artifacts under the configured output directory plus a
run log with content digests, and skips itself on rerun when nothing it
depends on has changed. Exit codes: 0 success, 1 config or usage error,
2 data error, 3 backend or service error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import stat
import sys
from datetime import datetime, timezone
from pathlib import Path

from radpipe.config import PipelineConfig, load_pipeline_config
from radpipe.dataset import build_records, emit_manifest, serialize_records
from radpipe.errors import (
    AuthError,
    BackendUnavailable,
    ConfigError,
    DataError,
    IncompleteStudy,
    TransportError,
)
from radpipe.fsutil import atomic_write_bytes, atomic_write_text, sha256_file, sha256_text, sha256_tree
from radpipe.gateway import GenerationConfig, ResultsLedger, batch_generate
from radpipe.ingest import load_corpus, load_lexicon, parse_corpus, read_parsed, write_parsed
from radpipe.preprocess import filter_corpus, read_pairs, write_exclusions, write_pairs
from radpipe.splits import apply_official_split, random_split, read_assignment, write_assignment
from radpipe.store import StudyRepository
from radpipe.study import per_report_csv, summary_csv

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; route them through the
    # shared config-error path (exit 1) instead.
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="pipeline INI file")
    shared.add_argument("--out", help="output directory (overrides [paths] out_dir)")
    shared.add_argument("--seed", type=int, help="override the stage's configured seed")
    shared.add_argument(
        "--force",
        action="store_true",
        help="redo the stage even if up to date; for study-results, aggregate a partial study",
    )
    shared.add_argument(
        "--resume",
        action="store_true",
        help="generate: continue an interrupted batch from its results ledger",
    )

    parser = _Parser(prog="radpipe", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ingest", "load corpora and split reports into labeled sections"),
        ("preprocess", "filter reports into (findings, impression) pairs"),
        ("split", "assign train/val/test"),
        ("build-dataset", "emit instruction records and the training manifest"),
        ("generate", "batch-generate impressions from configured backends"),
        ("study-create", "create a blind rating study over generated impressions"),
        ("study-results", "aggregate and export study results"),
    ):
        sub = commands.add_parser(name, parents=[shared], help=help_text)
        if name == "study-results":
            sub.add_argument("--study-id", help="study to aggregate (default: the only one)")
    return parser


# --- run logs and skip detection ---


def _digest_config(payload: object) -> str:
    return sha256_text(json.dumps(payload, sort_keys=True, default=str))


def _log_path(out_dir: Path, stage: str) -> Path:
    return out_dir / "logs" / f"{stage}.json"


def _write_run_log(
    out_dir: Path,
    stage: str,
    config_digest: str,
    input_digests: dict[str, str],
    outputs: list[Path],
    details: dict,
) -> None:
    payload = {
        "stage": stage,
        "completed_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_digest": config_digest,
        "input_digests": input_digests,
        "outputs": {
            p.relative_to(out_dir).as_posix(): sha256_file(p) for p in outputs
        },
        "details": details,
    }
    atomic_write_text(_log_path(out_dir, stage), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _up_to_date(
    out_dir: Path, stage: str, config_digest: str, input_digests: dict[str, str]
) -> bool:
    log_path = _log_path(out_dir, stage)
    if not log_path.exists():
        return False
    try:
        payload = json.loads(log_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    if payload.get("config_digest") != config_digest:
        return False
    if payload.get("input_digests") != input_digests:
        return False
    for rel, digest in payload.get("outputs", {}).items():
        target = out_dir / rel
        if not target.exists() or sha256_file(target) != digest:
            return False
    return True


# --- stage implementations ---


def _resolve_out_dir(cfg: PipelineConfig, args) -> Path:
    out = Path(args.out) if args.out else cfg.out_dir
    if out is None:
        raise ConfigError("no output directory: set [paths] out_dir or pass --out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_ingest(cfg: PipelineConfig, out_dir: Path, args) -> None:
    if not cfg.corpus_roots:
        raise ConfigError("config defines no [corpus] sources")
    lexicon = load_lexicon(cfg.lexicon_file) if cfg.lexicon_file else None
    input_digests = {
        f"corpus:{source}": sha256_tree(root)
        for source, root in sorted(cfg.corpus_roots.items())
        if Path(root).is_dir()
    }
    if cfg.lexicon_file:
        input_digests["lexicon"] = sha256_file(cfg.lexicon_file)
    config_digest = _digest_config({"sources": sorted(cfg.corpus_roots)})
    if not args.force and _up_to_date(out_dir, "ingest", config_digest, input_digests):
        print("ingest: up to date, skipping")
        return

    outputs: list[Path] = []
    details: dict = {}
    for source, root in sorted(cfg.corpus_roots.items()):
        load = load_corpus(root, source)
        parsed = parse_corpus(load.reports, lexicon)
        target = out_dir / "ingest" / f"{source}.jsonl"
        write_parsed(parsed, target)
        outputs.append(target)
        details[source] = {"reports": len(parsed), "skipped_files": load.skip_count}
        print(f"ingest: {source}: {len(parsed)} reports ({load.skip_count} files skipped)")
        for skip in load.skipped:
            print(f"ingest:   skipped {skip.path}: {skip.reason}")
    _write_run_log(out_dir, "ingest", config_digest, input_digests, outputs, details)


def cmd_preprocess(cfg: PipelineConfig, out_dir: Path, args) -> None:
    sources = sorted(cfg.corpus_roots)
    if not sources:
        raise ConfigError("config defines no [corpus] sources")
    parsed = []
    input_digests = {}
    for source in sources:
        source_file = out_dir / "ingest" / f"{source}.jsonl"
        if not source_file.exists():
            raise DataError(f"missing {source_file}; run the ingest stage first")
        input_digests[f"ingest:{source}"] = sha256_file(source_file)
        parsed.extend(read_parsed(source_file))
    config_digest = _digest_config(
        {
            "min_findings_words": cfg.filter_policy.min_findings_words,
            "min_impression_words": cfg.filter_policy.min_impression_words,
            "sections_to_remove": (
                sorted(cfg.filter_policy.sections_to_remove)
                if cfg.filter_policy.sections_to_remove is not None
                else None
            ),
            "substitutions": cfg.substitutions.as_dict(),
        }
    )
    if not args.force and _up_to_date(out_dir, "preprocess", config_digest, input_digests):
        print("preprocess: up to date, skipping")
        return

    outcome = filter_corpus(parsed, cfg.filter_policy, cfg.substitutions)
    pairs_path = out_dir / "preprocess" / "pairs.jsonl"
    exclusions_path = out_dir / "preprocess" / "exclusions.jsonl"
    write_pairs(outcome.pairs, pairs_path)
    write_exclusions(outcome.exclusions, exclusions_path)
    summary = outcome.summary.as_dict()
    _write_run_log(
        out_dir,
        "preprocess",
        config_digest,
        input_digests,
        [pairs_path, exclusions_path],
        summary,
    )
    excluded = summary["excluded"]
    print(
        f"preprocess: {summary['total']} reports -> {summary['eligible']} eligible pairs "
        f"(MissingSection={excluded['MissingSection']}, "
        f"FindingsTooShort={excluded['FindingsTooShort']}, "
        f"ImpressionTooShort={excluded['ImpressionTooShort']})"
    )


def cmd_split(cfg: PipelineConfig, out_dir: Path, args) -> None:
    pairs_path = out_dir / "preprocess" / "pairs.jsonl"
    if not pairs_path.exists():
        raise DataError(f"missing {pairs_path}; run the preprocess stage first")
    spec = cfg.split_spec
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    input_digests = {"pairs": sha256_file(pairs_path)}
    config_payload: dict = {"mode": spec.mode}
    if spec.mode == "official":
        input_digests["split_file"] = sha256_file(cfg.split_file)
    else:
        config_payload.update({"ratio": list(spec.ratio), "seed": spec.seed})
    config_digest = _digest_config(config_payload)
    if not args.force and _up_to_date(out_dir, "split", config_digest, input_digests):
        print("split: up to date, skipping")
        return

    pairs = read_pairs(pairs_path)
    if spec.mode == "official":
        assignment = apply_official_split(pairs, cfg.split_file)
    else:
        assignment = random_split(pairs, spec)
    target = out_dir / "split" / "assignment.tsv"
    write_assignment(assignment, target)
    sizes = assignment.sizes()
    details = {
        "sizes": sizes,
        "unmapped": len(assignment.unmapped_ids),
        "metadata": dict(assignment.metadata),
    }
    _write_run_log(out_dir, "split", config_digest, input_digests, [target], details)
    line = f"split: train={sizes['train']} val={sizes['val']} test={sizes['test']}"
    if assignment.unmapped_ids:
        line += f" (dropped {len(assignment.unmapped_ids)} pairs absent from the official file)"
    print(line)


def cmd_build_dataset(cfg: PipelineConfig, out_dir: Path, args) -> None:
    pairs_path = out_dir / "preprocess" / "pairs.jsonl"
    assignment_path = out_dir / "split" / "assignment.tsv"
    for needed, hint in ((pairs_path, "preprocess"), (assignment_path, "split")):
        if not needed.exists():
            raise DataError(f"missing {needed}; run the {hint} stage first")
    input_digests = {
        "pairs": sha256_file(pairs_path),
        "assignment": sha256_file(assignment_path),
    }
    config_digest = _digest_config(
        {
            "template_id": cfg.template.template_id,
            "instruction": cfg.template.instruction_text,
            "manifest": dataclasses.asdict(cfg.manifest),
        }
    )
    if not args.force and _up_to_date(out_dir, "build-dataset", config_digest, input_digests):
        print("build-dataset: up to date, skipping")
        return

    pairs = read_pairs(pairs_path)
    assignment = read_assignment(assignment_path)
    mapped = [p for p in pairs if p.report_id in assignment.by_id]
    dropped = len(pairs) - len(mapped)
    grouped = build_records(mapped, assignment, cfg.template)
    outputs = []
    counts = {}
    for split_name, records in grouped.items():
        target = out_dir / "dataset" / f"{split_name}.jsonl"
        atomic_write_bytes(target, serialize_records(records))
        outputs.append(target)
        counts[split_name] = len(records)
    manifest = dataclasses.replace(cfg.manifest, dataset_path="train.jsonl")
    manifest_path = out_dir / "dataset" / "manifest.txt"
    emit_manifest(manifest, manifest_path)
    outputs.append(manifest_path)
    details = {"records": counts, "dropped_unmapped_pairs": dropped}
    _write_run_log(out_dir, "build-dataset", config_digest, input_digests, outputs, details)
    print(
        f"build-dataset: train={counts['train']} val={counts['val']} test={counts['test']}"
        + (f" (dropped {dropped} unmapped pairs)" if dropped else "")
    )


def _select_split_pairs(cfg: PipelineConfig, out_dir: Path):
    pairs_path = out_dir / "preprocess" / "pairs.jsonl"
    assignment_path = out_dir / "split" / "assignment.tsv"
    for needed, hint in ((pairs_path, "preprocess"), (assignment_path, "split")):
        if not needed.exists():
            raise DataError(f"missing {needed}; run the {hint} stage first")
    pairs = read_pairs(pairs_path)
    assignment = read_assignment(assignment_path)
    wanted = cfg.generation.split
    return [p for p in pairs if assignment.by_id.get(p.report_id) == wanted]


def cmd_generate(cfg: PipelineConfig, out_dir: Path, args) -> None:
    if not cfg.backends:
        raise ConfigError("config defines no [backend.<label>] sections")
    selected = _select_split_pairs(cfg, out_dir)
    ledger_path = out_dir / "generate" / "results.jsonl"
    if ledger_path.exists() and not args.resume:
        raise DataError(
            f"{ledger_path} already exists; pass --resume to continue that batch "
            "or remove the file to start over"
        )
    ledger_path.parent.mkdir(parents=True, exist_ok=True)
    configs = [
        GenerationConfig(
            model_label=label,
            endpoint=endpoint,
            decoding=cfg.generation.decoding,
            retry=cfg.generation.retry,
            timeout_ms=cfg.generation.timeout_ms,
        )
        for label, endpoint in sorted(cfg.backends.items())
    ]
    results = batch_generate(
        selected,
        configs,
        cfg.template,
        ledger=ledger_path,
        max_workers=cfg.generation.max_workers,
    )
    empties = sum(1 for r in results if r.is_empty)
    details = {
        "split": cfg.generation.split,
        "pairs": len(selected),
        "models": [c.model_label for c in configs],
        "results": len(results),
        "empty_generations": empties,
    }
    config_digest = _digest_config(
        {"split": cfg.generation.split, "models": sorted(cfg.backends)}
    )
    _write_run_log(out_dir, "generate", config_digest, {}, [ledger_path], details)
    print(
        f"generate: {len(results)} results for {len(selected)} pairs x "
        f"{len(configs)} models ({empties} empty)"
    )


def cmd_study_create(cfg: PipelineConfig, out_dir: Path, args) -> None:
    if not cfg.study.rater_ids:
        raise ConfigError("[study] raters must name at least one rater")
    labels = list(cfg.study.model_labels) or sorted(cfg.backends)
    if not labels:
        raise ConfigError("no models: set [study] models or define [backend.*] sections")
    ledger_path = out_dir / "generate" / "results.jsonl"
    if not ledger_path.exists():
        raise DataError(f"missing {ledger_path}; run the generate stage first")
    selected = _select_split_pairs(cfg, out_dir)
    pairs_by_source: dict[str, list] = {}
    for pair in selected:
        pairs_by_source.setdefault(pair.source, []).append(pair)
    generations = {
        cell: result.text for cell, result in ResultsLedger(ledger_path).load().items()
    }
    seed = args.seed if args.seed is not None else cfg.study.seed

    repository = StudyRepository(out_dir / "study" / "events.log")
    study = repository.create_study(
        pairs_by_source,
        generations,
        labels,
        list(cfg.study.rater_ids),
        seed,
        cfg.study.n_per_source,
        include_reference=cfg.study.include_reference,
    )
    token_lines = []
    expires_at = ""
    for rater_id in study.rater_ids:
        token, expires_at = repository.issue_token(study.study_id, rater_id)
        token_lines.append(f"{rater_id}\t{token}")
    token_path = out_dir / "study" / f"tokens-{study.study_id}.tsv"
    atomic_write_text(token_path, "".join(line + "\n" for line in token_lines))
    token_path.chmod(stat.S_IRUSR | stat.S_IWUSR)
    repository.close()

    details = {
        "study_id": study.study_id,
        "items": len(study.items),
        "sampled_reports": len(study.sampled_report_ids),
        "models": list(study.model_labels),
        "raters": list(study.rater_ids),
        "seed": seed,
        "tokens_expire_at": expires_at,
    }
    config_digest = _digest_config(
        {"n_per_source": cfg.study.n_per_source, "models": labels, "raters": list(cfg.study.rater_ids)}
    )
    _write_run_log(out_dir, "study-create", config_digest, {}, [token_path], details)
    print(
        f"study-create: {study.study_id}: {len(study.sampled_report_ids)} reports x "
        f"{len(study.model_labels)} models = {len(study.items)} items, "
        f"{len(study.rater_ids)} raters"
    )
    print(f"study-create: rater tokens written to {token_path} (expire {expires_at})")


def cmd_study_results(cfg: PipelineConfig, out_dir: Path, args) -> None:
    log_path = out_dir / "study" / "events.log"
    if not log_path.exists():
        raise DataError(f"missing {log_path}; run the study-create stage first")
    repository = StudyRepository(log_path)
    try:
        study_id = args.study_id
        if not study_id:
            studies = repository.list_studies()
            if len(studies) != 1:
                raise ConfigError(
                    f"pass --study-id; store holds {len(studies)} studies: {', '.join(studies)}"
                )
            study_id = studies[0]
        result = repository.aggregate(study_id, force=args.force)
    finally:
        repository.close()
    summary = summary_csv(result)
    per_report = per_report_csv(result)
    summary_path = out_dir / "results" / f"{study_id}.summary.csv"
    per_report_path = out_dir / "results" / f"{study_id}.per_report.csv"
    atomic_write_text(summary_path, summary)
    atomic_write_text(per_report_path, per_report)
    details = {
        "study_id": study_id,
        "n_reports": result.n_reports,
        "n_raters": result.n_raters,
        "missing_cells": len(result.missing_cells),
        "forced": bool(args.force and result.missing_cells),
    }
    _write_run_log(
        out_dir, "study-results", _digest_config({"study_id": study_id}), {},
        [summary_path, per_report_path], details,
    )
    print(f"study-results: wrote {summary_path} and {per_report_path}")
    sys.stdout.write(summary)


_COMMANDS = {
    "ingest": cmd_ingest,
    "preprocess": cmd_preprocess,
    "split": cmd_split,
    "build-dataset": cmd_build_dataset,
    "generate": cmd_generate,
    "study-create": cmd_study_create,
    "study-results": cmd_study_results,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        cfg = load_pipeline_config(args.config)
        out_dir = _resolve_out_dir(cfg, args)
        _COMMANDS[args.command](cfg, out_dir, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, IncompleteStudy) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (BackendUnavailable, TransportError, AuthError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
