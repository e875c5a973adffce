"""Command-line orchestration of the health pipeline.

Subcommands mirror the pipeline stages::

    oss-health ingest  --config run.cfg        # archives -> event store
    oss-health metrics --config run.cfg        # store -> metrics.csv
    oss-health efa     --config run.cfg        # metrics.csv -> efa_report.{json,txt}
    oss-health sem     --config run.cfg --model health.sem
    oss-health report  --config run.cfg        # combined summary

Configuration is a flat ``key = value`` text file; every key can be
overridden by a command flag of the same name.  All outputs are
deterministic for a fixed config and seed: JSON is written with sorted
keys and every report embeds the artifact version and a hash of the
resolved configuration.

Exit codes: 0 success, 1 user error (bad input, missing files), 2
internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlparse

import numpy as np

from . import __version__, dataset, factor, metrics, projects, sem
from .events import EventType, parse_archive_file
from .store import EventStore

log = logging.getLogger("oss_health")


class UserError(Exception):
    """Input problem attributable to the invocation, not the code."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    archives: str = ""
    projects: str = ""
    overrides: str = ""
    ranks: str = ""
    criticality_config: str = ""
    model: str = ""
    as_of: str = ""
    split_fraction: float = 0.51
    seed: int = 0
    factors: str = "auto"
    cutoff: float = 0.3
    out: str = "out"

    def __post_init__(self) -> None:
        if not 0.0 < self.split_fraction < 1.0:
            raise UserError(f"split_fraction must be in (0, 1), got {self.split_fraction}")
        if self.cutoff <= 0:
            raise UserError(f"cutoff must be positive, got {self.cutoff}")
        if self.factors != "auto":
            try:
                int(self.factors)
            except ValueError:
                raise UserError(f"factors must be 'auto' or an integer, got {self.factors!r}") from None

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def store_dir(self) -> Path:
        return self.out_dir / "store"

    def digest(self) -> str:
        blob = "\n".join(f"{f.name}={getattr(self, f.name)}" for f in fields(self))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def load_config(path: str | None, overrides: dict[str, str]) -> PipelineConfig:
    values: dict[str, str] = {}
    if path:
        cfg_path = Path(path)
        if not cfg_path.is_file():
            raise UserError(f"config file not found: {cfg_path}")
        values.update(parse_config_text(cfg_path.read_text(encoding="utf-8")))
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name: f.type for f in fields(PipelineConfig)}
    unknown = set(values) - set(known)
    if unknown:
        raise UserError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    kwargs: dict = {}
    for key, value in values.items():
        if key in ("split_fraction", "cutoff"):
            kwargs[key] = float(value)
        elif key == "seed":
            kwargs[key] = int(value)
        else:
            kwargs[key] = value
    return PipelineConfig(**kwargs)


def _parse_as_of(value: str) -> int:
    if not value:
        raise UserError("as_of timestamp is required for this command")
    try:
        return int(value)
    except ValueError:
        pass
    try:
        parsed = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except ValueError:
        raise UserError(f"as_of is neither an epoch integer nor ISO-8601: {value!r}") from None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return int(parsed.timestamp())


def _report_envelope(config: PipelineConfig, kind: str) -> dict:
    return {"artifact_version": __version__, "config_hash": config.digest(), "kind": kind}


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=2)
        handle.write("\n")


def _fmt(value: float) -> str:
    return f"{value:.3f}"


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(config: PipelineConfig) -> int:
    if not config.archives:
        raise UserError("no archives directory configured (key: archives)")
    archive_dir = Path(config.archives)
    if not archive_dir.is_dir():
        raise UserError(f"archives directory not found: {archive_dir}")
    paths = sorted(
        p for p in archive_dir.iterdir() if p.suffix == ".gz" or p.suffix in (".json", ".jsonl")
    )
    if not paths:
        raise UserError(f"no readable archives in {archive_dir}")
    store = EventStore(config.store_dir)
    per_file = []
    total_events = 0
    for path in paths:
        records, stats = parse_archive_file(path)
        receipt = store.append(records, dedup=True)
        total_events += receipt.count
        per_file.append(
            {
                "file": path.name,
                "parsed": stats.records_out,
                "skipped_type": stats.type_skipped,
                "skipped_malformed": stats.malformed_skipped,
                "stored": receipt.count,
                "duplicates_skipped": receipt.duplicates_skipped,
            }
        )
        log.info(
            "%s: parsed %d, skipped %d malformed, stored %d",
            path.name,
            stats.records_out,
            stats.malformed_skipped,
            receipt.count,
        )
    report = _report_envelope(config, "ingest")
    report["files"] = per_file
    report["stored_events"] = total_events
    _write_json(config.out_dir / "ingest_report.json", report)
    return 0


# ---------------------------------------------------------------------------
# metrics


def _load_ranks(path: str) -> dict[str, dict]:
    """CSV of point-in-time externals: repo_id,cmc_rank,alexa_rank,mentions."""
    if not path:
        raise UserError("no ranks file configured (key: ranks)")
    ranks_path = Path(path)
    if not ranks_path.is_file():
        raise UserError(f"ranks file not found: {ranks_path}")
    out: dict[str, dict] = {}
    with open(ranks_path, newline="", encoding="utf-8") as handle:
        for row in csv.DictReader(handle):
            out[row["repo_id"]] = {
                "cmc_rank": int(row["cmc_rank"]),
                "alexa_rank": int(row["alexa_rank"]) if row.get("alexa_rank") else None,
                "mentions": int(row["mentions"]) if row.get("mentions") else None,
            }
    return out


def _store_candidates(store: EventStore, entry: projects.ProjectEntry):
    """Candidate repositories for one project, derived from the store.

    The owner segment of a GitHub source URL selects every stored
    repository under that owner; stars are counted from the stored
    events.  A non-empty URL with no stored repositories reads as gone.
    """
    parsed = urlparse(entry.source_location or "")
    path_parts = [p for p in parsed.path.split("/") if p]
    if not path_parts:
        return []
    owner = path_parts[0].lower()
    found = []
    for repo_id in store.iter_repo_ids():
        if repo_id.split("/", 1)[0].lower() == owner:
            found.append(
                projects.Candidate(repo_id=repo_id, stars=metrics.count_stars(store.read(repo_id)))
            )
    return found


def cmd_metrics(config: PipelineConfig) -> int:
    if not config.projects:
        raise UserError("no project list configured (key: projects)")
    project_path = Path(config.projects)
    if not project_path.is_file():
        raise UserError(f"project list not found: {project_path}")
    ranks = _load_ranks(config.ranks)
    overrides = (
        projects.load_overrides(config.overrides) if config.overrides else {}
    )
    crit_config = (
        metrics.parse_criticality_config(Path(config.criticality_config).read_text(encoding="utf-8"))
        if config.criticality_config
        else None
    )
    store = EventStore(config.store_dir)
    as_of = _parse_as_of(config.as_of) if config.as_of else _latest_event(store)

    entries = projects.load_project_list(project_path)
    resolutions = [
        projects.resolve_repo(entry, _store_candidates(store, entry), overrides)
        for entry in entries
    ]
    resolutions = projects.mark_duplicates(resolutions)
    histories = {
        res.repo_id: store.has_history(res.repo_id)
        for res in resolutions
        if res.status is projects.ResolutionStatus.RESOLVED and res.repo_id
    }
    retained, report = dataset.apply_exclusions(resolutions, histories)
    log.info("exclusions: %s", report.as_dict())

    repo_rank = {
        res.repo_id: res.project
        for res in resolutions
        if res.status is projects.ResolutionStatus.RESOLVED and res.repo_id
    }
    histograms = {
        repo_id: metrics.timezone_histogram(
            store.read(repo_id), (as_of - 6 * metrics.MONTH_SECONDS, as_of)
        )
        for repo_id in retained
    }
    reference = metrics.median_distribution(list(histograms.values()))
    corpus = [
        text
        for repo_id in store.iter_repo_ids()
        for event in store.read(repo_id)
        if event.event_type is EventType.PUSH
        for text in event.texts
    ]
    rows = []
    for repo_id in retained:
        entry = repo_rank[repo_id]
        external = ranks.get(repo_id, {})
        events = store.read(repo_id)
        mentions = external.get("mentions")
        if mentions is None:
            mentions = metrics.count_mentions(corpus, {entry.name, entry.symbol})
        externals = metrics.ExternalInputs(
            cmc_rank=external.get("cmc_rank", entry.cmc_rank),
            alexa_rank=external.get("alexa_rank", entry.alexa_rank),
            mentions=mentions,
            criticality=(
                metrics.default_criticality_signals(events, as_of, crit_config)
                if crit_config
                else None
            ),
        )
        rows.append(metrics.build_metrics_row(repo_id, events, externals, reference, as_of))

    config.out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = config.out_dir / "metrics.csv"
    iso_as_of = datetime.fromtimestamp(as_of, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    with open(out_csv, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(metrics.METRICS_COLUMNS)
        for row in rows:
            cells = []
            for column in metrics.METRICS_COLUMNS:
                value = iso_as_of if column == "as_of" else getattr(row, column)
                cells.append("" if value is None else value)
            writer.writerow(cells)
    matrix = dataset.matrix_from_metrics(rows)
    dataset.write_audit_sidecar(config.out_dir / "metrics_audit.jsonl", matrix, report)
    log.info("wrote %s (%d rows)", out_csv, len(rows))
    return 0


def _latest_event(store: EventStore) -> int:
    latest = None
    for repo_id in store.iter_repo_ids():
        for event in store.read(repo_id):
            if latest is None or event.created_at > latest:
                latest = event.created_at
    if latest is None:
        raise UserError("event store is empty and no as_of timestamp configured")
    return latest


# ---------------------------------------------------------------------------
# EFA


def _prepared_matrix(config: PipelineConfig, metrics_csv: Path) -> dataset.MetricMatrix:
    if not metrics_csv.is_file():
        raise UserError(f"metrics file not found: {metrics_csv}")
    with open(metrics_csv, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        analysis = metrics.EFA_COLUMNS + metrics.ENGAGEMENT_COLUMNS
        keep = [c for c in analysis if c in (reader.fieldnames or [])]
        if len(keep) < 3:
            raise UserError(f"prepared matrix needs at least 3 analysis columns, found {len(keep)}")
        labels: list[str] = []
        values: list[list[float]] = []
        for row in reader:
            labels.append(row["repo_id"])
            values.append([float(row[c]) if row[c] != "" else np.nan for c in keep])
    columns = [dataset.ColumnMeta(c, c in dataset.REVERSE_SCORED_COLUMNS) for c in keep]
    matrix = dataset.MetricMatrix(labels, columns, np.array(values))
    return dataset.prepare(matrix)


def _efa_block(matrix: dataset.MetricMatrix, config: PipelineConfig) -> dict:
    names = matrix.column_names
    try:
        R = factor.correlation_matrix(matrix.values, names)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    pa = factor.parallel_analysis(matrix.values, seed=config.seed)
    if config.factors == "auto":
        m = max(pa.suggested_factors, 1)
    else:
        m = int(config.factors)
    n = len(matrix.row_labels)
    solution, stats = factor.efa_ml(R, n=n, m=m)
    rotated = factor.rotate_solution(solution)
    assignment, dropped = factor.assign_indicators(rotated.loadings, names, config.cutoff)
    reliability = {}
    for j, members in assignment.items():
        if len(members) >= 2:
            sub = matrix.select(members)
            one, _ = factor.efa_ml(factor.correlation_matrix(sub.values, members), n=n, m=1)
            reliability[str(j)] = {
                "alpha": factor.cronbach_alpha(sub.values),
                "omega": factor.mcdonald_omega(one.loadings[:, 0], one.uniquenesses),
            }
    return {
        "n": n,
        "columns": names,
        "factors": m,
        "parallel_analysis": {
            "observed_eigenvalues": pa.observed_eigenvalues.tolist(),
            "simulated_mean_eigenvalues": pa.simulated_mean_eigenvalues.tolist(),
            "simulated_quantile_eigenvalues": pa.simulated_quantile_eigenvalues.tolist(),
            "quantile": pa.quantile,
            "basis": pa.basis,
            "comparison": pa.comparison,
            "suggested_factors": pa.suggested_factors,
        },
        "scree_eigenvalues": factor.eigenvalues(R).tolist(),
        "loadings": rotated.loadings.tolist(),
        "uniquenesses": rotated.uniquenesses.tolist(),
        "communalities": rotated.communalities.tolist(),
        "ss_loadings": rotated.ss_loadings.tolist(),
        "cumulative_variance": rotated.cumulative_variance.tolist(),
        "proportion_explained": rotated.proportion_explained.tolist(),
        "converged": rotated.converged,
        "fit": stats.as_dict(),
        "assignment": {str(k): v for k, v in assignment.items()},
        "dropped": dropped,
        "reliability": reliability,
    }


def _efa_text(block: dict) -> str:
    lines = [f"exploratory factor analysis (n={block['n']}, m={block['factors']})", ""]
    header = f"{'indicator':<24}" + "".join(f"{'F' + str(j + 1):>8}" for j in range(block["factors"]))
    lines.append(header + f"{'h2':>8}")
    for i, name in enumerate(block["columns"]):
        row = f"{name:<24}" + "".join(_fmt(v).rjust(8) for v in block["loadings"][i])
        lines.append(row + _fmt(block["communalities"][i]).rjust(8))
    lines.append("")
    lines.append(f"{'SS loadings':<24}" + "".join(_fmt(v).rjust(8) for v in block["ss_loadings"]))
    lines.append(
        f"{'cumulative variance':<24}"
        + "".join(_fmt(v).rjust(8) for v in block["cumulative_variance"])
    )
    lines.append("")
    lines.append("scree and parallel-analysis eigenvalues (observed / simulated threshold):")
    pa = block["parallel_analysis"]
    for obs, thr in zip(pa["observed_eigenvalues"], pa["simulated_quantile_eigenvalues"]):
        lines.append(f"  {_fmt(obs):>8} / {_fmt(thr)}")
    fit = block["fit"]
    lines.append("")
    lines.append(
        f"chi2 {_fmt(fit['chi_square'])} on {fit['df']} df; TLI {_fmt(fit['tli'])}, "
        f"RMSEA {_fmt(fit['rmsea'])}, CFI {_fmt(fit['cfi'])}, SRMR {_fmt(fit['srmr'])}, "
        f"BIC {_fmt(fit['bic'])}"
    )
    for j, members in sorted(block["assignment"].items()):
        lines.append(f"factor {int(j) + 1}: {', '.join(members) if members else '(empty)'}")
    if block["dropped"]:
        lines.append(f"below cutoff: {', '.join(block['dropped'])}")
    return "\n".join(lines) + "\n"


def cmd_efa(config: PipelineConfig, cross_validate: bool = False) -> int:
    matrix = _prepared_matrix(config, config.out_dir / "metrics.csv")
    report = _report_envelope(config, "efa")
    report["full"] = _efa_block(matrix, config)
    if cross_validate:
        train, test = dataset.split(matrix, config.split_fraction, config.seed)
        report["train"] = _efa_block(train, config)
        report["test"] = _efa_block(test, config)
        report["structure_equivalent"] = report["train"]["assignment"] == report["test"]["assignment"]
    _write_json(config.out_dir / "efa_report.json", report)
    (config.out_dir / "efa_report.txt").write_text(_efa_text(report["full"]), encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# SEM


def cmd_sem(config: PipelineConfig, compare_model: str | None = None) -> int:
    if not config.model:
        raise UserError("no model file configured (key: model)")
    model_path = Path(config.model)
    if not model_path.is_file():
        raise UserError(f"model file not found: {model_path}")
    try:
        model = sem.parse_model(model_path.read_text(encoding="utf-8"))
    except (sem.SemParseError, sem.SemSpecError) as exc:
        raise UserError(f"{model_path}: {exc}") from None
    matrix = _prepared_matrix(config, config.out_dir / "metrics.csv")
    missing = [v for v in model.observed if v not in matrix.column_names]
    if missing:
        raise UserError(f"indicator(s) absent from data: {', '.join(missing)}")
    data = matrix.select(model.observed)
    S = np.cov(data.values, rowvar=False)
    n = len(data.row_labels)
    fit = sem.fit_ml(model, S, n)

    report = _report_envelope(config, "sem")
    report["model_file"] = model_path.name
    report["n"] = n
    report["estimates"] = {
        name: {"value": est.value, "se": est.se, "z": est.z, "p": est.p_value, "free": est.free}
        for name, est in fit.estimates.items()
    }
    report["standardized"] = fit.standardized
    report["fit"] = fit.fit.as_dict()
    report["heywood"] = fit.heywood
    report["converged"] = fit.converged
    if compare_model:
        other_path = Path(compare_model)
        if not other_path.is_file():
            raise UserError(f"comparison model file not found: {other_path}")
        other = sem.parse_model(other_path.read_text(encoding="utf-8"))
        other_fit = sem.fit_ml(other, S, n)
        d_chi, d_df, d_bic = sem.compare_models(fit, other_fit)
        report["comparison"] = {
            "other_model_file": other_path.name,
            "delta_chi_square": d_chi,
            "delta_df": d_df,
            "delta_bic": d_bic,
        }
    _write_json(config.out_dir / "sem_report.json", report)
    (config.out_dir / "sem_report.txt").write_text(
        sem.format_fit_report(fit) + "\n", encoding="utf-8"
    )
    return 0


# ---------------------------------------------------------------------------
# combined report


def cmd_report(config: PipelineConfig) -> int:
    pieces = []
    for name in ("ingest_report.json", "efa_report.json", "sem_report.json"):
        path = config.out_dir / name
        if path.is_file():
            pieces.append((name, json.loads(path.read_text(encoding="utf-8"))))
    if not pieces:
        raise UserError(f"no reports found under {config.out_dir}; run the pipeline stages first")
    lines = [f"pipeline summary (artifact {__version__}, config {config.digest()})"]
    for name, payload in pieces:
        lines.append(f"\n== {name} ==")
        if name == "ingest_report.json":
            lines.append(f"stored events: {payload['stored_events']}")
        elif name == "efa_report.json":
            full = payload["full"]
            lines.append(f"n={full['n']}, factors={full['factors']}")
            for j, members in sorted(full["assignment"].items()):
                lines.append(f"factor {int(j) + 1}: {', '.join(members)}")
        else:
            fit = payload["fit"]
            lines.append(
                f"chi2 {_fmt(fit['chi_square'])} on {fit['df']} df; CFI {_fmt(fit['cfi'])}, "
                f"TLI {_fmt(fit['tli'])}, RMSEA {_fmt(fit['rmsea'])}, SRMR {_fmt(fit['srmr'])}"
            )
            if payload["heywood"]:
                lines.append("heywood: " + ", ".join(payload["heywood"]))
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        raise UserError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="oss-health", description=__doc__.split("\n", 1)[0])
    sub = parser.add_subparsers(dest="command", required=True)
    config_keys = [f.name for f in fields(PipelineConfig)]
    for name in ("ingest", "metrics", "efa", "sem", "report"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="key = value config file")
        for key in config_keys:
            cmd.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None)
        if name == "efa":
            cmd.add_argument("--cross-validate", action="store_true")
        if name == "sem":
            cmd.add_argument("--compare", default=None, help="second model file to compare against")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    try:
        args = _build_parser().parse_args(argv)
        overrides = {
            f.name: getattr(args, f.name)
            for f in fields(PipelineConfig)
            if getattr(args, f.name, None) is not None
        }
        config = load_config(args.config, overrides)
        if args.command == "ingest":
            return cmd_ingest(config)
        if args.command == "metrics":
            return cmd_metrics(config)
        if args.command == "efa":
            return cmd_efa(config, cross_validate=args.cross_validate)
        if args.command == "sem":
            return cmd_sem(config, compare_model=args.compare)
        return cmd_report(config)
    except UserError as exc:
        log.error("error: %s", exc)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        log.error("error: %s", exc)
        return 1
    except Exception:  # pragma: no cover - internal failure path
        logging.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
