"""Command line entry point: ``csinas {gen,stats,search,eval,space,report}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .channel import CsiDataset, generate_dataset, pas_pdp, pse, read_dataset, write_dataset
from .codec import format_db, read_codec, write_codec
from .config import RunConfig, build_config, load_config, write_manifest
from .evaluate import read_report, read_weights, report_csv, select_best, write_weights
from .genotype import Genotype, cell_space_size, global_space_size, read_genotypes, write_genotypes
from .search import LOG_COLUMNS, prepare_feedback_data, run_search

log = logging.getLogger("csinas")


class CliError(Exception):
    pass


# ---------------------------------------------------------------- helpers


def _out_file(path: str, force: bool) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise CliError(f"output directory does not exist: {p.parent}")
    if p.exists() and not force:
        raise CliError(f"{p} exists; pass --force to overwrite")
    return p


def _out_dir(path: str, artifacts, force: bool) -> Path:
    d = Path(path)
    if not d.parent.is_dir():
        raise CliError(f"output directory does not exist: {d.parent}")
    d.mkdir(exist_ok=True)
    clash = [a for a in artifacts if (d / a).exists()]
    if clash and not force:
        raise CliError(f"{d} already holds {', '.join(clash)}; pass --force to overwrite")
    return d


def _load_dataset(path: str) -> CsiDataset:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"dataset file not found: {p}")
    return read_dataset(p)


def _dataset_for(cfg: RunConfig, data_path: str | None) -> CsiDataset:
    if data_path:
        return _load_dataset(data_path)
    log.info("generating %d samples of scenario %s", cfg.count, cfg.scenario.name)
    return generate_dataset(cfg.scenario, cfg.count, keep_raw=False)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path, header) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: columns {reader.fieldnames}, expected {list(header)}")
        return list(reader)


# ---------------------------------------------------------------- gen / stats


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.seed)
    if args.preset:
        cfg = load_config_with_preset(args, cfg)
    count = args.count if args.count is not None else cfg.count
    out = _out_file(args.out, args.force)
    ds = generate_dataset(cfg.scenario, count, keep_raw=False)
    write_dataset(ds, out)
    cfg.count = count
    write_manifest(out.with_name(out.name + ".manifest.yaml"), cfg, "gen")
    back = read_dataset(out)
    if len(back) != count or back.dims != ds.dims:
        raise CliError(f"{out}: written dataset failed validation")
    print(f"wrote {count} samples ({ds.dims[0]}x{ds.dims[1]}) to {out}")
    return 0


def load_config_with_preset(args, cfg: RunConfig) -> RunConfig:
    raw = cfg.to_dict()
    raw["scenario"] = {"preset": args.preset}
    return build_config(raw, args.seed)


STATS_COLUMNS = ("sample", "pse_pas", "pse_pdp", "pse_vec")
SUMMARY_COLUMNS = ("dataset", "scenario", "count", "mean_pse_pas", "mean_pse_pdp", "mean_pse_vec", "std_pse_vec")
HIST_COLUMNS = ("dataset", "quantity", "bin_lo", "bin_hi", "count")


def scene_stats(ds: CsiDataset) -> np.ndarray:
    """Per-sample (PSE of PAS, PSE of PDP, PSE of vec H)."""
    rows = []
    for h in ds.complex_samples():
        pas, pdp = pas_pdp(h)
        rows.append((pse(pas), pse(pdp), pse(h)))
    return np.array(rows)


def cmd_stats(args) -> int:
    out = _out_dir(args.out, ["stats_summary.csv", "stats_hist.csv"], args.force)
    edges = np.linspace(0.0, 1.0, args.bins + 1)
    summary, hist = [], []
    for path in args.datasets:
        ds = _load_dataset(path)
        name = Path(path).stem
        st = scene_stats(ds)
        _write_csv(out / f"{name}_pse.csv", STATS_COLUMNS, [(i, *map(repr, r)) for i, r in enumerate(st)])
        summary.append((name, ds.scenario, len(ds), *(repr(float(v)) for v in st.mean(axis=0)), repr(float(st[:, 2].std()))))
        for q, col in (("pse_pas", 0), ("pse_pdp", 1), ("pse_vec", 2)):
            counts, _ = np.histogram(st[:, col], bins=edges)
            hist += [(name, q, repr(float(edges[b])), repr(float(edges[b + 1])), int(counts[b])) for b in range(args.bins)]
    _write_csv(out / "stats_summary.csv", SUMMARY_COLUMNS, summary)
    _write_csv(out / "stats_hist.csv", HIST_COLUMNS, hist)
    order = sorted(summary, key=lambda r: float(r[5]))
    for r in summary:
        print(f"{r[0]}: count={r[2]} mean PSE(vec H)={float(r[5]):.4f} (PAS {float(r[3]):.4f}, PDP {float(r[4]):.4f})")
    if len(order) > 1:
        print("mean PSE(vec H) ordering: " + " < ".join(r[0] for r in order))
    _read_csv(out / "stats_summary.csv", SUMMARY_COLUMNS)
    _read_csv(out / "stats_hist.csv", HIST_COLUMNS)
    return 0


# ---------------------------------------------------------------- search / eval

SEARCH_ARTIFACTS = ["codec.cscx", "search_log.csv", "candidates.json", "candidates.csv", "final_genotype.json", "manifest.yaml"]
EVAL_ARTIFACTS = ["report.csv", "best_genotype.json", "best_weights.cswt", "curves.csv", "eval_manifest.yaml"]
CANDIDATE_COLUMNS = ("genotype_id", "epoch", "supernet_nmse_db", "cell")


def cmd_search(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args.out, SEARCH_ARTIFACTS, args.force)
    ds = _dataset_for(cfg, args.data)
    res = run_search(cfg.search, ds)
    write_codec(res.data.codec, out / "codec.cscx")
    _write_csv(
        out / "search_log.csv",
        LOG_COLUMNS,
        [(r["epoch"], r["phase"], repr(r["train_loss"]), repr(r["supernet_nmse_db"]), r["recorded"]) for r in res.log],
    )
    write_genotypes(res.genotypes, out / "candidates.json")
    _write_csv(
        out / "candidates.csv",
        CANDIDATE_COLUMNS,
        [(c.genotype.id, c.epoch, repr(c.nmse_db), c.genotype.describe()) for c in res.candidates],
    )
    (out / "final_genotype.json").write_text(res.final_genotype.to_json() + "\n", encoding="utf-8")
    write_manifest(out / "manifest.yaml", cfg, "search", extra={"data": args.data})
    problems = validate_search_dir(out)
    if problems:
        raise CliError("; ".join(problems))
    print(f"{len(res.candidates)} candidate(s) recorded over {len(res.log)} epochs in {out}")
    for c in res.candidates:
        print(f"  epoch {c.epoch:4d}  {format_db(c.nmse_db)} dB  {c.genotype.describe()}")
    return 0


def _candidate_source(path: str) -> tuple[list[Genotype], Path | None]:
    p = Path(path)
    if p.is_dir():
        f = p / "candidates.json"
        if not f.is_file():
            raise CliError(f"no candidates.json in {p}")
        codec = p / "codec.cscx"
        return read_genotypes(f), codec if codec.is_file() else None
    if p.is_file():
        return read_genotypes(p), None
    raise CliError(f"candidate path not found: {p}")


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.seed)
    genotypes, codec_path = _candidate_source(args.candidates)
    if not genotypes:
        raise CliError(f"candidate set in {args.candidates} is empty")
    out = _out_dir(args.out, EVAL_ARTIFACTS, args.force)
    ds = _dataset_for(cfg, args.data)
    codec = read_codec(codec_path) if codec_path else None
    s = cfg.search
    data = prepare_feedback_data(ds, s.cr, s.quant_bits, s.split, s.seed, codec=codec)
    best, rows = select_best(genotypes, data, cfg.arch, jobs=args.jobs)
    (out / "report.csv").write_text(report_csv(rows), encoding="utf-8")
    (out / "best_genotype.json").write_text(best.genotype.to_json() + "\n", encoding="utf-8")
    write_weights(best.weights, out / "best_weights.cswt")
    _write_csv(
        out / "curves.csv",
        ("genotype_id", "epoch", "train_loss"),
        [(r.genotype_id, e, repr(v)) for r in rows for e, v in enumerate(r.curve)],
    )
    write_manifest(
        out / "eval_manifest.yaml", cfg, "eval", extra={"data": args.data, "candidates": args.candidates, "jobs": args.jobs}
    )
    problems = validate_eval_dir(out)
    if problems:
        raise CliError("; ".join(problems))
    for r in rows:
        mark = "*" if r is best else " "
        print(f"{mark} {r.genotype_id}  {format_db(r.nmse_db)} dB  {r.cell_flops} FLOPs  {r.cell_params} params  {r.genotype.describe()}")
    print(f"best: {best.genotype_id} at {format_db(best.nmse_db)} dB")
    return 0


def cmd_space(args) -> int:
    print(f"cell {cell_space_size(args.n_ops, args.n_nodes)}")
    print(f"global {global_space_size(args.n_ops, args.n_nodes)}")
    return 0


# ---------------------------------------------------------------- validation / report


def validate_search_dir(d: Path) -> list[str]:
    problems = []
    try:
        read_codec(d / "codec.cscx")
        rows = _read_csv(d / "search_log.csv", LOG_COLUMNS)
        if not rows:
            problems.append("search log is empty")
        gs = read_genotypes(d / "candidates.json")
        if sum(int(r["recorded"]) for r in rows) != len(gs):
            problems.append("recorded flags in the log disagree with candidates.json")
        for g in gs:
            problems += [f"candidate {g.id}: {v}" for v in g.violations()]
        Genotype.from_dict(json.loads((d / "final_genotype.json").read_text(encoding="utf-8")))
        if not (d / "manifest.yaml").is_file():
            problems.append("manifest.yaml missing")
    except (OSError, ValueError, KeyError) as exc:
        problems.append(str(exc))
    return problems


def validate_eval_dir(d: Path) -> list[str]:
    problems = []
    try:
        rows = read_report(d / "report.csv")
        if not rows:
            problems.append("report is empty")
        best = Genotype.from_dict(json.loads((d / "best_genotype.json").read_text(encoding="utf-8")))
        lowest = min(rows, key=lambda r: r["nmse_linear"])
        if lowest["genotype_id"] != best.id:
            problems.append("best genotype is not the argmin of the report")
        for r in rows:
            if r["nmse_linear"] > 0 and abs(10 * math.log10(r["nmse_linear"]) - r["nmse_db"]) > 1e-9:
                problems.append(f"{r['genotype_id']}: dB column inconsistent")
        read_weights(d / "best_weights.cswt")
        if not (d / "eval_manifest.yaml").is_file():
            problems.append("eval_manifest.yaml missing")
    except (OSError, ValueError, KeyError) as exc:
        problems.append(str(exc))
    return problems


def cmd_report(args) -> int:
    d = Path(args.run_dir)
    if not d.is_dir():
        raise CliError(f"run directory not found: {d}")
    lines, problems = [], []
    if (d / "search_log.csv").exists():
        problems += validate_search_dir(d)
        if not problems:
            log_rows = _read_csv(d / "search_log.csv", LOG_COLUMNS)
            best = min(float(r["supernet_nmse_db"]) for r in log_rows)
            lines.append(f"search: {len(log_rows)} epochs, best supernet NMSE {best:.4f} dB")
            for r in _read_csv(d / "candidates.csv", CANDIDATE_COLUMNS):
                lines.append(f"  candidate {r['genotype_id']} epoch {r['epoch']} {float(r['supernet_nmse_db']):.4f} dB  {r['cell']}")
    if (d / "report.csv").exists():
        problems += validate_eval_dir(d)
        if not problems:
            rows = read_report(d / "report.csv")
            best = Genotype.from_dict(json.loads((d / "best_genotype.json").read_text(encoding="utf-8")))
            lines.append(f"evaluation: {len(rows)} candidates retrained")
            for r in sorted(rows, key=lambda r: r["nmse_linear"]):
                lines.append(f"  {r['genotype_id']} {format_db(r['nmse_db'])} dB  flops={r['cell_flops']} params={r['cell_params']}")
            lines.append(f"best: {best.id}  {best.describe()}")
    if not lines and not problems:
        problems.append(f"{d} holds no search or evaluation artifacts")
    if problems:
        raise CliError("invalid artifacts: " + "; ".join(problems))
    text = "\n".join(lines) + "\n"
    if args.out:
        _out_file(args.out, args.force).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csinas", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help, out_required=True):
        sp.add_argument("--config", help="YAML config or a run manifest")
        sp.add_argument("--seed", type=int, help="override the global seed")
        sp.add_argument("--out", required=out_required, help=out_help)
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    g = sub.add_parser("gen", help="generate a CSID dataset file")
    common(g, "dataset file to write")
    g.add_argument("--count", type=int)
    g.add_argument("--preset", choices=["park", "commercial"], help="scenario preset, replaces the config's scenario")
    g.set_defaults(func=cmd_gen)

    st = sub.add_parser("stats", help="PSE/PAS/PDP summary and histogram data")
    st.add_argument("datasets", nargs="+")
    st.add_argument("--out", required=True, help="output directory")
    st.add_argument("--bins", type=int, default=20)
    st.add_argument("--force", action="store_true")
    st.set_defaults(func=cmd_stats)

    s = sub.add_parser("search", help="run the supernet search and record candidates")
    common(s, "output directory")
    s.add_argument("--data", help="CSID dataset; generated from the config when omitted")
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="retrain candidates from scratch and pick the best")
    common(e, "output directory")
    e.add_argument("--candidates", required=True, help="search output directory or a genotype JSON file")
    e.add_argument("--data", help="CSID dataset; generated from the config when omitted")
    e.add_argument("--jobs", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    sp = sub.add_parser("space", help="exact search-space sizes")
    sp.add_argument("n_ops", type=int)
    sp.add_argument("n_nodes", type=int)
    sp.set_defaults(func=cmd_space)

    r = sub.add_parser("report", help="validate a run directory and summarize it")
    r.add_argument("run_dir")
    r.add_argument("--out", help="also write the summary to this file")
    r.add_argument("--force", action="store_true")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"csinas {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
