"""Command line: run manifests, tabulate results, run the oracle suites."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import warnings
from pathlib import Path

from .config import ExperimentManifest, parse_config
from .errors import ConfigError
from .sim import RoundRecord, SimConfig, metric_delta, metric_theta, run_experiment

log = logging.getLogger("fedsa")

BASELINES = ("lie", "min_max", "min_sum")
SUMMARY_SUFFIX = ".summary.json"
ROUNDS_SUFFIX = ".rounds.csv"


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def write_rounds_csv(path, records: list[RoundRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RoundRecord.CSV_COLUMNS)
        for r in records:
            w.writerow([fmt(getattr(r, c)) for c in RoundRecord.CSV_COLUMNS])


def read_rounds_csv(path) -> list[RoundRecord]:
    out = []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows)
        if tuple(header) != RoundRecord.CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected header {header}")
        for row in rows:
            v = dict(zip(header, row))
            out.append(RoundRecord(
                round=int(v["round"]), global_accuracy=float(v["global_accuracy"]), delta=float(v["delta"]),
                err_norm=float(v["err_norm"]), surface_norm=float(v["surface_norm"]),
                selected_malicious=int(v["selected_malicious"]), selected_total=int(v["selected_total"]),
                wallclock_ms=float(v["wallclock_ms"])))
    return out


def _json_num(x):
    if x is None:
        return None
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _summary(exp_id: str, cfg: SimConfig, result) -> dict:
    return {
        "id": exp_id,
        "agr": cfg.agr.kind,
        "attack": cfg.attack.kind,
        "target_accuracy": result.target_accuracy,
        "final_accuracy": result.final_accuracy,
        "final_delta": result.final_delta,
        "theta_vs": {},
        "detection_rate": result.detection_rate,
        "reference_accuracy": result.reference_accuracy,
        "seed": result.seed,
        "faulted": False,
        "config": result.config,
    }


def fill_theta(summaries: list[dict]) -> None:
    """For every FedSA result, θ against each baseline run on the same
    aggregator and target."""
    for s in summaries:
        if s.get("faulted") or s["attack"] != "fedsa":
            continue
        for b in summaries:
            if b.get("faulted") or b["attack"] not in BASELINES:
                continue
            if b["agr"] == s["agr"] and b["target_accuracy"] == s["target_accuracy"]:
                s["theta_vs"][b["attack"]] = _json_num(metric_theta(b["final_delta"], s["final_delta"]))


def run_manifest(manifest: ExperimentManifest, out_dir=None, seed: int | None = None,
                 threads: int | None = None) -> int:
    out = Path(out_dir) if out_dir is not None else manifest.out_dir
    if not manifest.entries:
        return 0
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    summaries, faulted = [], False
    for exp_id, cfg in manifest.entries:
        if seed is not None:
            cfg.seed = seed
        if threads is not None:
            cfg.threads = threads
        log.info("running %s (%s / %s)", exp_id, cfg.agr.kind, cfg.attack.kind)
        try:
            result = run_experiment(cfg)
        except Exception as exc:  # one failing experiment must not stop the rest
            log.error("%s failed: %s", exp_id, exc)
            faulted = True
            summaries.append({"id": exp_id, "agr": cfg.agr.kind, "attack": cfg.attack.kind,
                              "faulted": True, "error": f"{type(exc).__name__}: {exc}"})
            continue
        write_rounds_csv(out / f"{exp_id}{ROUNDS_SUFFIX}", result.records)
        summaries.append(_summary(exp_id, cfg, result))
        log.info("%s: final accuracy %.4f, delta %.3f", exp_id, result.final_accuracy, result.final_delta)
    fill_theta(summaries)
    for s in summaries:
        (out / f"{s['id']}{SUMMARY_SUFFIX}").write_text(json.dumps(s, indent=2, allow_nan=False, default=str))
    return 1 if faulted else 0


def load_summaries(directory) -> list[dict]:
    out = []
    for p in sorted(Path(directory).glob(f"*{SUMMARY_SUFFIX}")):
        try:
            s = json.loads(p.read_text())
            if not s.get("faulted"):
                for key in ("agr", "attack", "final_accuracy", "final_delta", "target_accuracy"):
                    s[key]
            out.append(s)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            warnings.warn(f"skipping malformed summary {p}: {exc}")
    return out


def summarize(directory) -> dict:
    """Rows are aggregators, columns attacks; each cell holds the final accuracy
    in percent and δ. FedSA rows also carry θ against every baseline present."""
    summaries = [s for s in load_summaries(directory) if not s.get("faulted")]
    if not summaries:
        raise ConfigError(f"no summaries under {directory}")
    agrs = sorted({s["agr"] for s in summaries})
    attacks = sorted({s["attack"] for s in summaries}, key=lambda a: (a == "fedsa", a))
    table = {"rows": agrs, "columns": attacks, "cells": {}, "theta": {}}
    for s in summaries:
        acc = 100.0 * s["final_accuracy"]
        table["cells"].setdefault(s["agr"], {})[s["attack"]] = {
            "accuracy": acc, "delta": metric_delta(acc, s["target_accuracy"]), "id": s["id"]}
    by_cell = table["cells"]
    for agr in agrs:
        fedsa = by_cell[agr].get("fedsa")
        if fedsa is None:
            continue
        table["theta"][agr] = {b: _json_num(metric_theta(by_cell[agr][b]["delta"], fedsa["delta"]))
                               for b in BASELINES if b in by_cell[agr]}
    lines = []
    header = ["agr"] + attacks + [f"theta/{b}" for b in BASELINES if any(b in t for t in table["theta"].values())]
    lines.append("\t".join(header))
    for agr in agrs:
        row = [agr]
        for a in attacks:
            c = by_cell[agr].get(a)
            row.append("-" if c is None else f"{c['accuracy']:.2f} ({c['delta']:.2f})")
        for h in header[1 + len(attacks):]:
            th = table["theta"].get(agr, {}).get(h.split("/", 1)[1])
            row.append("-" if th is None else (th if isinstance(th, str) else f"{th:.2f}"))
        lines.append("\t".join(row))
    text = "\n".join(lines) + "\n"
    d = Path(directory)
    (d / "summary.txt").write_text(text)
    (d / "summary.json").write_text(json.dumps(table, indent=2))
    table["text"] = text
    return table


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fedsa", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run every experiment in a TOML manifest")
    r.add_argument("manifest")
    r.add_argument("--seed", type=int, help="override every experiment's seed")
    r.add_argument("--threads", type=int, help="client-training threads")
    r.add_argument("--out", help="output directory (overrides the manifest)")
    s = sub.add_parser("summarize", help="tabulate the summaries in a results directory")
    s.add_argument("directory")
    o = sub.add_parser("oracle-check", help="aggregator and ODE oracle suites")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--instances", type=int, default=200)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.cmd == "run":
            return run_manifest(parse_config(args.manifest), args.out, args.seed, args.threads)
        if args.cmd == "summarize":
            print(summarize(args.directory)["text"], end="")
            return 0
        from .oracles import run_all
        ok = True
        for name, passed, detail in run_all(args.instances, args.seed):
            print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
            ok &= passed
        return 0 if ok else 1
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
