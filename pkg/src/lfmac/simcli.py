"""
Batch experiment runner and command line interface.

Every experiment is described by a JSON config (see ``recipes/``).  SNR is
``P / sigma2`` with ``sigma2 = 1``.  All schemes share the same evaluation
draws at every SNR point, so differences between curves are not blurred by
independent sampling noise.

Random streams are derived from the master seed with
``numpy.random.SeedSequence(seed, spawn_key=...)`` feeding PCG64, one stream
per purpose and result cell, so results do not depend on execution order or
on the number of worker processes.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .bf_codebook import (BeamformingCodebook, GrassmannOptions, eigenbeam_design,
                          grassmann_design, random_directions, random_power, rotate_codebook,
                          statistical_beams)
from .config import (ConfigError, ExperimentConfig, SCHEMES, config_hash, load_config,
                     parse_config, snr_to_power)
from .channel import sample_batch
from .cov_codebook import LloydOptions, TrainingSet, design, nested_subsets
from .rates import (bf_rates, full_csi_rates, mc_estimate, no_feedback_rate, region_2user,
                    select_batch, tdma_rates)
from .waterfill import PowerBudget

__all__ = ["ResultRow", "ResultTable", "run", "run_config", "validate", "pack", "main",
           "snr_gap_db", "high_snr_slope", "recipe_path", "OUTPUT_DIR_ENV"]

log = logging.getLogger("lfmac")

OUTPUT_DIR_ENV = "LFMAC_OUTPUT_DIR"
CSV_COLUMNS = ("scheme", "B", "snr_db", "mean_bits", "stderr_bits", "draws", "seed")
SIGMA2 = 1.0

# spawn keys of the independent random streams
_EVAL, _TRAIN, _DESIGN, _PACKING, _POWERS, _DIRECTIONS, _REGION = range(7)


@dataclass
class ResultRow:
    scheme: str
    B: Optional[int]
    snr_db: float
    mean_bits: float
    stderr_bits: float
    draws: int
    seed: int
    flags: List[str] = field(default_factory=list)
    design: dict = field(default_factory=dict)

    def csv_fields(self):
        return [self.scheme, "" if self.B is None else str(self.B), repr(self.snr_db),
                repr(self.mean_bits), repr(self.stderr_bits), str(self.draws), str(self.seed)]

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "B": self.B, "snr_db": self.snr_db,
                "mean_bits": self.mean_bits, "stderr_bits": self.stderr_bits,
                "draws": self.draws, "seed": self.seed, "flags": self.flags,
                "design": self.design}


@dataclass
class ResultTable:
    rows: List[ResultRow]
    meta: dict
    regions: List[dict] = field(default_factory=list)

    def curve(self, scheme: str, B: Optional[int] = None):
        """``(snr_db, mean_bits, stderr_bits)`` arrays of one curve in SNR order."""
        rows = sorted((r for r in self.rows if r.scheme == scheme and r.B == B),
                      key=lambda r: r.snr_db)
        if not rows:
            raise KeyError(f"no rows for scheme={scheme!r}, B={B!r}")
        return (np.array([r.snr_db for r in rows]), np.array([r.mean_bits for r in rows]),
                np.array([r.stderr_bits for r in rows]))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_fields())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"meta": self.meta, "rows": [r.to_dict() for r in self.rows],
                "regions": self.regions}

    def write(self, csv_path, json_path):
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())
        with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _ss(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(_ss(seed, *key)))


def _int_seed(seed: int, *key: int) -> int:
    return int(_ss(seed, *key).generate_state(1, np.uint64)[0])


@lru_cache(maxsize=4)
def _context(raw_json: str, seed: int):
    cfg = parse_config(json.loads(raw_json))
    H_eval = sample_batch(cfg.channel, _rng(seed, _EVAL), cfg.eval_draws)
    H_train = None
    if cfg.training_size:
        H_train = sample_batch(cfg.channel, _rng(seed, _TRAIN), cfg.training_size)
    return cfg, H_eval, H_train


def _lloyd_opts(cfg: ExperimentConfig, seed: int, *key) -> LloydOptions:
    return LloydOptions(restarts=cfg.restarts, max_rounds=cfg.max_rounds, tol=cfg.tol_bits,
                        seed=_int_seed(seed, _DESIGN, *key))


def _design_summary(meta: dict) -> dict:
    return {k: meta[k] for k in ("objective", "rounds", "restart", "converged", "seed",
                                 "training_size", "delta_fs") if k in meta}


def _design_flags(meta: dict) -> List[str]:
    flags = list(meta.get("flags", []))
    if not meta.get("converged", True):
        flags.insert(0, "design did not converge within max_rounds")
    return flags


def _row(scheme, B, snr, samples, seed, flags=None, design_meta=None) -> ResultRow:
    m, se = mc_estimate(samples)
    return ResultRow(scheme, B, float(snr), m, se, int(np.size(samples)), seed,
                     flags or [], design_meta or {})


def _scheme_id(name: str) -> int:
    return SCHEMES.index(name)


def _chunks(n: int, parts: int):
    return np.array_split(np.arange(n), parts)


def _tasks(cfg: ExperimentConfig):
    tasks = []
    nsnr = len(cfg.snr_grid_db)
    for s in cfg.schemes:
        if s in ("covariance", "eigenbeam"):
            tasks += [(s, B, i) for B in cfg.bits_list for i in range(nsnr)]
        elif s in ("grassmann", "random_bf"):
            tasks += [(s, B) for B in cfg.bits_list]
        elif s == "full_csi":
            tasks += [(s, i) for i in range(nsnr)]
        elif s == "region2u":
            tasks += [(s, i) for i in range(nsnr)]
        else:
            tasks.append((s,))
    return tasks


def _run_task(raw_json: str, seed: int, task) -> tuple:
    cfg, H, H_train = _context(raw_json, seed)
    d = cfg.dims
    scheme = task[0]
    sid = _scheme_id(scheme)
    rows, regions = [], []
    log.info("task %s", task)

    if scheme == "covariance":
        _, B, i = task
        snr = cfg.snr_grid_db[i]
        cb = design(TrainingSet(H_train, SIGMA2, d), B, cfg.budget(snr),
                    _lloyd_opts(cfg, seed, sid, B, i))
        _, r = select_batch(H, cb, SIGMA2)
        rows.append(_row(scheme, B, snr, r, seed, _design_flags(cb.design_meta),
                         _design_summary(cb.design_meta)))

    elif scheme == "eigenbeam":
        _, B, i = task
        snr = cfg.snr_grid_db[i]
        cb = eigenbeam_design(TrainingSet(H_train, SIGMA2, d), B, snr_to_power(snr),
                              _lloyd_opts(cfg, seed, sid, B, i))
        _, r = select_batch(H, cb, SIGMA2)
        rows.append(_row(scheme, B, snr, r, seed, _design_flags(cb.design_meta),
                         _design_summary(cb.design_meta)))

    elif scheme in ("grassmann", "random_bf"):
        _, B = task
        C = 2 ** B
        R = cfg.codebook_realizations
        meta = {}
        if scheme == "grassmann":
            g = grassmann_design(B, d, GrassmannOptions(
                training_size=cfg.grassmann_training_size, rounds=cfg.grassmann_rounds,
                snapshot=cfg.grassmann_snapshot, seed=_int_seed(seed, _PACKING, B)))
            V = g.directions
            if cfg.grassmann_rotate:
                V = rotate_codebook(V, statistical_beams(_tx_correlation(cfg)))
            meta = {"delta_fs": g.delta, "best_round": g.best_round}
        realizations = []
        for rz in range(R):
            if scheme == "random_bf":
                V = random_directions(_rng(seed, _DIRECTIONS, B, rz), (C, d.K, d.Mt))
            prng = _rng(seed, _POWERS, sid, B, rz)
            amps = np.array([random_power(1.0, d.K, prng) for _ in range(C)])
            realizations.append((V, amps))
        chunks = _chunks(H.shape[0], R)
        for snr in cfg.snr_grid_db:
            P = snr_to_power(snr)
            r = np.concatenate([
                bf_rates(H[idx], np.sqrt(P) * amps[..., None] * V, SIGMA2).max(axis=1)
                for idx, (V, amps) in zip(chunks, realizations)
            ])
            rows.append(_row(scheme, B, snr, r, seed, design_meta=dict(meta)))

    elif scheme == "statistical_bf":
        V = statistical_beams(_tx_correlation(cfg))
        for snr in cfg.snr_grid_db:
            w = np.sqrt(snr_to_power(snr) / d.K) * V
            r = bf_rates(H, w[None], SIGMA2)[:, 0]
            rows.append(_row(scheme, None, snr, r, seed))

    elif scheme == "full_csi":
        _, i = task
        snr = cfg.snr_grid_db[i]
        r = full_csi_rates(H, cfg.budget(snr), SIGMA2, d.K)
        rows.append(_row(scheme, None, snr, r, seed))

    elif scheme == "no_feedback":
        for snr in cfg.snr_grid_db:
            r = no_feedback_rate(H, cfg.budget(snr), SIGMA2, d.K, d.Mt)
            rows.append(_row(scheme, None, snr, r, seed))

    elif scheme == "tdma":
        for snr in cfg.snr_grid_db:
            r = tdma_rates(H, cfg.budget(snr).total, SIGMA2, d.K)
            rows.append(_row(scheme, None, snr, r, seed))

    elif scheme == "region2u":
        _, i = task
        snr = cfg.snr_grid_db[i]
        budget = cfg.budget(snr)
        bmax = max(cfg.bits_list)
        training = TrainingSet(H_train, SIGMA2, d)
        cb = design(training, bmax, budget, _lloyd_opts(cfg, seed, sid, bmax, i))
        subsets = nested_subsets(cb.entries, H_train, SIGMA2, [2 ** B for B in cfg.bits_list])
        for B in sorted(cfg.bits_list):
            entries = cb.entries[subsets[2 ** B]]
            region, means, errs = region_2user(H, entries, *budget.powers, SIGMA2,
                                         n_directions=cfg.region_directions,
                                         return_details=True)
            regions.append({"B": B, "snr_db": snr, "powers": list(budget.powers),
                            "vertices": region.vertices.tolist(),
                            "codewords": [int(q) for q in subsets[2 ** B]],
                            "pentagons": means.tolist(), "pentagon_stderr": errs.tolist(),
                            "draws": int(H.shape[0])})
    else:  # pragma: no cover - guarded by the schema
        raise ValueError(f"unknown scheme {scheme}")
    return rows, regions


def _tx_correlation(cfg: ExperimentConfig) -> np.ndarray:
    if cfg.channel.tx_correlation is not None:
        return cfg.channel.tx_correlation
    return np.repeat(np.eye(cfg.dims.Mt, dtype=complex)[None], cfg.dims.K, axis=0)


def run_config(cfg: ExperimentConfig, seed: Optional[int] = None, threads: int = 1) -> ResultTable:
    """Run every scheme of a parsed config and collect the result table."""
    seed = cfg.seed if seed is None else int(seed)
    raw_json = json.dumps(cfg.raw, sort_keys=True)
    tasks = _tasks(cfg)
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task, [raw_json] * len(tasks), [seed] * len(tasks), tasks))
    else:
        results = [_run_task(raw_json, seed, t) for t in tasks]
    order = {s: i for i, s in enumerate(cfg.schemes)}
    rows = [r for res in results for r in res[0]]
    rows.sort(key=lambda r: (order[r.scheme], -1 if r.B is None else r.B, r.snr_db))
    regions = [g for res in results for g in res[1]]
    regions.sort(key=lambda g: (g["snr_db"], g["B"]))
    meta = {
        "name": cfg.name,
        "config_hash": config_hash(cfg.raw),
        "seed": seed,
        "rng": "PCG64 seeded through SeedSequence(seed, spawn_key)",
        "sigma2": SIGMA2,
        "snr_convention": "P = 10**(snr_db/10), sigma2 = 1",
        "version": __version__,
        "numpy": np.__version__,
        "config": cfg.raw,
        "flagged_cells": sum(1 for r in rows if r.flags),
    }
    return ResultTable(rows, meta, regions)


def _output_paths(cfg: ExperimentConfig, out: Optional[str]):
    base = Path(out or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir or "results")
    return base / (cfg.csv_name or f"{cfg.name}.csv"), base / (cfg.json_name or f"{cfg.name}.json")


def recipe_path(name: str) -> Path:
    """Path of a shipped recipe (``fig4`` ... ``fig10``)."""
    p = resources.files("lfmac").joinpath("recipes", f"{name}.json")
    return Path(str(p))


def _resolve(config_path) -> Path:
    p = Path(config_path)
    if not p.exists() and recipe_path(str(config_path)).exists():
        return recipe_path(str(config_path))
    return p


def run(config_path, out: Optional[str] = None, seed: Optional[int] = None,
        threads: int = 1) -> ResultTable:
    """Load, run and write one experiment; returns the result table."""
    cfg = load_config(_resolve(config_path))
    table = run_config(cfg, seed, threads)
    csv_path, json_path = _output_paths(cfg, out)
    table.write(csv_path, json_path)
    log.info("wrote %s and %s", csv_path, json_path)
    return table


def validate(config_path) -> str:
    """Check a config without running it; raises :class:`ConfigError` when invalid."""
    cfg = load_config(_resolve(config_path))
    return (f"ok: {cfg.name} ({cfg.dims.K},{cfg.dims.Mt},{cfg.dims.Mr}), "
            f"{len(cfg.schemes)} schemes, {len(cfg.snr_grid_db)} SNR points")


def pack(config_path, scheme: str, out: Optional[str] = None, seed: Optional[int] = None) -> list:
    """
    Design codebooks only and write them as JSON files.

    Covariance and eigenbeam codebooks depend on SNR and are designed for
    every (B, SNR) pair; Grassmannian codebooks are written once per B with
    unit total power.
    """
    if scheme not in ("grassmann", "eigenbeam", "covariance"):
        raise ConfigError(f"--scheme: unsupported scheme {scheme!r}")
    cfg = load_config(_resolve(config_path))
    seed = cfg.seed if seed is None else int(seed)
    if scheme != "grassmann" and not cfg.training_size:
        raise ConfigError("training_size: required for Lloyd designs")
    if scheme != "covariance" and cfg.budget_kind != "sum":
        raise ConfigError("budget.kind: beamforming codebooks need a sum budget")
    base = Path(out or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir or "results")
    base.mkdir(parents=True, exist_ok=True)
    d = cfg.dims
    sid = _scheme_id(scheme)
    written = []
    if scheme == "grassmann":
        for B in cfg.bits_list:
            g = grassmann_design(B, d, GrassmannOptions(
                training_size=cfg.grassmann_training_size, rounds=cfg.grassmann_rounds,
                snapshot=cfg.grassmann_snapshot, seed=_int_seed(seed, _PACKING, B)))
            V = g.directions
            if cfg.grassmann_rotate:
                V = rotate_codebook(V, statistical_beams(_tx_correlation(cfg)))
            prng = _rng(seed, _POWERS, sid, B, 0)
            amps = np.array([random_power(1.0, d.K, prng) for _ in range(2 ** B)])
            cb = BeamformingCodebook(B, V, amps, PowerBudget.sum(1.0), d,
                                     {"delta_fs": g.delta, "best_round": g.best_round,
                                      "seed": seed, "history": g.history})
            path = base / f"{cfg.name}_grassmann_B{B}.json"
            cb.save(path)
            written.append(path)
        return written
    H_train = sample_batch(cfg.channel, _rng(seed, _TRAIN), cfg.training_size)
    training = TrainingSet(H_train, SIGMA2, d)
    for B in cfg.bits_list:
        for i, snr in enumerate(cfg.snr_grid_db):
            opts = _lloyd_opts(cfg, seed, sid, B, i)
            if scheme == "covariance":
                cb = design(training, B, cfg.budget(snr), opts)
            else:
                cb = eigenbeam_design(training, B, snr_to_power(snr), opts)
            path = base / f"{cfg.name}_{scheme}_B{B}_snr{snr:g}.json"
            cb.save(path)
            written.append(path)
    return written


def snr_gap_db(snr_db, reference, improved, level: Optional[float] = None) -> float:
    """
    Horizontal SNR gap between two rate curves.

    ``level`` defaults to the reference curve's rate at the middle of the SNR
    grid.  The SNR at which each curve reaches that rate is found by linear
    interpolation; the result is ``snr_reference - snr_improved`` (positive
    when ``improved`` needs less SNR).
    """
    snr = np.asarray(snr_db, dtype=float)
    ref = np.asarray(reference, dtype=float)
    imp = np.asarray(improved, dtype=float)
    if level is None:
        level = float(np.interp(0.5 * (snr[0] + snr[-1]), snr, ref))
    for curve in (ref, imp):
        if not (curve.min() <= level <= curve.max()):
            raise ValueError("rate level is outside the range of a curve")
        if np.any(np.diff(curve) <= 0):
            raise ValueError("curves must be increasing in SNR")
    return float(np.interp(level, ref, snr) - np.interp(level, imp, snr))


def high_snr_slope(snr_db, rates, lo: float, hi: float) -> float:
    """Average rate increase in bits per 3 dB between two grid points."""
    snr = np.asarray(snr_db, dtype=float)
    r = np.asarray(rates, dtype=float)
    i, j = int(np.flatnonzero(np.isclose(snr, lo))[0]), int(np.flatnonzero(np.isclose(snr, hi))[0])
    return float((r[j] - r[i]) / ((hi - lo) / 3.0))


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfmac", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="design codebooks and evaluate all schemes")
    p.add_argument("config", help="config JSON path or a shipped recipe name such as fig5")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_DIR_ENV}, config, ./results)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker processes")

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")

    p = sub.add_parser("pack", help="design codebooks only and write them as JSON")
    p.add_argument("--scheme", required=True, choices=["grassmann", "eigenbeam", "covariance"])
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "validate":
            print(validate(args.config))
        elif args.command == "run":
            if args.threads < 1:
                raise ConfigError("--threads: must be at least 1")
            table = run(args.config, args.out, args.seed, args.threads)
            flagged = table.meta["flagged_cells"]
            print(f"{len(table.rows)} rows, {len(table.regions)} regions, {flagged} flagged cells")
        elif args.command == "pack":
            for path in pack(args.config, args.scheme, args.out, args.seed):
                print(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
