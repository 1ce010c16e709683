"""Provide experiment runs, seed sweeps and their result files."""
import asyncio
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import shortuuid

from mgrl import __version__
from mgrl.approx import DEEP_ALGOS, deep_train, save_checkpoint
from mgrl.config import ExperimentConfig, build_env, resolve_seed
from mgrl.core import MetricRow
from mgrl.core.rng import Rng
from mgrl.tabular import train

logging.basicConfig(stream=sys.stdout)
logger = logging.getLogger("runner")
logger.setLevel(logging.INFO)

SCHEMA_VERSION = 1
CSV_HEADER = ("step", "episode", "metric", "value", "seed")


def final_metrics(rows: Sequence[MetricRow]) -> Dict[str, float]:
    """Return the last logged value of every metric."""
    final = {}
    for row in rows:
        final[row.metric] = row.value
    return final


def run_experiment(config: ExperimentConfig, seed: int):
    """Run one experiment in-process; return ``(rows, summary, model)``.

    ``model`` is the trained network for deep algorithms and None otherwise.
    """
    rng = Rng(seed)
    environment = build_env(config.env, rng.spawn(0))
    model = None
    if config.algo in DEEP_ALGOS:
        rows, nets = deep_train(config.algo, environment, config.deep, rng.spawn(1))
        model = nets.q
    else:
        rows, _ = train(
            config.algo, environment, config.train, rng.spawn(1), config.her
        )
    summary = {
        "schema_version": SCHEMA_VERSION,
        "run_id": shortuuid.uuid(),
        "version": __version__,
        "seed": seed,
        "algo": config.algo,
        "final": final_metrics(rows),
        "config": config.dict(),
    }
    return rows, summary, model


def write_csv(rows: Sequence[MetricRow], path):
    """Write metric rows with the fixed header; floats use their repr."""
    with open(path, "w", encoding="utf-8", newline="") as fil:
        writer = csv.writer(fil, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(
                [row.step, row.episode, row.metric, repr(float(row.value)), row.seed]
            )


def write_json(content, path):
    """Write a JSON document."""
    with open(path, "w", encoding="utf-8") as fil:
        json.dump(content, fil, indent=2, sort_keys=True)
        fil.write("\n")


def run_to_directory(config: ExperimentConfig, out_dir=None) -> Tuple[Path, Path]:
    """Run one experiment and write ``metrics.csv`` and ``summary.json``."""
    seed = resolve_seed(config)
    out = Path(out_dir or config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary, model = run_experiment(config, seed)
    csv_path, json_path = out / "metrics.csv", out / "summary.json"
    write_csv(rows, csv_path)
    write_json(summary, json_path)
    if model is not None and config.output.checkpoint:
        save_checkpoint(model, out / "checkpoint.msgpack")
    logger.info("run %s finished, results in %s", summary["run_id"], out)
    return csv_path, json_path


def aggregate(summaries: List[dict]) -> dict:
    """Return the mean and population std of every final metric over seeds."""
    ordered = sorted(summaries, key=lambda item: item["seed"])
    names = sorted({name for item in ordered for name in item["final"]})
    metrics = []
    for name in names:
        values = np.array(
            [item["final"][name] for item in ordered if name in item["final"]]
        )
        metrics.append(
            {
                "metric": name,
                "mean": float(values.mean()),
                "std": float(values.std()),
                "count": int(values.size),
            }
        )
    return {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "seeds": [item["seed"] for item in ordered],
        "metrics": metrics,
    }


async def sweep(config: ExperimentConfig, seeds: Sequence[int], out_dir=None) -> dict:
    """Run ``config`` once per seed in worker threads and aggregate the results."""
    out = Path(out_dir or config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    loop = asyncio.get_event_loop()
    results = await asyncio.gather(
        *(loop.run_in_executor(None, run_experiment, config, seed) for seed in seeds)
    )
    summaries = []
    for index, (seed, (rows, summary, _)) in enumerate(zip(seeds, results)):
        write_csv(rows, out / f"run-{index}-seed-{seed}.csv")
        summaries.append(summary)
    report = aggregate(summaries)
    write_json(report, out / "aggregate.json")
    logger.info("sweep over %d seeds written to %s", len(seeds), out)
    return report
