"""Scenario runs, controller comparison and result files."""
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import pandas as pd
from joblib import Parallel, delayed

from nanogrid.control import run_controller, run_uncontrolled
from nanogrid.errors import ParameterError

logger = logging.getLogger("Nanogrid.sim")

BASELINE = "baseline"
TRACE_COLUMNS = ["step", "raw_net_kw", "target_kw", "achieved_kw", "batt_soc_pct", "violation_kw"]
REPORT_COLUMNS = ["controller", "total_violation_kw", "violation_count", "max_violation_kw",
                  "final_batt_soc_pct", "ev_completed", "ev_sessions", "error"]


def run_baseline(scenario):
    return run_uncontrolled(scenario, BASELINE)


def _run_one(scenario, config):
    try:
        return config.name, run_controller(scenario, config), None
    except Exception as e:
        logger.error(f"Controller '{config.name}' failed: {e}")
        return config.name, None, str(e)


def compare(scenario, controllers, n_jobs=1):
    """Run every controller plus the uncontrolled baseline on one scenario.

    A failing controller gets an error row; the others still run. Rows are
    the baseline first, then controllers by name.
    """
    controllers = list(controllers)
    if not controllers:
        raise ParameterError("compare needs at least one controller")
    names = [c.name for c in controllers]
    if len(set(names)) != len(names) or BASELINE in names:
        raise ParameterError(f"controller names must be unique and not '{BASELINE}', got {names}")

    outcomes = Parallel(n_jobs=n_jobs)(delayed(_run_one)(scenario, c) for c in controllers)
    results = {BASELINE: run_baseline(scenario)}
    rows = [{**results[BASELINE].summary.to_record(), "error": ""}]
    for name, result, error in sorted(outcomes, key=lambda o: o[0]):
        if result is None:
            rows.append({"controller": name, "error": error})
            continue
        results[name] = result
        rows.append({**result.summary.to_record(), "error": ""})

    report = pd.DataFrame(rows).reindex(columns=REPORT_COLUMNS)
    logger.info(f"Compared {len(controllers)} controllers against the baseline")
    return report, results


def trace_frame(result):
    return result.trace[TRACE_COLUMNS + result.ev_soc_columns]


def soc_comparison(results):
    """Battery SoC trajectories side by side, one column per controller."""
    return pd.DataFrame({name: r.trace["batt_soc_pct"].to_numpy() for name, r in results.items()})


def write_atomic(path, write):
    """Call write(tmp_path) and move the finished file into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_trace(result, path):
    return write_atomic(path, lambda tmp: trace_frame(result).to_csv(tmp, index=False))


def _dump_json(data, tmp):
    with open(tmp, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)


def write_summary(results, path):
    records = [r if isinstance(r, dict) else r.summary.to_record() for r in results]
    return write_atomic(path, lambda tmp: _dump_json(records, tmp))


def write_compare(report, path):
    return write_atomic(path, lambda tmp: report.to_csv(tmp, index=False))


@contextmanager
def staged_output(output_dir):
    """Yield a scratch directory whose files move into output_dir together.

    If the body raises, the scratch directory is removed and output_dir is
    left as it was.
    """
    output_dir = Path(output_dir)
    output_dir.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(dir=output_dir.parent, prefix=f".{output_dir.name}."))
    try:
        yield staging
        files = sorted(p for p in staging.rglob("*") if p.is_file())
        for path in files:
            target = output_dir / path.relative_to(staging)
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(path, target)
        logger.debug(f"Published {len(files)} files to {output_dir}")
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def publish(output_dir, write_all):
    """write_all(stage_dir) returns the files it wrote; the published paths come back."""
    output_dir = Path(output_dir)
    with staged_output(output_dir) as stage:
        staged = write_all(stage)
    return [output_dir / Path(path).relative_to(stage) for path in staged]
