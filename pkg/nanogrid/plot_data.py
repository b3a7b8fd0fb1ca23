import json
import logging
from pathlib import Path

import numpy as np

from nanogrid.sim import soc_comparison, write_atomic

logger = logging.getLogger("Nanogrid.plot_data")


class PlotDataWriter:
    """Writes chart-ready JSON for the series a run produces.

    Rendering is left to whatever reads the files.
    """

    def __init__(self, output_dir):
        self.output_dir = Path(output_dir)
        self.data_dir = self.output_dir / "data"

    def write(self, results, ramp_limit_kw):
        written = [
            self._write_output_data(results),
            self._write_ramp_data(results, ramp_limit_kw),
            self._write_soc_data(results),
        ]
        logger.info(f"Plot data written to {self.data_dir}")
        return written

    def _dump(self, name, data):
        def dump(tmp):
            with open(tmp, "w") as f:
                json.dump(data, f, sort_keys=True)
        return write_atomic(self.data_dir / name, dump)

    def _write_output_data(self, results):
        """Raw net against achieved output per controller."""
        first = next(iter(results.values()))
        data = {
            "step": first.trace["step"].tolist(),
            "raw_net_kw": first.trace["raw_net_kw"].round(6).tolist(),
            "achieved_kw": {name: r.trace["achieved_kw"].round(6).tolist() for name, r in results.items()},
        }
        return self._dump("output.json", data)

    def _write_ramp_data(self, results, ramp_limit_kw):
        data = {"ramp_limit_kw": ramp_limit_kw, "controllers": {}}
        for name, r in results.items():
            changes = np.diff(r.trace["achieved_kw"].to_numpy(), prepend=r.trace["achieved_kw"].iloc[0])
            data["controllers"][name] = {
                "change_kw": np.round(changes, 6).tolist(),
                "total_violation_kw": r.summary.total_violation_kw,
            }
        return self._dump("ramp_changes.json", data)

    def _write_soc_data(self, results):
        frame = soc_comparison(results)
        data = {name: frame[name].round(6).tolist() for name in frame.columns}
        return self._dump("soc_comparison.json", data)
