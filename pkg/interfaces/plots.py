from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path
from typing import Mapping, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from logic.cusum import CusumConfig, CusumTrace  # noqa: E402

_logger = logging.getLogger(__name__)

MAX_PANELS = 8


def plot_cusum_traces(
    traces: Mapping[Tuple[str, str], CusumTrace],
    config: CusumConfig,
    path: Path | str,
) -> Path | None:
    """One panel per key: discrepancy on the left axis, CUSUM statistic on the right."""
    keys = sorted(traces)[:MAX_PANELS]
    if not keys:
        return None
    if len(traces) > MAX_PANELS:
        _logger.info("plotting first %d of %d traces", MAX_PANELS, len(traces))

    fig, axes = plt.subplots(len(keys), 1, figsize=(10, 2.6 * len(keys)), sharex=True, squeeze=False)
    for ax, key in zip(axes[:, 0], keys):
        points = traces[key].points
        dates = [p.date for p in points]
        ax.plot(dates, [p.value for p in points], color="tab:blue", linewidth=1.0, label="discrepancy")
        ax.axhline(config.target_mean, color="tab:blue", linestyle=":", linewidth=0.8)
        ax.set_ylabel("d", color="tab:blue")
        ax.set_title(f"{key[0]} / {key[1]}", fontsize=9, loc="left")

        right = ax.twinx()
        right.plot(dates, [p.statistic for p in points], color="tab:red", linewidth=1.0, label="CUSUM")
        right.axhline(config.threshold, color="tab:red", linestyle="--", linewidth=0.8)
        for p in points:
            if p.alarm:
                right.axvline(p.date, color="tab:red", alpha=0.25, linewidth=0.8)
        right.set_ylabel("S", color="tab:red")

    fig.autofmt_xdate()
    fig.tight_layout()

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".png", dir=target.parent)
    os.close(fd)
    try:
        fig.savefig(tmp_name, format="png", dpi=100, metadata={"Software": None})
        os.replace(tmp_name, target)
    finally:
        plt.close(fig)
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
    return target
