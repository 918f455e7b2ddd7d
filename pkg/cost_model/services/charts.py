import logging
from collections import defaultdict
from pathlib import Path
from typing import List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from cost_model.services.cost_formulas import CostReport  # noqa: E402

logger = logging.getLogger(__name__)

RATIOS = ("c_training", "c_inference", "s_training", "s_inference")


def ratio_chart(reports: List[CostReport], path: Path) -> Path:
    """Static SVG of the four ratios against the weight rank K, one line per layer shape."""
    series = defaultdict(list)
    for report in reports:
        s = report.shape
        label = f"B={s.batch} {'x'.join(map(str, s.spatial))} {s.in_features}->{s.out_features}"
        series[label].append(report)

    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    for ax, ratio in zip(axes.flat, RATIOS):
        for label, points in series.items():
            points = sorted(points, key=lambda r: r.shape.rank)
            ax.plot([p.shape.rank for p in points], [getattr(p, ratio) for p in points], marker="o", label=label)
        ax.set_title(ratio.replace("_", " "))
        ax.set_xlabel("weight rank K")
        ax.grid(True, alpha=0.3)
    axes.flat[0].legend(fontsize="small")
    fig.tight_layout()

    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Wrote ratio chart {path}")
    return path
