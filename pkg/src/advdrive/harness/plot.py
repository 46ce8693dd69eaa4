"""Static SVG training curves rendered from metrics CSVs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from advdrive.harness.metrics import read_csv  # noqa: E402


def plot_curves(csv_paths, output, labels=None) -> Path:
    """Mean return against env steps, one line per CSV, with a ±1 std band."""
    labels = labels or [Path(p).parent.name or Path(p).stem for p in csv_paths]
    # fixed hash salt and no date keep the SVG byte-stable across runs
    with plt.rc_context({"svg.hashsalt": "advdrive", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        for path, label in zip(csv_paths, labels):
            rows = read_csv(path)
            x = [r["env_steps"] for r in rows]
            m = [r["mean_return"] for r in rows]
            s = [r["std_return"] for r in rows]
            (line,) = ax.plot(x, m, label=label)
            ax.fill_between(x, [a - b for a, b in zip(m, s)], [a + b for a, b in zip(m, s)],
                            color=line.get_color(), alpha=0.15, linewidth=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean episode return")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(output, format="svg", metadata={"Date": None})
        plt.close(fig)
    return output
