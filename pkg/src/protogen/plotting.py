"""Three-series path-similarity figures (prototype vs same-class vs different-class)."""

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .utils import atomic_write_bytes  # noqa: E402

STYLE = {
    "prototype": {"color": "#d62728", "label": "Prototype"},
    "same_class": {"color": "#1f77b4", "label": "Same class images"},
    "diff_class": {"color": "#7f7f7f", "label": "Different class images"},
}


def plot_three_series(curves: dict, path, title="", metadata=None):
    """Write a PNG with one line per series and shaded ±std bands.

    PNG text chunks carry ``metadata``; the matplotlib version stamp is
    dropped so identical inputs give identical bytes.
    """
    fig, ax = plt.subplots(figsize=(10, 4), dpi=100)
    for name, curve in curves.items():
        style = STYLE.get(name, {"color": None, "label": name})
        x = np.arange(len(curve.values))
        ax.plot(x, curve.values, color=style["color"], label=style["label"], lw=1.5)
        if curve.std is not None:
            ax.fill_between(x, curve.values - curve.std, curve.values + curve.std,
                            color=style["color"], alpha=0.2, lw=0)
    first = next(iter(curves.values()))
    ax.set_xlabel("layer")
    ax.set_ylabel(("normalized " if first.normalized else "") + first.metric)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    meta = {"Software": None}
    meta.update({str(k): str(v) for k, v in (metadata or {}).items()})
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata=meta)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())
    return path
