"""Matplotlib figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 7,
    "xtick.direction": "in",
    "ytick.direction": "in",
    "lines.linewidth": 1.0,
    "savefig.dpi": 150,
}


def _gauss_dip(x, fit):
    return fit.baseline_db + fit.depth_db * np.exp(-0.5 * ((x - fit.center) / fit.sigma) ** 2)


def plot_scan(path, scan, profile_x, conj_intensity, fits, slit_width, meta=None):
    """Conjugate profile on top, one noise trace per probe position below with its Gaussian fit."""
    with plt.rc_context(STYLE):
        fig, (ax_p, ax_n) = plt.subplots(2, 1, figsize=(4.5, 5.0), sharex=True,
                                         gridspec_kw={"height_ratios": [1, 3]})
        ax_p.plot(profile_x, conj_intensity / conj_intensity.max(), color="k")
        ax_p.plot([-slit_width / 2, slit_width / 2], [0.1, 0.1], color="tab:red", lw=3)
        ax_p.set_ylabel("conj. (a.u.)")
        colors = plt.cm.viridis(np.linspace(0, 0.9, len(scan.probe_positions)))
        xf = np.linspace(scan.conj_positions.min(), scan.conj_positions.max(), 400)
        for i, (xp, col) in enumerate(zip(scan.probe_positions, colors)):
            x, y = scan.trace(i)
            ax_n.plot(x, y, "o", ms=2, color=col, label=f"probe {xp:.0f} um")
            if fits[i].fit is not None:
                ax_n.plot(xf, _gauss_dip(xf, fits[i].fit), color=col)
        ax_n.axhline(0.0, color="k", lw=1.5)
        ax_n.set_xlabel("conjugate slit position (um)")
        ax_n.set_ylabel("noise re. shot noise (dB)")
        ax_n.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=meta)
        plt.close(fig)


def plot_attenuation(path, a, v, result, meta=None):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.plot(1 - a, 10 * np.log10(v), color="k")
        ax.plot([result.attenuation], [result.v_min_db], "o", color="tab:red",
                label=f"optimum {100 * result.attenuation:.1f}% / {result.v_min_db:.2f} dB")
        ax.set_xlabel("conjugate attenuation")
        ax.set_ylabel("noise re. shot noise (dB)")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=meta)
        plt.close(fig)


def plot_farfield(path, near, far_random, far_zero, pitch, meta=None):
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9.0, 3.2))
        ny, nx = near.shape
        ext = [-nx * pitch / 2, nx * pitch / 2, -ny * pitch / 2, ny * pitch / 2]
        axes[0].imshow(near, cmap="gray", extent=ext, origin="lower")
        axes[0].set_title("near field")
        axes[0].set_xlabel("x (um)")
        for ax, img, title in ((axes[1], far_random, "far field, random phases"),
                               (axes[2], far_zero, "far field, zero phases")):
            ax.imshow(np.sqrt(img / img.max()), cmap="gray", origin="lower")
            ax.set_title(title)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.tight_layout()
        fig.savefig(path, format="png", metadata=meta)
        plt.close(fig)
