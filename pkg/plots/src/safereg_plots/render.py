"""Render figures from safereg simulation CSV outputs.

Strictly a consumer of the CSV files the simulator writes (trajectory.csv
with columns t,y1,...,r,e,h,U,rho,err_norm,z0,z1,w0,w1 and the long-format
fields.csv with x,t,z,w); no computation happens here beyond plotting.

Figure kinds:
    timeseries  payload displacement y1 with the reference and barrier
                overlays (one-sided: the reference is the barrier;
                two-sided: r(t) +- M exp(-sigma t))
    surface     z(x,t) and w(x,t) surfaces from field snapshots
    error-norm  estimation error norm with the recorded envelope

Script usage:  safereg-plot --in RUN_DIR --kind timeseries --out fig.png
"""

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("timeseries", "surface", "error-norm")


class MissingColumn(KeyError):
    """A required CSV column is absent."""


class EmptyInput(ValueError):
    """The CSV holds no data rows."""


@dataclass(frozen=True)
class PlotJob:
    indir: Path
    kind: str
    out: Path
    barrier: dict = field(default_factory=dict)   # {} -> reference overlay;
    # {"M_delta": ..., "sigma_delta": ...} -> two-sided corridor overlay

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


def read_csv(path, required):
    data = np.genfromtxt(path, delimiter=",", names=True)
    if data.size == 0:
        raise EmptyInput(f"{path} has no data rows")
    names = data.dtype.names or ()
    for col in required:
        if col not in names:
            raise MissingColumn(f"{path} lacks column {col!r}")
    return data


def _timeseries(job, ax):
    data = read_csv(Path(job.indir) / "trajectory.csv", ("t", "y1", "r", "h"))
    t = data["t"]
    ax.plot(t, data["y1"], color="tab:blue", lw=1.2, label="y1(t)")
    ax.plot(t, data["r"], color="black", ls="--", lw=1.0, label="r(t)")
    if "M_delta" in job.barrier:
        delta = job.barrier["M_delta"] * np.exp(-job.barrier["sigma_delta"] * t)
        ax.plot(t, data["r"] + delta, color="tab:red", ls=":", lw=1.0, label="barrier+")
        ax.plot(t, data["r"] - delta, color="tab:red", ls=":", lw=1.0, label="barrier-")
    else:
        ax.plot(t, data["r"], color="tab:red", ls=":", lw=2.0, alpha=0.5, label="barrier")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("displacement")
    ax.legend(loc="best")


def _error_norm(job, ax):
    data = read_csv(Path(job.indir) / "trajectory.csv", ("t", "err_norm", "rho"))
    ax.semilogy(data["t"], np.maximum(data["err_norm"], 1e-300),
                color="tab:blue", lw=1.2, label="error norm")
    if np.any(data["rho"] > 0):
        ax.semilogy(data["t"], np.maximum(data["rho"], 1e-300),
                    color="tab:orange", ls="--", lw=1.0, label="envelope")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("estimation error")
    ax.legend(loc="best")


def _surface(job, fig):
    data = read_csv(Path(job.indir) / "fields.csv", ("x", "t", "z", "w"))
    xs = np.unique(data["x"])
    ts = np.unique(data["t"])
    Z = data["z"].reshape(len(ts), len(xs))
    W = data["w"].reshape(len(ts), len(xs))
    Tg, Xg = np.meshgrid(ts, xs, indexing="ij")
    for i, (M, name) in enumerate(((W, "w(x,t)"), (Z, "z(x,t)"))):
        ax = fig.add_subplot(1, 2, i + 1, projection="3d")
        ax.plot_surface(Tg, Xg, M, cmap="viridis", linewidth=0)
        ax.set_xlabel("t")
        ax.set_ylabel("x")
        ax.set_title(name)


def build_figure(job):
    """Assemble the figure for a job; file writing happens in render()."""
    if job.kind == "surface":
        fig = plt.figure(figsize=(9, 4))
        _surface(job, fig)
    else:
        fig, ax = plt.subplots(figsize=(6.4, 4.2))
        if job.kind == "timeseries":
            _timeseries(job, ax)
        else:
            _error_norm(job, ax)
    fig.tight_layout()
    return fig


def render(job):
    """Render the job and write the image; returns the output path."""
    fig = build_figure(job)
    out = Path(job.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(prog="safereg-plot", description=__doc__)
    ap.add_argument("--in", dest="indir", required=True, help="run output directory")
    ap.add_argument("--kind", required=True, choices=KINDS)
    ap.add_argument("--out", required=True, help="output image file")
    ap.add_argument("--barrier-M", type=float, default=None,
                    help="two-sided corridor amplitude")
    ap.add_argument("--barrier-sigma", type=float, default=None,
                    help="two-sided corridor decay rate")
    args = ap.parse_args(argv)
    barrier = {}
    if args.barrier_M is not None:
        barrier = {"M_delta": args.barrier_M, "sigma_delta": args.barrier_sigma or 0.0}
    try:
        out = render(PlotJob(indir=Path(args.indir), kind=args.kind,
                             out=Path(args.out), barrier=barrier))
    except (MissingColumn, EmptyInput, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
