"""Observer comparison protocol: per-channel MAE, segmentation of maneuvers
by peak lateral acceleration, ranking tables, and distribution statistics
for plotting.

Velocity errors are reported in m/s, yaw-rate errors in mrad/s. Segmentation
is decided per trajectory from the ground-truth peak |ay|: at or above the
0.5g threshold a maneuver counts as near-limits. Warm-up samples, which
replicate the provided initial state by construction, are excluded from MAE
by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import G_AY, G_MPS2, G_VX, G_VY, G_YAWRATE, Trajectory
from .errors import ConfigError
from .observer_lstm import EstimateTrace

CHANNELS = ("vx", "vy", "yaw_rate")
CHANNEL_UNITS = ("m/s", "m/s", "mrad/s")
SEGMENTS = ("overall", "normal", "near_limits")


@dataclass(frozen=True)
class SegmentSpec:
    """Regime thresholds in multiples of g."""

    normal_threshold_g: float = 0.5
    near_limits_max_g: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.normal_threshold_g < self.near_limits_max_g:
            raise ConfigError("need 0 < normal threshold < near-limits max")


def mae(est: EstimateTrace, ref, skip_warmup: bool = True,
        skip: int | None = None) -> np.ndarray:
    """Per-channel mean absolute error (vx m/s, vy m/s, yaw rate mrad/s).

    `ref` is a Trajectory or an (N, 3) ground-truth state matrix aligned
    sample-for-sample with the trace. `skip` overrides the number of leading
    samples to drop (defaults to the trace's own warm-up length).
    """
    truth = ref.state_channels() if isinstance(ref, Trajectory) \
        else np.asarray(ref, dtype=np.float64)
    if truth.shape != est.estimates.shape:
        raise ConfigError(
            f"length mismatch: trace {est.estimates.shape} vs reference {truth.shape}")
    start = 0
    if skip_warmup:
        start = est.warmup_len if skip is None else skip
    if start >= len(est):
        raise ConfigError("nothing left to evaluate after warm-up exclusion")
    err = np.abs(est.estimates[start:] - truth[start:]).mean(axis=0)
    return err * np.array([1.0, 1.0, 1000.0])


def segment_label(traj: Trajectory, spec: SegmentSpec | None = None) -> str:
    """`near_limits` iff the ground-truth peak |ay| reaches 0.5g (inclusive)."""
    spec = spec or SegmentSpec()
    peak = float(np.max(np.abs(traj.truth[:, G_AY])))
    return "near_limits" if peak >= spec.normal_threshold_g * G_MPS2 else "normal"


def segment_trajectories(trajs: list[Trajectory],
                         spec: SegmentSpec | None = None) -> dict[str, list[Trajectory]]:
    """Partition trajectories into exactly one group each."""
    groups: dict[str, list[Trajectory]] = {"normal": [], "near_limits": []}
    for traj in trajs:
        groups[segment_label(traj, spec)].append(traj)
    return groups


def compare_observers(reports: dict[str, np.ndarray]) -> dict[str, dict[str, str]]:
    """Rank observers per channel from a {name: per-channel MAE} table.

    Returns {channel: {"first", "second", "last"}}; ties break by observer
    name in lexicographic order.
    """
    if len(reports) < 2:
        raise ConfigError("ranking needs at least 2 observers")
    ranking: dict[str, dict[str, str]] = {}
    for ci, channel in enumerate(CHANNELS):
        order = sorted(reports, key=lambda name: (float(reports[name][ci]), name))
        ranking[channel] = {"first": order[0], "second": order[1], "last": order[-1]}
    return ranking


def friction_circle_hist(trajs: list[Trajectory], bins: int = 41,
                         range_g: float = 1.05):
    """2D histogram of ground-truth (ax, ay) counts over all samples.

    Returns (counts, ax_edges, ay_edges); edges are in m/s^2.
    """
    if bins < 2:
        raise ConfigError("need at least 2 bins per axis")
    ax = np.concatenate([t.truth[:, 7] for t in trajs])
    ay = np.concatenate([t.truth[:, 8] for t in trajs])
    lim = range_g * G_MPS2
    counts, ax_edges, ay_edges = np.histogram2d(
        ax, ay, bins=bins, range=[[-lim, lim], [-lim, lim]])
    return counts, ax_edges, ay_edges


def accel_distribution(trajs: list[Trajectory], bins: int = 40) -> dict:
    """Quantiles plus histogram counts of |ay|, the violin-plot ingredients."""
    if not trajs:
        raise ConfigError("empty trajectory list")
    ay = np.abs(np.concatenate([t.truth[:, G_AY] for t in trajs]))
    quantiles = np.quantile(ay, [0.0, 0.25, 0.5, 0.75, 1.0])
    counts, edges = np.histogram(ay, bins=bins, range=(0.0, 1.05 * G_MPS2))
    return {
        "min": float(quantiles[0]),
        "q25": float(quantiles[1]),
        "median": float(quantiles[2]),
        "q75": float(quantiles[3]),
        "max": float(quantiles[4]),
        "counts": counts,
        "edges": edges,
    }


# ---------------------------------------------------------------------------
# Aggregation across trajectories and report rendering
# ---------------------------------------------------------------------------

def aggregate_mae(per_trace: list[tuple[np.ndarray, int]]) -> np.ndarray:
    """Length-weighted mean of per-trace MAEs (equals the MAE of the
    concatenated traces)."""
    total = np.zeros(3)
    n = 0
    for err, count in per_trace:
        total += err * count
        n += count
    if n == 0:
        raise ConfigError("no samples to aggregate")
    return total / n


def scaled_mae_sum(err: np.ndarray, state_min: np.ndarray,
                   state_max: np.ndarray) -> float:
    """Channel-commensurate aggregate: per-channel MAE divided by the
    training range, summed. Yaw rate is converted back from mrad/s first."""
    phys = err * np.array([1.0, 1.0, 1e-3])
    return float(np.sum(phys / (state_max - state_min)))


@dataclass
class EvalReport:
    """Per-observer, per-segment, per-channel MAE plus sample counts."""

    table: dict[str, dict[str, np.ndarray]]  # observer -> segment -> (3,) MAE
    counts: dict[str, int]                   # segment -> sample count

    def ranking(self, segment: str = "overall") -> dict[str, dict[str, str]]:
        reports = {name: segs[segment] for name, segs in self.table.items()
                   if segment in segs}
        return compare_observers(reports)


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("observer,segment,channel,mae,unit,n_samples\n")
        for observer in sorted(report.table):
            for segment in SEGMENTS:
                if segment not in report.table[observer]:
                    continue
                err = report.table[observer][segment]
                for ci, channel in enumerate(CHANNELS):
                    fh.write(f"{observer},{segment},{channel},{float(err[ci])!r},"
                             f"{CHANNEL_UNITS[ci]},{report.counts.get(segment, 0)}\n")


def read_report_csv(path) -> EvalReport:
    table: dict[str, dict[str, np.ndarray]] = {}
    counts: dict[str, int] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "observer,segment,channel,mae,unit,n_samples":
            raise ConfigError(f"{path}: not an evaluation report")
        for line in fh:
            observer, segment, channel, value, _, n = line.strip().split(",")
            segs = table.setdefault(observer, {})
            err = segs.setdefault(segment, np.zeros(3))
            err[CHANNELS.index(channel)] = float(value)
            counts[segment] = int(n)
    return EvalReport(table, counts)


def format_report_text(report: EvalReport) -> str:
    """Aligned text tables (one per segment) with first/second/last marks."""
    lines = []
    for segment in SEGMENTS:
        observers = sorted(n for n, segs in report.table.items() if segment in segs)
        if not observers:
            continue
        reports = {n: report.table[n][segment] for n in observers}
        marks = {}
        if len(observers) >= 2:
            ranking = compare_observers(reports)
            for channel, spots in ranking.items():
                for spot, name in spots.items():
                    marks[(channel, name)] = {"first": "*", "second": "+", "last": "-"}[spot]
        width = max(max(len(n) for n in observers), 9) + 3
        label_w = max(len(f"{c} ({u})") for c, u in zip(CHANNELS, CHANNEL_UNITS)) + 2
        lines.append(f"== {segment} ({report.counts.get(segment, 0)} samples) ==")
        lines.append("state".ljust(label_w) + "".join(n.rjust(width) for n in observers))
        for ci, channel in enumerate(CHANNELS):
            row = f"{channel} ({CHANNEL_UNITS[ci]})".ljust(label_w)
            for name in observers:
                mark = marks.get((channel, name), " ")
                row += f"{reports[name][ci]:.4g}{mark}".rjust(width)
            lines.append(row)
        lines.append("")
    lines.append("marks: * lowest error, + second lowest, - highest")
    return "\n".join(lines) + "\n"
