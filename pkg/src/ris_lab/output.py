from typing import Optional

from ris_lab.models import CurvePoint
from ris_lab.oracle import BenchExponent
from ris_lab.trainer import TrainResult


def format_train_result(label: str, result: TrainResult) -> str:
    last: Optional[CurvePoint] = result.curves[-1] if result.curves else None
    status = 'converged' if result.converged else 'stopped'
    if last is None:
        return f"Training {label}: no updates"
    return f"""Training {label}:
    Mode:       {result.controller.kind.value}
    Updates:    {result.updates} ({status})
    J:          {last.J_estimate:.4f}
    Mean rate:  {last.mean_rate:.4f} bit/s/Hz
    Variance:   {last.rate_variance:.4f}"""


def format_evaluation(label: str, mean: float, variance: float, episodes: int) -> str:
    return f"""Evaluation {label}:
    Episodes:   {episodes}
    Mean R_T:   {mean:.4f}
    Var R_T:    {variance:.4f}"""


def format_comparison(label: str, value: float, optimum: float, gap: float, rmse: float) -> str:
    return f"""Comparison {label}:
    J policy:   {value:.6f}
    J optimal:  {optimum:.6f}
    Gap:        {gap:.2f}%
    RMSE:       {rmse:.2f}%"""


def format_bench_exponent(e: BenchExponent) -> str:
    return f"{e.mode:<12} {e.parameter}: measured {e.measured:.2f}, MACs {e.macs:.2f}, claim {e.claim}"


def format_generated(path: str, n_trajectories: int, rows: int) -> str:
    return f"Wrote {n_trajectories} trajectories ({rows} rows) to {path}"


def gnuplot_script(data: str, title: str, xlabel: str, ylabel: str, using: str, style: str = 'linespoints') -> str:
    """
    Stand-alone gnuplot script reading a CSV written by the run (the provenance line is a comment).
    """
    stem = data.rsplit('.', 1)[0]
    return f"""set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
set terminal pngcairo size 800,500
set output '{stem}.png'
set title '{title}'
set xlabel '{xlabel}'
set ylabel '{ylabel}'
plot '{data}' using {using} with {style}
"""


EVALUATION_PLOTS = {
    'episodes.gp': ('episodes.csv', 'Episodic return per episode', 'episode', 'R_T', '2:3', 'points'),
    'risk_variance.gp': ('risk_variance.csv', 'Return variance against mu', 'mu', 'Var R_T', '1:3', 'linespoints'),
    'policy_histogram.gp': ('policy_histogram.csv', 'Action histogram', 'action', 'count', '3:5', 'boxes'),
    'robustness.gp': ('robustness.csv', 'Rate deviation against obstacles', 'obstacles', 'deviation %', '1:4', 'points'),
    'horizon_sweep.gp': ('horizon_sweep.csv', 'Episodic return against horizon', 'T', 'mean R_T', '1:2', 'linespoints'),
}

COMPARE_PLOTS = {
    'compare_horizon.gp': ('compare_horizon.csv', 'Policy RMSE against horizon', 'T', 'RMSE %', '1:5', 'linespoints'),
}
