"""Terminal report output for magrasp (with optional rich support)."""

import math
from typing import Optional

from magrasp.metrics import RunMetrics

# Try to import rich for pretty output
try:
    from rich.console import Console
    from rich.panel import Panel
    from rich.table import Table
    from rich.text import Text
    RICH_AVAILABLE = True
except ImportError:
    RICH_AVAILABLE = False


def run_status(metrics: RunMetrics) -> str:
    """One word verdict: DIVERGED, DROPPED, BURST, GROUNDED or OK."""
    if not metrics.completed:
        return "DIVERGED"
    if metrics.dropped:
        return "DROPPED"
    if metrics.burst:
        return "BURST"
    if metrics.ground_contact:
        return "GROUNDED"
    return "OK"


def get_status_color(status: str) -> str:
    colors = {
        "OK": "green",
        "GROUNDED": "yellow",
        "BURST": "orange1",
        "DROPPED": "red",
        "DIVERGED": "bold red",
    }
    return colors.get(status, "white")


def get_status_emoji(status: str) -> str:
    emojis = {
        "OK": "🟢",
        "GROUNDED": "🟡",
        "BURST": "🟠",
        "DROPPED": "🔴",
        "DIVERGED": "🔴",
    }
    return emojis.get(status, "⚪")


def _fmt(value, unit: str = "") -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        return f"{value:.4g}{unit}"
    return f"{value}{unit}"


def _run_rows(metrics: RunMetrics) -> list[tuple[str, str, str]]:
    rows = [
        ("Simulated:", _fmt(metrics.simulated, " s"), f"(seed {metrics.seed})"),
        ("Altitude dev.:", _fmt(metrics.max_altitude_deviation, " m"),
         f"(drop {_fmt(metrics.max_altitude_drop, ' m')})"),
        ("Max grasp force:", _fmt(metrics.max_grasp_force, " N"), ""),
        ("Sensing RMS:", _fmt(metrics.sensing_rms, " N"), "per axis"),
    ]
    if metrics.weight_sensed_end is not None:
        rows.append(("Weight sensed:", _fmt(metrics.weight_sensed_end, " N"),
                     f"({_fmt(metrics.estimated_payload_mass, ' kg')})"))
    for k, seg in enumerate(metrics.segments, start=1):
        rows.append((f"Segment {k}:", f"f_d {seg.f_d:g} N", f"ss err {_fmt(seg.steady_error, ' N')}, "
                     f"settle {_fmt(seg.settle_time, ' s')}"))
    issues = []
    if metrics.framing_errors:
        issues.append(f"{metrics.framing_errors} framing errors")
    if metrics.stale_ticks:
        issues.append(f"{metrics.stale_ticks} stale ticks")
    if metrics.thrust_saturations:
        issues.append(f"{metrics.thrust_saturations} thrust saturations")
    if metrics.grasp_clamps:
        issues.append(f"{metrics.grasp_clamps} grasp clamps")
    if issues:
        rows.append(("Flags:", ", ".join(issues), ""))
    return rows


def print_terminal_report_rich(metrics: RunMetrics, version: str, title: str) -> None:
    """Print rich terminal report with colors and formatting."""
    console = Console()
    status = run_status(metrics)
    color = get_status_color(status)

    console.print()
    console.print(f"[bold cyan]🛸 magrasp v{version}[/bold cyan] — {title}")
    console.print()

    text = Text()
    text.append(f"Scenario: {metrics.scenario}\n", style="bold")
    text.append(f"Status:   {get_status_emoji(status)} {status}", style=color)
    console.print(Panel(text, title="Run", border_style=color, width=40))

    table = Table(show_header=False, box=None, padding=(0, 2))
    table.add_column(style="dim")
    table.add_column(style="bold")
    table.add_column()
    for row in _run_rows(metrics):
        table.add_row(*row)
    console.print(table)
    console.print()


def print_terminal_report_plain(metrics: RunMetrics, version: str, title: str) -> None:
    """Print plain text terminal report (no rich)."""
    status = run_status(metrics)
    print()
    print(f"🛸 magrasp v{version} — {title}")
    print()
    print("╭─────────────────────────────────────╮")
    print(f"│  Scenario: {metrics.scenario:24s} │")
    print(f"│  Status:   {get_status_emoji(status)} {status:21s} │")
    print("╰─────────────────────────────────────╯")
    for label, value, note in _run_rows(metrics):
        print(f"  {label:18s}{value} {note}".rstrip())
    print()


def print_terminal_report(
    metrics: RunMetrics,
    version: str,
    force_plain: bool = False,
    title: str = "Run Complete",
) -> None:
    """
    Print terminal report with optional rich formatting.

    Args:
        metrics: Metrics of the run to report
        version: magrasp version string
        force_plain: Force plain text output even if rich is available
        title: Header line suffix
    """
    if RICH_AVAILABLE and not force_plain:
        print_terminal_report_rich(metrics, version, title)
    else:
        print_terminal_report_plain(metrics, version, title)


def print_summary(
    title: str,
    summary: dict,
    version: str,
    force_plain: bool = False,
    note: Optional[str] = None,
) -> None:
    """Key/value summary for sweeps, calibrations and replays."""
    if RICH_AVAILABLE and not force_plain:
        console = Console()
        console.print()
        console.print(f"[bold cyan]🛸 magrasp v{version}[/bold cyan] — {title}")
        table = Table(show_header=False, box=None, padding=(0, 2))
        table.add_column(style="dim")
        table.add_column(style="bold")
        for key, value in summary.items():
            table.add_row(f"{key}:", _fmt(value))
        console.print(table)
        if note:
            console.print(f"[dim]{note}[/dim]")
        console.print()
        return

    print()
    print(f"🛸 magrasp v{version} — {title}")
    for key, value in summary.items():
        print(f"  {key + ':':28s}{_fmt(value)}")
    if note:
        print(f"  {note}")
    print()
