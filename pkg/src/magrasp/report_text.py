"""Key = value text reports: run metrics, ablation comparison and calibration results."""

import json
import math


def _value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    if isinstance(value, (list, tuple)):
        return json.dumps(list(value))
    return str(value)


def generate_metrics_text(summary: dict) -> str:
    """
    Render a summary dict as `key = value` lines in the dict's order.

    Args:
        summary: Flat mapping, typically RunMetrics.summary()

    Returns:
        Text ending with a newline
    """
    return "".join(f"{key} = {_value(value)}\n" for key, value in summary.items())


def generate_comparison_text(rows: list[tuple[str, object, object]], toggled: list[str]) -> str:
    """Side-by-side metrics of an ablation pair."""
    width = max((len(key) for key, _, _ in rows), default=10)
    lines = [
        f"# ablated flags: {', '.join(toggled)}",
        f"{'metric':<{width}}  {'baseline':>22}  {'ablated':>22}",
    ]
    for key, base, other in rows:
        lines.append(f"{key:<{width}}  {_value(base):>22}  {_value(other):>22}")
    return "\n".join(lines) + "\n"


def parse_metrics_text(text: str) -> dict[str, str]:
    """Read a metrics file back as raw strings keyed by metric name."""
    out = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
