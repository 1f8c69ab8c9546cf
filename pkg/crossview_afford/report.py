"""Rich tables for metric reports and ablation summaries."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping

from rich.console import Console
from rich.table import Table
from rich.text import Text

from .metrics import SliceStat

COLUMNS: tuple[tuple[str, str], ...] = (
    ("kld", "KLD ↓"),
    ("sim", "SIM ↑"),
    ("nss", "NSS ↑"),
    ("hit", "Hit ↑"),
)
SECTIONS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Summary", ("overall", "partition:", "freq:")),
    ("Per affordance", ("class:",)),
    ("Per attribute", ("scale:", "attr:")),
)


def format_value(value: float) -> str:
    return "—" if math.isnan(value) else f"{value:.3f}"


def _matches(name: str, prefixes: Iterable[str]) -> bool:
    return any(name == p or (p.endswith(":") and name.startswith(p)) for p in prefixes)


def metric_table(slices: Mapping[str, Mapping[str, SliceStat]], prefixes: Iterable[str], title: str) -> Table:
    prefixes = tuple(prefixes)
    table = Table(title=title, title_justify="left", show_header=True, header_style="bold", box=None, padding=(0, 1))
    table.add_column("Slice", style="cyan", no_wrap=True)
    for _, label in COLUMNS:
        table.add_column(label, justify="right", no_wrap=True)
    table.add_column("n", justify="right", style="dim")

    names = [n for n in slices if _matches(n, prefixes)]
    for name in sorted(names, key=lambda n: (prefixes.index(next(p for p in prefixes if _matches(n, (p,)))), n)):
        stats = slices[name]
        cells = [format_value(stats[key].mean) if key in stats else "—" for key, _ in COLUMNS]
        n = max((s.n for s in stats.values()), default=0)
        table.add_row(name, *cells, str(n))
    return table


def baseline_table(slices: Mapping[str, Mapping[str, SliceStat]]) -> Table:
    """Model against the uniform-prediction baseline on every partition."""
    table = Table(title="Uniform baseline", title_justify="left", header_style="bold", box=None, padding=(0, 1))
    table.add_column("Slice", style="cyan", no_wrap=True)
    for label in ("KLD", "KLD uniform", "SIM", "SIM uniform"):
        table.add_column(label, justify="right")
    for name in sorted(n for n in slices if _matches(n, ("overall", "partition:"))):
        stats = slices[name]
        table.add_row(
            name,
            *(format_value(stats[m].mean) if m in stats else "—" for m in ("kld", "kld_uniform", "sim", "sim_uniform")),
        )
    return table


def report_tables(slices: Mapping[str, Mapping[str, SliceStat]]) -> list[Table]:
    tables = [metric_table(slices, prefixes, title) for title, prefixes in SECTIONS]
    tables.append(baseline_table(slices))
    return [t for t in tables if t.row_count]


def ablation_table(results: Mapping[str, list[float]], reference: str = "full") -> Table:
    """Mean KLD per variant over seeds; variants beating the reference are flagged."""
    table = Table(title="Ablation (Seen KLD)", title_justify="left", header_style="bold", box=None, padding=(0, 1))
    table.add_column("", width=1, no_wrap=True)
    table.add_column("Variant", style="cyan")
    table.add_column("KLD ↓", justify="right")
    table.add_column("seeds", justify="right", style="dim")
    ref = _mean(results.get(reference, []))
    for variant, values in results.items():
        mean = _mean(values)
        flagged = variant != reference and not math.isnan(ref) and mean < ref
        mark = Text("!", style="bold yellow") if flagged else Text("✓", style="bold green")
        table.add_row(mark, variant, format_value(mean), str(len(values)))
    return table


def _mean(values: Iterable[float]) -> float:
    finite = [v for v in values if math.isfinite(v)]
    return sum(finite) / len(finite) if finite else math.nan


def print_tables(tables: Iterable[Table], console: Console | None = None) -> None:
    console = console or Console()
    for table in tables:
        console.print(table)
        console.print()
