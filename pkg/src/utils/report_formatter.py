"""Plain-text formatting of run reports and report comparisons."""
from typing import Any, Dict, List, Optional, Sequence


def format_value(value: Any, precision: int = 4) -> str:
    """
    Render one table cell.

    Args:
        value: Cell value
        precision: Significant digits for floats

    Returns:
        Formatted cell
    """
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if value == float("inf"):
            return "inf"
        return f"{value:.{precision}g}"
    return str(value)


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]], precision: int = 4) -> str:
    """Fixed-width text table, first column left-aligned, the others right-aligned."""
    cells = [[str(h) for h in header]] + [[format_value(v, precision) for v in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for k, row in enumerate(cells):
        parts = [row[0].ljust(widths[0])] + [row[i].rjust(widths[i]) for i in range(1, len(row))]
        lines.append("  ".join(parts))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_comparison(comparison: Dict[str, Any], precision: int = 4) -> str:
    """
    Side-by-side table of two reports.

    Args:
        comparison: Output of ``runner.compare_reports``
        precision: Significant digits

    Returns:
        Table text with an optional displacement-difference footer
    """
    name_a, name_b = comparison["solvers"]
    rows = [[r["field"], r["a"], r["b"], r["ratio"]] for r in comparison["rows"]]
    text = format_table(["quantity", f"a ({name_a})", f"b ({name_b})", "b / a"], rows, precision)
    if "displacement_difference" in comparison:
        text += f"\n\nrelative displacement difference |u_a - u_b| / |u_a| = {comparison['displacement_difference']:.3e}"
    return text


def format_report_summary(report: Dict[str, Any], keys: Optional[List[str]] = None) -> str:
    """Two-column summary of the headline numbers of one report."""
    keys = keys or ["solver", "n_cells", "n_dofs", "total_newton_iterations", "primal_level", "memory_bytes"]
    rows = [[k, report.get(k)] for k in keys]
    rows += [[f"time.{k}", v] for k, v in sorted(report.get("timing", {}).items())]
    return format_table(["field", "value"], rows)
