"""Collects one verdict line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:<3} {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    print(line)
