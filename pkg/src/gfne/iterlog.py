"""Iteration records and their tabular text rendering."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class MinorRow:
    label: str                      # "F1", "F2", ... for feasibility solves, then "1", "2", ...
    working: list                   # root-indexed (t, i, j) triples, 0-based
    comment: str = ""
    beta: float | None = None


@dataclass
class MajorRecord:
    index: int
    minors: list[MinorRow] = field(default_factory=list)
    alpha: float | None = None
    merit: float | None = None
    note: str = ""


@dataclass
class IterationLog:
    majors: list[MajorRecord] = field(default_factory=list)
    row_counts: dict = field(default_factory=dict)   # (t, i) -> rows, used to collapse j
    total_time: float = 0.0
    solve_time: float = 0.0
    eval_time: float = 0.0

    @property
    def lq_solves(self) -> int:
        return sum(len(m.minors) for m in self.majors)

    def format_set(self, working) -> str:
        parts = []
        for t, i, j in sorted(working):
            if self.row_counts.get((t, i), 0) == 1:
                parts.append(f"({t + 1},{i + 1})")
            else:
                parts.append(f"({t + 1},{i + 1},{j + 1})")
        return "{" + ",".join(parts) + "}"

    def to_text(self, timing: bool = True) -> str:
        head = ("major", "minor", "working set", "comment", "alpha", "merit")
        rows = []
        for mj in self.majors:
            for k, mn in enumerate(mj.minors):
                last = k == len(mj.minors) - 1
                comment = mn.comment
                if mn.beta is not None:
                    comment = f"{comment} beta={mn.beta:.4g}".strip()
                rows.append((
                    str(mj.index) if k == 0 else "",
                    mn.label,
                    self.format_set(mn.working),
                    comment,
                    f"{mj.alpha:.4g}" if last and mj.alpha is not None else "",
                    f"{mj.merit:.4g}" if last and mj.merit is not None else "",
                ))
            if mj.note:
                rows.append(("", "", "", mj.note, "", ""))
        widths = [max([len(h)] + [len(r[c]) for r in rows]) for c, h in enumerate(head)]

        def line(r):
            return "  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip()

        out = [line(head), line(tuple("-" * w for w in widths))]
        out.extend(line(r) for r in rows)
        out.append("")
        out.append(f"Total LQ Solves: {self.lq_solves}")
        if timing:
            out.append(self.timing_line())
        return "\n".join(out) + "\n"

    def timing_line(self) -> str:
        return (f"Total Time: {self.total_time:.2f}  Solve Time: {self.solve_time:.2f}  "
                f"Function Eval Time: {self.eval_time:.2f}")
