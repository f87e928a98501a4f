"""
Plain-text rendering for command output.
Provides boxed banners, aligned tables and progress bars.
"""

import sys
from typing import Any, Dict, List, Optional, Sequence, TextIO


class TextRenderer:
    """Renders command results to a text stream."""

    BOX_STYLES = {
        "single": {"tl": "┌", "tr": "┐", "bl": "└", "br": "┘", "h": "─", "v": "│"},
        "double": {"tl": "╔", "tr": "╗", "bl": "╚", "br": "╝", "h": "═", "v": "║"},
        "ascii": {"tl": "+", "tr": "+", "bl": "+", "br": "+", "h": "-", "v": "|"},
    }

    def __init__(self, stream: Optional[TextIO] = None, style: str = "double", quiet: bool = False):
        self.stream = stream or sys.stdout
        self.style = style if style in self.BOX_STYLES else "double"
        self.quiet = quiet

    def emit(self, line: str = ""):
        if not self.quiet:
            print(line, file=self.stream)

    def create_box(self, lines: Sequence[str], min_width: int = 0) -> List[str]:
        """Frame lines in a box."""
        s = self.BOX_STYLES[self.style]
        inner = max([len(line) for line in lines] + [min_width])
        box = [s["tl"] + s["h"] * (inner + 2) + s["tr"]]
        box.extend(f"{s['v']} {line.ljust(inner)} {s['v']}" for line in lines)
        box.append(s["bl"] + s["h"] * (inner + 2) + s["br"])
        return box

    def banner(self, title: str, subtitle: str = ""):
        lines = [title] + ([subtitle] if subtitle else [])
        for line in self.create_box(lines):
            self.emit(line)

    def create_progress_bar(self, current: int, maximum: int, width: int = 20,
                            style: str = "█") -> str:
        """Create a progress bar."""
        percentage = 0.0 if maximum <= 0 else min(1.0, current / maximum)
        filled = int(width * percentage)
        return f"[{style * filled}{'░' * (width - filled)}] {percentage * 100:.0f}%"

    def progress(self, label: str, current: int, maximum: int):
        self.emit(f"{label} {self.create_progress_bar(current, maximum)}")

    @staticmethod
    def _cell(value: Any) -> str:
        if isinstance(value, float):
            return f"{value:.4g}"
        return str(value)

    def create_table(self, rows: Sequence[Dict[str, Any]],
                     columns: Optional[Sequence[str]] = None) -> List[str]:
        """Align rows under their column headers."""
        if not rows:
            return ["(no rows)"]
        columns = list(columns or rows[0].keys())
        cells = [[self._cell(row.get(c, "")) for c in columns] for row in rows]
        widths = [max(len(c), *(len(r[i]) for r in cells)) for i, c in enumerate(columns)]
        header = "  ".join(c.rjust(w) for c, w in zip(columns, widths))
        rule = "  ".join("-" * w for w in widths)
        body = ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
        return [header, rule] + body

    def table(self, rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None):
        for line in self.create_table(rows, columns):
            self.emit(line)

    def key_values(self, values: Dict[str, Any]):
        width = max((len(k) for k in values), default=0)
        for key, value in values.items():
            self.emit(f"{key.ljust(width)} : {self._cell(value)}")
