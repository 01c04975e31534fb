## Minimal SVG line charts of metric columns across runs.

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np

from config.config import Config
from qql.errors import SchemaError

logger = logging.getLogger(__name__)

PALETTE = ('#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f')
MARGIN = {'left': 70, 'right': 160, 'top': 40, 'bottom': 50}

Series = Tuple[np.ndarray, np.ndarray]


## Read one numeric column of a CSV file against its step (or row index) column
def read_column(path: Union[str, Path], column: str) -> Series:
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise SchemaError(f"Column '{column}' not found in {path}")
        rows = list(reader)
    xs = [float(row['step']) if 'step' in row else float(i) for i, row in enumerate(rows)]
    ys = [float(row[column]) for row in rows]
    return np.asarray(xs), np.asarray(ys)


def _ticks(low: float, high: float, count: int) -> np.ndarray:
    if high == low:
        low, high = low - 0.5, high + 0.5
    return np.linspace(low, high, count)


## Render one chart: a polyline per labelled series on linear autoscaled axes
def render_svg(series: Dict[str, Series], title: str, y_label: str = '') -> str:
    width, height = Config.SVG_WIDTH, Config.SVG_HEIGHT
    plot_w = width - MARGIN['left'] - MARGIN['right']
    plot_h = height - MARGIN['top'] - MARGIN['bottom']

    xs = np.concatenate([x for x, _ in series.values()]) if series else np.zeros(1)
    ys = np.concatenate([y for _, y in series.values()]) if series else np.zeros(1)
    finite = np.isfinite(ys)
    x_ticks = _ticks(float(xs.min()), float(xs.max()), Config.SVG_TICKS)
    y_ticks = _ticks(float(ys[finite].min()) if finite.any() else 0.0,
                     float(ys[finite].max()) if finite.any() else 1.0, Config.SVG_TICKS)
    x0, x1, y0, y1 = x_ticks[0], x_ticks[-1], y_ticks[0], y_ticks[-1]

    def px(x):
        return MARGIN['left'] + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return MARGIN['top'] + plot_h - (y - y0) / (y1 - y0) * plot_h

    parts: List[str] = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"] + plot_h}" x2="{MARGIN["left"] + plot_w}" '
        f'y2="{MARGIN["top"] + plot_h}" stroke="black"/>',
        f'<line x1="{MARGIN["left"]}" y1="{MARGIN["top"]}" x2="{MARGIN["left"]}" '
        f'y2="{MARGIN["top"] + plot_h}" stroke="black"/>',
    ]
    for t in x_ticks:
        parts.append(f'<text x="{px(t):.1f}" y="{MARGIN["top"] + plot_h + 18}" text-anchor="middle" '
                     f'font-size="11">{t:.4g}</text>')
    for t in y_ticks:
        parts.append(f'<text x="{MARGIN["left"] - 6}" y="{py(t) + 4:.1f}" text-anchor="end" '
                     f'font-size="11">{t:.4g}</text>')
    if y_label:
        parts.append(f'<text x="16" y="{MARGIN["top"] + plot_h / 2:.1f}" font-size="12" '
                     f'transform="rotate(-90 16 {MARGIN["top"] + plot_h / 2:.1f})" text-anchor="middle">'
                     f'{escape(y_label)}</text>')

    for index, (label, (x, y)) in enumerate(series.items()):
        color = PALETTE[index % len(PALETTE)]
        keep = np.isfinite(y)
        points = ' '.join(f'{px(a):.2f},{py(b):.2f}' for a, b in zip(x[keep], y[keep]))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>')
        legend_y = MARGIN['top'] + 16 * index + 8
        legend_x = MARGIN['left'] + plot_w + 12
        parts.append(f'<rect x="{legend_x}" y="{legend_y - 8}" width="10" height="10" fill="{color}"/>')
        parts.append(f'<text x="{legend_x + 16}" y="{legend_y + 1}" font-size="11">{escape(label)}</text>')

    parts.append('</svg>')
    return '\n'.join(parts) + '\n'


## One chart per column across metric files; legend entries are the file stems
def plot_metrics(files: Sequence[Union[str, Path]], columns: Sequence[str], out: Union[str, Path]) -> List[Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    written = []
    for column in columns:
        series = {}
        for file in files:
            file = Path(file)
            label = file.stem if file.stem not in series else str(file)
            series[label] = read_column(file, column)
        target = out if len(columns) == 1 else out.with_name(f"{out.stem}_{column}{out.suffix or '.svg'}")
        target.write_text(render_svg(series, column, column), encoding='utf-8')
        logger.info(f"Plot of '{column}' written to {target}")
        written.append(target)
    return written
