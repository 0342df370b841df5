"""Plot-ready column extracts from metrics CSVs."""

import csv

from .errors import ConfigurationError
from .trainer import NA, read_metrics

PRESETS = {
    "loss": ("iteration", "empirical_loss", "test_loss"),
    "angles13": ("iteration", "angle1", "angle3"),
    "angles24": ("iteration", "angle2", "angle4"),
}
_ANGLES = {"angle1", "angle2", "angle3", "angle4"}


def export_curves(metrics_csv, which, out_path=None):
    """Select columns from a metrics file.

    ``which`` is a preset name (``loss``, ``angles13``, ``angles24``) or a
    comma-separated column list.  Rows where a selected angle is undefined
    are dropped; other missing values stay ``NA``.
    """
    header, rows = read_metrics(metrics_csv)
    columns = PRESETS.get(which) or tuple(c.strip() for c in which.split(",") if c.strip())
    unknown = [c for c in columns if c not in header]
    if unknown or not columns:
        raise ConfigurationError(
            f"unknown column(s) {', '.join(unknown) or which!r}; available: {', '.join(header)}"
        )
    angle_cols = [c for c in columns if c in _ANGLES]
    kept = [
        [row[c] for c in columns]
        for row in rows
        if all(row[c] is not None for c in angle_cols)
    ]
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for values in kept:
                w.writerow([NA if v is None else repr(v) if isinstance(v, float) else v
                            for v in values])
    return list(columns), kept
