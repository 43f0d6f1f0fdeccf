"""Static grouped-bar SVG charts.

Bars live inside a flipped, scaled coordinate group so each rect's height
attribute is *literally* the plotted value: chart/CSV consistency can be
checked by string comparison against the emitted numbers.
"""

from __future__ import annotations

PALETTE = ("#4472c4", "#ed7d31", "#a5a5a5", "#70ad47", "#5b9bd5", "#264478")


def bar_chart_svg(title, group_labels, series, unit_line=None):
    """Build an SVG grouped bar chart.

    ``series`` maps a series name (e.g. a method) to one value per group.
    Returns the SVG document as a string; every bar carries its exact value
    in both its ``height`` attribute (scaled coordinate system) and a
    ``data-value`` attribute.
    """
    names = list(series)
    n_groups = len(group_labels)
    for name in names:
        if len(series[name]) != n_groups:
            raise ValueError(f"series {name!r} length != number of groups")
    vmax = max(
        (v for vals in series.values() for v in vals if v == v), default=1.0
    )
    vmax = max(vmax, 1e-12)
    plot_h, plot_w = 220.0, max(120.0, 90.0 * n_groups)
    bar_w = plot_w / max(1, n_groups) / (len(names) + 1)
    y_scale = plot_h / (1.1 * vmax)
    width, height = plot_w + 160, plot_h + 70
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<text x="10" y="18" font-size="14" font-family="sans-serif">{title}</text>',
    ]
    if unit_line is not None:
        y_pix = 30 + plot_h - unit_line * y_scale
        parts.append(
            f'<line x1="40" y1="{y_pix:.2f}" x2="{40 + plot_w:.2f}" y2="{y_pix:.2f}" '
            'stroke="#888" stroke-dasharray="4,3"/>'
        )
    for g, label in enumerate(group_labels):
        x0 = 40 + g * (plot_w / max(1, n_groups))
        parts.append(
            f'<text x="{x0:.2f}" y="{30 + plot_h + 16:.2f}" font-size="11" '
            f'font-family="sans-serif">{label}</text>'
        )
        for s, name in enumerate(names):
            value = series[name][g]
            x = x0 + s * bar_w
            # flipped+scaled group: the rect height attribute is the value
            parts.append(
                f'<g transform="translate({x:.2f},{30 + plot_h:.2f}) '
                f'scale({bar_w:.2f},-{y_scale!r})">'
                f'<rect x="0" y="0" width="0.9" height="{value!r}" '
                f'data-value="{value!r}" data-series="{name}" '
                f'fill="{PALETTE[s % len(PALETTE)]}"/></g>'
            )
    for s, name in enumerate(names):
        parts.append(
            f'<rect x="{50 + plot_w:.2f}" y="{30 + 16 * s}" width="10" height="10" '
            f'fill="{PALETTE[s % len(PALETTE)]}"/>'
            f'<text x="{64 + plot_w:.2f}" y="{39 + 16 * s}" font-size="11" '
            f'font-family="sans-serif">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def write_bar_chart(path, title, group_labels, series, unit_line=None):
    with open(path, "w") as fh:
        fh.write(bar_chart_svg(title, group_labels, series, unit_line=unit_line))
