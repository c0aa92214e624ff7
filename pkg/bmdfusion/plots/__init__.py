from bmdfusion.plots.svg import (
    bar_svg,
    curve_band_svg,
    grouped_bar_svg,
    line_svg,
    scatter_identity_svg,
    write_svg,
)

__all__ = ["bar_svg", "curve_band_svg", "grouped_bar_svg", "line_svg", "scatter_identity_svg", "write_svg"]
