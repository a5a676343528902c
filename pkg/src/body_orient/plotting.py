"""
Vector plots of boxes with orientation arrows drawn from each box center.

Screen convention is configurable: by default 0 degrees points up (-y) and
angles increase clockwise. Output is SVG with a fixed hash salt and no date
metadata, so identical input gives identical bytes.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .core.models import Box2D, ConfigError  # noqa: E402

logger = logging.getLogger(__name__)

# screen vectors (x right, y down) of the zero direction
ZERO_DIRECTIONS: Dict[str, Tuple[float, float]] = {
    "up": (0.0, -1.0),
    "right": (1.0, 0.0),
    "down": (0.0, 1.0),
    "left": (-1.0, 0.0),
}
BOX_COLOR = "#ff3b30"
ARROW_COLOR = "cyan"


@dataclass(frozen=True)
class Arrow:
    x: float
    y: float
    dx: float
    dy: float


def arrow_vector(degrees: float, zero_direction: str = "up",
                 clockwise: bool = True) -> Tuple[float, float]:
    """Unit screen vector (y down) of an orientation under the given convention."""
    if zero_direction not in ZERO_DIRECTIONS:
        raise ConfigError(f"zero_direction must be one of {sorted(ZERO_DIRECTIONS)}",
                          key="convention.zero_direction")
    x, y = ZERO_DIRECTIONS[zero_direction]
    theta = math.radians(degrees if clockwise else -degrees)
    # with y pointing down this rotation turns clockwise on screen
    return (x * math.cos(theta) - y * math.sin(theta), x * math.sin(theta) + y * math.cos(theta))


def arrows_for(items: Sequence, convention: Optional[Dict] = None) -> List[Arrow]:
    """One arrow per item with an orientation; length scales with the box."""
    convention = convention or {"zero_direction": "up", "clockwise": True}
    arrows = []
    for item in items:
        if item.orientation is None:
            continue
        box: Box2D = item.box
        dx, dy = arrow_vector(item.orientation, convention["zero_direction"],
                              bool(convention["clockwise"]))
        length = 0.25 * (box.w + box.h)
        arrows.append(Arrow(box.cx, box.cy, dx * length, dy * length))
    return arrows


def plot_instances(items: Sequence, width: float, height: float, path: Path,
                   convention: Optional[Dict] = None) -> int:
    """
    Draw boxes and orientation arrows of `items` (anything with `.box` and
    `.orientation`) on a width x height canvas and save as SVG.

    Returns the number of arrows drawn.
    """
    if not (width > 0 and height > 0):
        raise ValueError(f"canvas dims must be positive, got {width}x{height}")
    plt.rcParams["svg.hashsalt"] = "body-orient"
    fig = plt.figure(figsize=(width / 100.0, height / 100.0), dpi=100)
    try:
        ax = fig.add_axes((0, 0, 1, 1))
        ax.set_xlim(0, width)
        ax.set_ylim(height, 0)
        ax.set_aspect("equal")
        ax.axis("off")
        for item in items:
            x1, y1, _, _ = item.box.to_corners()
            ax.add_patch(Rectangle((x1, y1), item.box.w, item.box.h, fill=False,
                                   edgecolor=BOX_COLOR, linewidth=1.5))
        arrows = arrows_for(items, convention)
        for arrow in arrows:
            ax.annotate("", xy=(arrow.x + arrow.dx, arrow.y + arrow.dy), xytext=(arrow.x, arrow.y),
                        arrowprops={"arrowstyle": "->", "color": ARROW_COLOR, "lw": 2})
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    logger.debug(f"Plotted {len(items)} box(es), {len(arrows)} arrow(s) to {path}")
    return len(arrows)
