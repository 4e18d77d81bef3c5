import re

import numpy as np

from occnav.grid import GridMeta, TraversabilityMap
from occnav.render import PX_PER_M, render_svg
from occnav.vo import ObstacleState


def test_structure_and_coordinates():
    cells = np.zeros((40, 60), np.uint8)
    cells[10, 5:9] = 1
    t = TraversabilityMap(GridMeta(60, 40, origin=(-1.0, 2.0)), cells)
    svg = render_svg(t, [[0.0, 2.0], [1.0, 3.0]], (0.0, 2.0), (1.0, 3.0), [ObstacleState((0.5, 2.5), (0, 0), 0.3)])
    assert svg.startswith("<?xml") and svg.rstrip().endswith("</svg>")
    assert 'width="60.0"' in svg and 'height="40.0"' in svg
    # one run of four cells becomes one rect
    rects = re.findall(r'<rect x="([\d.]+)" y="([\d.]+)" width="([\d.]+)"', svg)
    assert rects == [("5.0", "10.0", "4.0")]
    assert 'points="20.0,0.0 40.0,20.0"' in svg
    assert 'id="start" cx="20.0" cy="0.0"' in svg
    assert f'r="{0.3 * PX_PER_M}"' in svg


def test_map_only():
    t = TraversabilityMap(GridMeta(4, 4), np.zeros((4, 4), np.uint8))
    svg = render_svg(t)
    assert "polyline" not in svg and 'id="goal"' not in svg
