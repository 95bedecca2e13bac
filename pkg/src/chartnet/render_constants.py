"""Frozen rendering constants.

Lengths are expressed in units of ``scale = max(1, resolution // 224)``
pixels so the layout is identical (up to scaling) at 224 and 448.
"""

RENDER_RESOLUTION = 448
BACKGROUND = (255, 255, 255)
INK = (0, 0, 0)

# bar charts
PLOT_LEFT = 24
PLOT_RIGHT_MARGIN = 4
PLOT_TOP = 8
PLOT_BOTTOM_MARGIN = 20
AXIS_WIDTH = 1
TICK_LENGTH = 2
TICK_LABEL_GAP = 1
BAR_GAP_PX = 2  # absolute pixels between neighbouring bars
LABEL_TOP_GAP = 3
LABEL_ROW_GAP = 2
Y_TICKS = (0.0, 0.25, 0.5, 0.75, 1.0)

# pie charts, fractions of the resolution unless noted
PIE_RADIUS = 0.28
PIE_LABEL_OFFSET = 4  # scale units beyond the rim
PIE_LABEL_MARGIN = 1  # scale units kept free around each label
