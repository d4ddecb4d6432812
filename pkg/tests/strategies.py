"""Shared hypothesis strategies."""
import numpy as np
from hypothesis import strategies as st

coord = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
extent = st.floats(0.5, 80, allow_nan=False, allow_infinity=False)


@st.composite
def boxes(draw):
    x, y = draw(coord), draw(coord)
    return np.array([x, y, x + draw(extent), y + draw(extent)])


@st.composite
def box_arrays(draw, min_size=0, max_size=20):
    n = draw(st.integers(min_size, max_size))
    return np.array([draw(boxes()) for _ in range(n)]).reshape(n, 4)
