"""Independent geometric oracles shared by the preprocessing tests."""

import math

import numpy as np


def ellipse_image(S=64, angle_deg=30.0, a=22.0, b=10.0, left_a=None, nucleus=(0.0, 0.0)):
    """Two-channel cell: membrane ellipse rotated by ``angle_deg`` (x towards +row),
    nucleus disk at ``nucleus`` offset along the major axis.  ``left_a`` makes the
    cell egg-shaped so its skew is defined."""
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    c = (S - 1) / 2
    th = math.radians(angle_deg)
    u = (xx - c) * math.cos(th) + (yy - c) * math.sin(th)
    v = -(xx - c) * math.sin(th) + (yy - c) * math.cos(th)
    semi = np.where(u < 0, left_a if left_a is not None else a, a)
    cell = (u / semi) ** 2 + (v / b) ** 2 <= 1
    nu, nv = nucleus
    nuc = (u - nu) ** 2 + (v - nv) ** 2 <= 5.0**2
    return np.stack([cell * 0.8, nuc * 0.9]).astype(np.float64)


def moment_angle_deg(mask):
    # independent oracle: eigenvector of the 2x2 covariance of mask coordinates
    ys, xs = np.nonzero(mask)
    cov = np.cov(np.stack([xs, ys]).astype(np.float64), bias=True)
    w, vecs = np.linalg.eigh(cov)
    vx, vy = vecs[:, np.argmax(w)]
    ang = math.degrees(math.atan2(vy, vx))
    return (ang + 90) % 180 - 90
