"""Procedural "integrated cell" images.

Each image has a membrane channel (filled cell body with a bright rim), a
nucleus channel and one structure channel whose support is a deterministic
function of the cell/nucleus geometry and the image's random stream.  Cells
are rendered directly in the canonical frame produced by :func:`align`:
cell major axis horizontal, nucleus centred, skew non-negative.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .preprocess import canonical_flips

SUPPORTED_SIZES = (32, 64, 128, 256)

# Display names in the order of the ten labelled structures of the hiPSC collection.
STRUCTURES = (
    "alpha-actinin",
    "alpha-tubulin",
    "beta-actin",
    "desmoplakin",
    "fibrillarin",
    "lamin B1",
    "myosin IIB",
    "Sec61 beta",
    "TOM20",
    "ZO1",
)
# Subset order when fewer than ten classes are requested.
PREFERRED = ("fibrillarin", "lamin B1", "alpha-tubulin", "beta-actin", "TOM20",
             "Sec61 beta", "ZO1", "desmoplakin", "alpha-actinin", "myosin IIB")
INSIDE_NUCLEUS = ("fibrillarin",)
NUCLEAR_BOUNDARY = ("lamin B1",)
QUANT = 255


@dataclass
class SyntheticCellSpec:
    n: int = 540
    n_classes: int = 4
    image_size: int = 64
    seed: int = 7
    structures: list | None = None
    noise: float = 0.05
    cell_semi_major: tuple = (0.30, 0.40)
    cell_semi_minor: tuple = (0.20, 0.27)
    nucleus_semi_major: tuple = (0.13, 0.17)
    nucleus_semi_minor: tuple = (0.10, 0.13)
    nucleus_offset: tuple = (0.07, 0.03)
    pixel_size_um: float = 0.317
    lamin_band: float = 0.78

    def structure_names(self) -> list[str]:
        if self.structures is not None:
            names = list(self.structures)
            if len(names) != self.n_classes:
                raise ConfigError("structures list length must equal n_classes")
        elif self.n_classes == len(STRUCTURES):
            names = list(STRUCTURES)
        else:
            names = list(PREFERRED[: self.n_classes])
        unknown = [s for s in names if s not in STRUCTURES]
        if unknown:
            raise ConfigError(f"unknown structures {unknown}")
        return names

    def validate(self) -> None:
        if self.image_size not in SUPPORTED_SIZES:
            raise ShapeError(f"image size {self.image_size} not in {SUPPORTED_SIZES}")
        if not 1 <= self.n_classes <= len(STRUCTURES):
            raise ConfigError(f"n_classes must be in 1..{len(STRUCTURES)}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        self.structure_names()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CellGeometry:
    cell_center: tuple
    cell_axes: tuple
    cell_shape: tuple
    nucleus_center: tuple
    nucleus_axes: tuple
    nucleus_angle: float
    flipped: tuple = (False, False)


def _grid(S):
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    return xx, yy


def cell_polar(geom: CellGeometry, xx, yy):
    """Normalized radius and angle relative to the (perturbed) cell outline."""
    cx, cy = geom.cell_center
    a, b = geom.cell_axes
    u = (xx - cx) / a
    v = (yy - cy) / b
    rho = np.hypot(u, v)
    th = np.arctan2(v, u)
    p1, p2 = geom.cell_shape
    outline = 1 + p1 * np.cos(th) + p2 * np.cos(2 * th)
    return rho / outline, th


def nucleus_radius(geom: CellGeometry, xx, yy):
    cx, cy = geom.nucleus_center
    a, b = geom.nucleus_axes
    c, s = math.cos(geom.nucleus_angle), math.sin(geom.nucleus_angle)
    dx, dy = xx - cx, yy - cy
    u = (c * dx + s * dy) / a
    v = (-s * dx + c * dy) / b
    return np.hypot(u, v)


def sample_geometry(spec: SyntheticCellSpec, rng: np.random.Generator) -> CellGeometry:
    S = spec.image_size
    c = (S - 1) / 2
    for _ in range(1000):
        a = rng.uniform(*spec.cell_semi_major) * S
        b = rng.uniform(*spec.cell_semi_minor) * S
        shape = (rng.uniform(-0.08, 0.08), rng.uniform(-0.05, 0.05))
        ox = rng.uniform(-1, 1) * spec.nucleus_offset[0] * S
        # half-pixel vertical offsets keep the outline mirror-symmetric on the grid,
        # so the major axis is exactly horizontal
        oy = round(2 * rng.uniform(-1, 1) * spec.nucleus_offset[1] * S) / 2
        na = rng.uniform(*spec.nucleus_semi_major) * S
        nb = rng.uniform(*spec.nucleus_semi_minor) * S
        nang = rng.uniform(-0.5, 0.5)
        geom = CellGeometry((c - ox, c - oy), (a, b), shape, (c, c), (na, nb), nang)
        xx, yy = _grid(S)
        t, _ = cell_polar(geom, xx, yy)
        cell = t <= 1
        border = np.zeros_like(cell)
        border[:2, :] = border[-2:, :] = border[:, :2] = border[:, -2:] = True
        if (cell & border).any():
            continue
        # nucleus plus a 2 px margin must sit inside the cell
        margin = nucleus_radius(geom, xx, yy) <= 1 + 2.0 / min(na, nb)
        if (margin & ~cell).any():
            continue
        return geom
    raise ConfigError("could not place a nucleus inside the cell; check geometry ranges")


def _blob(xx, yy, x0, y0, sigma):
    return np.exp(-((xx - x0) ** 2 + (yy - y0) ** 2) / (2 * sigma**2))


def _segment(xx, yy, p, q, width):
    px, py = p
    qx, qy = q
    dx, dy = qx - px, qy - py
    L2 = dx * dx + dy * dy + 1e-12
    t = np.clip(((xx - px) * dx + (yy - py) * dy) / L2, 0, 1)
    d2 = (xx - px - t * dx) ** 2 + (yy - py - t * dy) ** 2
    return np.exp(-d2 / (2 * width**2))


def _point_in(mask, rng, xx, yy):
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return float(xx.mean()), float(yy.mean())
    i = rng.integers(len(xs))
    return float(xs[i] + rng.uniform(-0.5, 0.5)), float(ys[i] + rng.uniform(-0.5, 0.5))


def render_structure(name, geom, masks, rng, S) -> np.ndarray:
    xx, yy = _grid(S)
    t, th = masks["cell_t"], masks["cell_theta"]
    nr = masks["nucleus_r"]
    cell, nuc = masks["cell"], masks["nucleus"]
    cyto = cell & ~nuc
    k = S / 64
    out = np.zeros((S, S))

    if name == "fibrillarin":
        inner = nr <= 0.6
        for _ in range(rng.integers(1, 4)):
            x0, y0 = _point_in(inner, rng, xx, yy)
            out = np.maximum(out, _blob(xx, yy, x0, y0, rng.uniform(1.4, 2.4) * k))
        out *= nuc
    elif name == "lamin B1":
        band = nuc & (nr >= masks["lamin_band"])
        out = band * (0.8 + 0.2 * np.cos(3 * np.arctan2(yy - geom.nucleus_center[1],
                                                         xx - geom.nucleus_center[0])) ** 2)
    elif name == "alpha-tubulin":
        mx, my = _point_in(cyto & (nr <= 1.5), rng, xx, yy)
        for _ in range(rng.integers(6, 11)):
            ang = rng.uniform(0, 2 * math.pi)
            end = (mx + 2 * S * math.cos(ang), my + 2 * S * math.sin(ang))
            out = np.maximum(out, _segment(xx, yy, (mx, my), end, 0.7 * k))
        out *= cyto
    elif name == "beta-actin":
        out = np.where(t >= 0.82, 1.0, 0.2) * cell
    elif name == "TOM20":
        for _ in range(rng.integers(15, 30)):
            x0, y0 = _point_in(cyto, rng, xx, yy)
            out = np.maximum(out, _blob(xx, yy, x0, y0, 0.9 * k))
        out *= cyto
    elif name == "Sec61 beta":
        d = np.clip(nr - 1, 0, None) * min(geom.nucleus_axes)
        out = np.exp(-d / (3.0 * k)) * cyto
    elif name == "desmoplakin":
        rim = cell & (t >= 0.88)
        for _ in range(rng.integers(4, 9)):
            x0, y0 = _point_in(rim, rng, xx, yy)
            out = np.maximum(out, _blob(xx, yy, x0, y0, 1.1 * k))
        out *= cell
    elif name == "ZO1":
        out = (cell & (t >= 0.85) & (np.sin(th) < -0.3)).astype(float)
    elif name == "alpha-actinin":
        for _ in range(rng.integers(5, 11)):
            x0, y0 = _point_in(cyto, rng, xx, yy)
            ang = rng.uniform(0, math.pi)
            L = rng.uniform(3, 7) * k
            p = (x0 - L * math.cos(ang), y0 - L * math.sin(ang))
            q = (x0 + L * math.cos(ang), y0 + L * math.sin(ang))
            out = np.maximum(out, _segment(xx, yy, p, q, 0.7 * k))
        out *= cyto
    elif name == "myosin IIB":
        for _ in range(rng.integers(3, 7)):
            y0 = rng.uniform(geom.cell_center[1] - 0.8 * geom.cell_axes[1],
                             geom.cell_center[1] + 0.8 * geom.cell_axes[1])
            slope = rng.uniform(-0.15, 0.15)
            p = (0.0, y0 - slope * S / 2)
            q = (S - 1.0, y0 + slope * S / 2)
            out = np.maximum(out, _segment(xx, yy, p, q, 0.8 * k))
        out *= cell
    else:
        raise ConfigError(f"no archetype for {name!r}")
    return out


def _texture(rng, shape, amount):
    return 1 + amount * rng.standard_normal(shape)


def _normalize(ch, support):
    ch = np.clip(ch, 0, None) * support
    m = ch.max()
    if m <= 0:
        return ch
    q = np.round(ch / m * QUANT) / QUANT
    return q


def render_cell(spec: SyntheticCellSpec, geom: CellGeometry, structure: str,
                rng: np.random.Generator) -> tuple[np.ndarray, dict]:
    """Render one (3, S, S) image in [0, 1] and the masks it was built from."""
    S = spec.image_size
    xx, yy = _grid(S)
    t, th = cell_polar(geom, xx, yy)
    nr = nucleus_radius(geom, xx, yy)
    cell = t <= 1
    nuc = nr <= 1
    masks = {"cell": cell, "nucleus": nuc, "cell_t": t, "cell_theta": th,
             "nucleus_r": nr, "lamin_band": spec.lamin_band}

    membrane = (0.35 + 0.65 * np.clip(t, 0, 1) ** 6) * _texture(rng, (S, S), spec.noise)
    dna = (0.55 + 0.45 * np.sqrt(np.clip(1 - nr**2, 0, 1))) * _texture(rng, (S, S), spec.noise)
    struct = render_structure(structure, geom, masks, rng, S)
    struct = struct * _texture(rng, (S, S), spec.noise)

    img = np.stack([
        _normalize(membrane, cell),
        _normalize(dna, nuc),
        _normalize(struct, cell & (struct > 0)),
    ])
    return img, masks


def generate_corpus(spec: SyntheticCellSpec):
    """Render ``spec.n`` labelled cells.

    Returns ``(images, records)``: a float32 array (n, 3, S, S) in [0, 1] and
    one manifest record per image.  Output depends only on ``spec``.
    """
    spec.validate()
    names = spec.structure_names()
    K = spec.n_classes
    label_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    labels = np.arange(spec.n) % K + 1
    labels = label_rng.permutation(labels)

    images = np.zeros((spec.n, 3, spec.image_size, spec.image_size), dtype=np.float32)
    records = []
    for i in range(spec.n):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, i]))
        geom = sample_geometry(spec, rng)
        y = int(labels[i])
        img, masks = render_cell(spec, geom, names[y - 1], rng)
        flip_x, flip_y = canonical_flips(masks["cell"])
        if flip_x:
            img = img[:, :, ::-1]
        if flip_y:
            img = img[:, ::-1, :]
        geom.flipped = (bool(flip_x), bool(flip_y))
        images[i] = img
        records.append({
            "id": f"cell_{i:05d}",
            "label": y,
            "structure": names[y - 1],
            "split": None,
            "path": None,
            "geometry": _geometry_record(geom),
        })
    return images, records


def _geometry_record(geom: CellGeometry) -> dict:
    d = asdict(geom)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def masks_from_image(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cell and nucleus masks recovered by thresholding the reference channels at 0."""
    return img[0] > 0, img[1] > 0
