"""Procedural garment renders: flat catalog layouts and dressed-person views.

Everything is a pure function of the structured spec: the same
(spec, pose, occlusion) always rasterizes to bit-identical images.  Geometry
is exposed as analytic shapes evaluated at pixel centers so tests can
re-count pixels with an independent rasterizer.

Images are float32 (H, W, 3) in [0, 1]; masks are float32 (H, W) in {0, 1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CATEGORIES = ("upper", "lower", "dress")
SILHOUETTES = {
    "upper": ("tshirt", "longsleeve", "tank"),
    "lower": ("pants", "shorts", "skirt"),
    "dress": ("a-line", "shift"),
}
PATTERNS = ("solid", "stripes", "dots", "blocks")
SLEEVES = ("sleeveless", "short", "long")
HEMS = ("straight", "curved", "flared")

# fixed scene colors, on the 8-bit grid so PNG round-trips are lossless
FLAT_BACKGROUND = (1.0, 1.0, 1.0)
SCENE_BACKGROUND = (180 / 255, 200 / 255, 220 / 255)
SKIN = (224 / 255, 172 / 255, 140 / 255)
HAIR = (60 / 255, 40 / 255, 30 / 255)

# masked-out fill: mid-gray by contract; the 8-bit variant is what a PNG
# round trip of 0.5 quantizes to, used when pairs must survive disk exactly
MASK_FILL = 0.5
MASK_FILL_8BIT = 128 / 255


@dataclass(frozen=True)
class GarmentSpec:
    """Structured attribute record all renders and prompts derive from."""

    category: str
    silhouette: str
    base_color: tuple
    pattern: str
    pattern_color: tuple
    sleeve: str
    hem: str
    pattern_period: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if self.silhouette not in SILHOUETTES[self.category]:
            raise ValueError(
                f"silhouette {self.silhouette!r} invalid for category {self.category!r}"
            )
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.sleeve not in SLEEVES:
            raise ValueError(f"unknown sleeve {self.sleeve!r}")
        if self.hem not in HEMS:
            raise ValueError(f"unknown hem {self.hem!r}")
        if self.pattern_period < 2 or self.pattern_period % 2:
            raise ValueError("pattern_period must be an even integer >= 2")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "silhouette": self.silhouette,
            "base_color": list(self.base_color),
            "pattern": self.pattern,
            "pattern_color": list(self.pattern_color),
            "sleeve": self.sleeve,
            "hem": self.hem,
            "pattern_period": self.pattern_period,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GarmentSpec":
        return cls(
            category=d["category"],
            silhouette=d["silhouette"],
            base_color=tuple(d["base_color"]),
            pattern=d["pattern"],
            pattern_color=tuple(d["pattern_color"]),
            sleeve=d["sleeve"],
            hem=d["hem"],
            pattern_period=int(d.get("pattern_period", 4)),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class PoseParams:
    """Deformation of the worn garment: lateral shear plus a sine bow."""

    shear: float = 0.0
    curve: float = 0.0
    shift_x: float = 0.0


def sample_spec(seed: int) -> GarmentSpec:
    rng = np.random.default_rng(seed)
    category = CATEGORIES[rng.integers(len(CATEGORIES))]
    silhouette = SILHOUETTES[category][rng.integers(len(SILHOUETTES[category]))]
    base = tuple(int(v) / 255 for v in rng.integers(20, 236, 3))
    pattern = PATTERNS[rng.integers(len(PATTERNS))]
    pattern_color = tuple(int(v) / 255 for v in rng.integers(20, 236, 3))
    if pattern_color == base:
        pattern_color = tuple(min(1.0, c + 40 / 255) for c in base)
    if category == "lower":
        sleeve = "sleeveless"
    elif silhouette == "tank":
        sleeve = "sleeveless"
    elif silhouette == "longsleeve":
        sleeve = "long"
    else:
        sleeve = SLEEVES[rng.integers(1, len(SLEEVES))]
    hem = HEMS[rng.integers(len(HEMS))]
    period = int(rng.choice([4, 6, 8]))
    return GarmentSpec(category, silhouette, base, pattern, pattern_color,
                       sleeve, hem, period, seed)


def sample_pose(seed: int) -> PoseParams:
    rng = np.random.default_rng(seed + 7919)
    return PoseParams(
        shear=float(rng.uniform(-0.12, 0.12)),
        curve=float(rng.uniform(0.0, 0.05)),
        shift_x=float(rng.uniform(-0.04, 0.04)),
    )


# ---------------------------------------------------------------------------
# analytic shapes (coordinates in pixels; contains() accepts scalars or grids)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x, y):
        return (x >= self.x0) & (x < self.x1) & (y >= self.y0) & (y < self.y1)


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    rx: float
    ry: float

    def contains(self, x, y):
        return ((x - self.cx) / self.rx) ** 2 + ((y - self.cy) / self.ry) ** 2 <= 1.0


@dataclass(frozen=True)
class Trapezoid:
    y0: float
    y1: float
    top_x0: float
    top_x1: float
    bot_x0: float
    bot_x1: float

    def contains(self, x, y):
        s = (y - self.y0) / (self.y1 - self.y0)
        left = self.top_x0 + s * (self.bot_x0 - self.top_x0)
        right = self.top_x1 + s * (self.bot_x1 - self.top_x1)
        return (y >= self.y0) & (y < self.y1) & (x >= left) & (x < right)


@dataclass(frozen=True)
class Deformed:
    """Wraps a shape with the pose warp x -> x - shear*(y-cy) - bow(y)."""

    base: object
    shear: float
    curve_amp: float
    y_center: float
    y_span: float

    def _dx(self, y):
        bow = np.sin(np.pi * (y - (self.y_center - self.y_span / 2)) / self.y_span)
        return self.shear * (y - self.y_center) + self.curve_amp * bow

    def contains(self, x, y):
        return self.base.contains(x - self._dx(y), y)


def rasterize(shapes, size: int) -> np.ndarray:
    """Boolean (size, size) union mask of shapes sampled at pixel centers."""
    ys, xs = np.mgrid[0:size, 0:size]
    xs = xs + 0.5
    ys = ys + 0.5
    out = np.zeros((size, size), dtype=bool)
    for shape in shapes:
        out |= shape.contains(xs, ys)
    return out


# ---------------------------------------------------------------------------
# garment geometry
# ---------------------------------------------------------------------------

def flat_garment_shapes(spec: GarmentSpec, size: int) -> list:
    """Axis-aligned garment silhouette in catalog position, in pixel units."""
    s = float(size)
    shapes = []

    def hem_shapes(x0, x1, y_bottom):
        if spec.hem == "curved":
            return [Ellipse((x0 + x1) / 2, y_bottom, (x1 - x0) / 2, 0.06 * s)]
        if spec.hem == "flared":
            return [Trapezoid(y_bottom - 0.08 * s, y_bottom + 0.04 * s,
                              x0, x1, x0 - 0.05 * s, x1 + 0.05 * s)]
        return []

    if spec.category == "upper":
        body_w = (0.35, 0.65) if spec.silhouette == "tank" else (0.30, 0.70)
        x0, x1 = body_w[0] * s, body_w[1] * s
        y0, y1 = 0.25 * s, 0.70 * s
        shapes.append(Rect(x0, y0, x1, y1))
        shapes += hem_shapes(x0, x1, y1)
        shapes += _sleeve_shapes(spec.sleeve, x0, x1, y0, s)
    elif spec.category == "lower":
        if spec.silhouette == "skirt":
            shapes.append(Trapezoid(0.25 * s, 0.75 * s,
                                    0.35 * s, 0.65 * s, 0.25 * s, 0.75 * s))
            shapes += hem_shapes(0.25 * s, 0.75 * s, 0.75 * s)
        else:
            leg_y1 = (0.80 if spec.silhouette == "pants" else 0.50) * s
            shapes.append(Rect(0.32 * s, 0.20 * s, 0.68 * s, 0.32 * s))
            shapes.append(Rect(0.32 * s, 0.30 * s, 0.48 * s, leg_y1))
            shapes.append(Rect(0.52 * s, 0.30 * s, 0.68 * s, leg_y1))
            shapes += hem_shapes(0.32 * s, 0.68 * s, leg_y1)
    else:  # dress
        shapes.append(Rect(0.35 * s, 0.18 * s, 0.65 * s, 0.45 * s))
        if spec.silhouette == "a-line":
            shapes.append(Trapezoid(0.40 * s, 0.85 * s,
                                    0.35 * s, 0.65 * s, 0.22 * s, 0.78 * s))
            shapes += hem_shapes(0.22 * s, 0.78 * s, 0.85 * s)
        else:  # shift
            shapes.append(Rect(0.32 * s, 0.40 * s, 0.68 * s, 0.82 * s))
            shapes += hem_shapes(0.32 * s, 0.68 * s, 0.82 * s)
        shapes += _sleeve_shapes(spec.sleeve, 0.35 * s, 0.65 * s, 0.18 * s, s)
    return shapes


def _sleeve_shapes(sleeve: str, x0, x1, y0, s) -> list:
    if sleeve == "sleeveless":
        return []
    length = 0.17 * s if sleeve == "short" else 0.41 * s
    w = 0.14 * s
    return [Rect(x0 - w, y0, x0, y0 + length), Rect(x1, y0, x1 + w, y0 + length)]


def pattern_image(spec: GarmentSpec, size: int) -> np.ndarray:
    """Pattern colors over the full canvas, indexed by global pixel coords."""
    base = np.array(spec.base_color, dtype=np.float32)
    alt = np.array(spec.pattern_color, dtype=np.float32)
    img = np.empty((size, size, 3), dtype=np.float32)
    img[:] = base
    if spec.pattern == "solid":
        return img
    ys, xs = np.mgrid[0:size, 0:size]
    half = spec.pattern_period // 2
    if spec.pattern == "stripes":
        sel = (ys // half) % 2 == 1
    elif spec.pattern == "blocks":
        cell = spec.pattern_period
        sel = ((xs // cell) + (ys // cell)) % 2 == 1
    else:  # dots on a square lattice, spacing = 2 * period
        cell = 2 * spec.pattern_period
        cx = (xs // cell) * cell + cell / 2
        cy = (ys // cell) * cell + cell / 2
        r = spec.pattern_period / 2
        sel = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= r**2
    img[sel] = alt
    return img


# ---------------------------------------------------------------------------
# renders
# ---------------------------------------------------------------------------

def render_flat(spec: GarmentSpec, size: int = 64) -> np.ndarray:
    """Catalog flat-lay: garment axis-aligned and centered on pure white."""
    img = np.empty((size, size, 3), dtype=np.float32)
    img[:] = np.array(FLAT_BACKGROUND, dtype=np.float32)
    mask = rasterize(flat_garment_shapes(spec, size), size)
    img[mask] = pattern_image(spec, size)[mask]
    return img


def dressed_geometry(spec: GarmentSpec, pose: PoseParams, occlusion_level: float,
                     size: int):
    """Analytic scene geometry: (body, garment, occluder) shape lists."""
    if not 0.0 <= occlusion_level <= 1.0:
        raise ValueError("occlusion_level must be in [0, 1]")
    s = float(size)
    body = [
        Ellipse(0.5 * s, 0.12 * s, 0.09 * s, 0.10 * s),          # head
        Rect(0.47 * s, 0.20 * s, 0.53 * s, 0.26 * s),            # neck
        Ellipse(0.5 * s, 0.52 * s, 0.22 * s, 0.34 * s),          # torso
        Rect(0.38 * s, 0.70 * s, 0.47 * s, 0.98 * s),            # legs
        Rect(0.53 * s, 0.70 * s, 0.62 * s, 0.98 * s),
    ]

    y_center = 0.5 * s
    garment = [
        Deformed(shape, pose.shear, pose.curve * s, y_center, s)
        for shape in _shifted(flat_garment_shapes(spec, size), pose.shift_x * s)
    ]

    occluders = []
    if occlusion_level > 0.0:
        rng = np.random.default_rng(spec.seed + 104729)
        # first occluder always crosses the garment so occlusion bites
        occluders.append(Ellipse(0.5 * s + float(rng.uniform(-0.05, 0.05)) * s,
                                 0.45 * s,
                                 (0.05 + 0.10 * occlusion_level) * s,
                                 (0.10 + 0.18 * occlusion_level) * s))
        budget = [
            Ellipse(0.30 * s, 0.50 * s, 0.06 * s, 0.22 * s),     # left arm
            Ellipse(0.70 * s, 0.50 * s, 0.06 * s, 0.22 * s),     # right arm
            Ellipse(0.5 * s, 0.24 * s, 0.14 * s, 0.10 * s),      # hair fall
        ]
        n_extra = int(round(occlusion_level * len(budget)))
        occluders += budget[:n_extra]
    return body, garment, occluders


def _shifted(shapes, dx):
    out = []
    for sh in shapes:
        if isinstance(sh, Rect):
            out.append(Rect(sh.x0 + dx, sh.y0, sh.x1 + dx, sh.y1))
        elif isinstance(sh, Ellipse):
            out.append(Ellipse(sh.cx + dx, sh.cy, sh.rx, sh.ry))
        elif isinstance(sh, Trapezoid):
            out.append(Trapezoid(sh.y0, sh.y1, sh.top_x0 + dx, sh.top_x1 + dx,
                                 sh.bot_x0 + dx, sh.bot_x1 + dx))
        else:
            out.append(sh)
    return out


def render_dressed(spec: GarmentSpec, pose: PoseParams,
                   occlusion_level: float, size: int = 64):
    """Dressed-person view plus the visible-garment mask.

    The garment is drawn deformed by the pose, then occluders (arm/hair
    primitives) are painted over it; the mask marks garment pixels that
    remain visible.
    """
    body, garment, occluders = dressed_geometry(spec, pose, occlusion_level, size)
    img = np.empty((size, size, 3), dtype=np.float32)
    img[:] = np.array(SCENE_BACKGROUND, dtype=np.float32)

    body_mask = rasterize(body, size)
    img[body_mask] = np.array(SKIN, dtype=np.float32)
    # hair cap on the head
    hair = rasterize([Ellipse(0.5 * size, 0.07 * size, 0.09 * size, 0.06 * size)], size)
    img[hair] = np.array(HAIR, dtype=np.float32)

    garment_mask = rasterize(garment, size)
    img[garment_mask] = pattern_image(spec, size)[garment_mask]

    occ_mask = rasterize(occluders, size) if occluders else np.zeros((size, size), bool)
    img[occ_mask] = np.array(SKIN, dtype=np.float32)

    visible = garment_mask & ~occ_mask
    return img, visible.astype(np.float32)


def warp_garment(x_m: np.ndarray, m_c: np.ndarray, fill: float = MASK_FILL) -> np.ndarray:
    """Keep garment pixels of the person image, fill the rest with mid-gray."""
    if x_m.shape[:2] != m_c.shape[:2]:
        raise ValueError(f"shape mismatch: image {x_m.shape} vs mask {m_c.shape}")
    m = m_c if m_c.ndim == 3 else m_c[:, :, None]
    return np.where(m > 0.5, x_m, np.float32(fill)).astype(np.float32)


# ---------------------------------------------------------------------------
# prompt templates
# ---------------------------------------------------------------------------

RECONSTRUCT_KEYWORD = "Reconstruct"
MODEL_KEYWORD = "A model is wearing"
FLAT_TEMPLATE = "A flat-lay {category}"


def make_prompts(spec: GarmentSpec):
    """The three prompt strings: reconstruction, model-centric, flat-lay."""
    t_c = (
        f"{RECONSTRUCT_KEYWORD} {spec.category} garment {spec.silhouette} "
        f"silhouette {spec.pattern} pattern {spec.sleeve} sleeve {spec.hem} hem"
    )
    t_m = MODEL_KEYWORD + t_c[len(RECONSTRUCT_KEYWORD):]
    t_flat = FLAT_TEMPLATE.format(category=spec.category)
    return t_c, t_m, t_flat


def flat_prefixed_prompt(t_c: str, spec: GarmentSpec) -> str:
    """Prompt-level fallback used when structure attention is removed."""
    return FLAT_TEMPLATE.format(category=spec.category) + ", " + t_c


def parse_prompt(t_c: str):
    """Recover (category, pattern) from a reconstruction prompt."""
    tokens = t_c.split()
    category = next((t for t in tokens if t in CATEGORIES), None)
    pattern = next((t for t in tokens if t in PATTERNS), None)
    if category is None or pattern is None:
        raise ValueError(f"prompt does not name a category and pattern: {t_c!r}")
    return category, pattern
