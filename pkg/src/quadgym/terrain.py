"""Procedural terrain: tile generation, arena tiling, and height queries.

Heightfields are cell-centered grids: ``heights[i, j]`` is the surface height
at ``origin + ((i + 0.5) * res, (j + 0.5) * res)``. Tiles are generated from a
counter-based (Philox) generator so identical (kind, level, seed, resolution)
reproduce bit-identical grids on any platform.

Terrain families:
    smooth_slope      planar incline, gradient tan(angle) along +x
    rough_slope       incline plus per-cell uniform bumps
    stairs_up         risers ascending along +x, fixed 0.3 m tread
    stairs_down       the stairs_up tile mirrored in x (descends to zero)
    random_obstacles  flat base with axis-aligned blocks (max-composed)
    wavy              three superposed sinusoids along x  (evaluation only)
    flat              all zeros                           (evaluation only)
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .config import TerrainConfig

# Robot-centric height scan: 21 samples along body-forward x, 11 along
# body-left y, 0.1 m spacing, centered on the base. 231 values total.
SCAN_NX = 21
SCAN_NY = 11
SCAN_SPACING = 0.1

# Queries this close to a grid line (in cells) collapse onto it, so that a
# query at a cell center returns the stored height exactly even when the
# caller's coordinate arithmetic picked up rounding noise.
_SNAP_EPS = 1e-9


class TerrainKind(enum.Enum):
    SMOOTH_SLOPE = "smooth_slope"
    ROUGH_SLOPE = "rough_slope"
    STAIRS_UP = "stairs_up"
    STAIRS_DOWN = "stairs_down"
    RANDOM_OBSTACLES = "random_obstacles"
    WAVY = "wavy"
    FLAT = "flat"

    @classmethod
    def parse(cls, value: Union["TerrainKind", str]) -> "TerrainKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for kind in cls:
            if key == kind.value:
                return kind
        raise ValueError(f"unknown terrain kind {value!r}")


TRAINING_KINDS: Tuple[TerrainKind, ...] = (
    TerrainKind.SMOOTH_SLOPE,
    TerrainKind.ROUGH_SLOPE,
    TerrainKind.STAIRS_UP,
    TerrainKind.STAIRS_DOWN,
    TerrainKind.RANDOM_OBSTACLES,
)
EVALUATION_ONLY_KINDS: Tuple[TerrainKind, ...] = (TerrainKind.WAVY, TerrainKind.FLAT)


@dataclass(frozen=True)
class Heightfield:
    """One terrain tile; immutable after construction."""

    resolution: float
    heights: np.ndarray
    kind: TerrainKind
    level: int
    seed: int
    friction: float = 1.0

    def __post_init__(self):
        arr = np.array(self.heights, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
            raise ValueError(f"heights must be at least 2x2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("heights contain non-finite values")
        if self.resolution <= 0.0:
            raise ValueError("resolution must be positive")
        if self.friction <= 0.0:
            raise ValueError("friction must be positive")
        arr.setflags(write=False)
        object.__setattr__(self, "heights", arr)
        object.__setattr__(self, "kind", TerrainKind.parse(self.kind))

    @property
    def nx(self) -> int:
        return self.heights.shape[0]

    @property
    def ny(self) -> int:
        return self.heights.shape[1]


@dataclass(frozen=True)
class Arena:
    """A rows x cols grid of tiles stitched into one global heightfield.

    Row index advances along world +x, column index along world +y. Border
    cells of adjacent tiles are averaged so seams carry no generation
    artifacts; any remaining cliffs are intrinsic to the tiles themselves.
    """

    tiles: Tuple[Tuple[Heightfield, ...], ...]
    tile_size: float
    origin: Tuple[float, float] = (0.0, 0.0)
    heights: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rows = tuple(tuple(row) for row in self.tiles)
        if not rows or not rows[0]:
            raise ValueError("arena layout must be non-empty")
        first = rows[0][0]
        for row in rows:
            if len(row) != len(rows[0]):
                raise ValueError("ragged arena layout")
            for tile in row:
                if tile.resolution != first.resolution:
                    raise ValueError("mixed tile resolutions")
                if tile.heights.shape != first.heights.shape:
                    raise ValueError("mixed tile grid sizes")
        object.__setattr__(self, "tiles", rows)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

        grid = np.concatenate(
            [np.concatenate([t.heights for t in row], axis=1) for row in rows], axis=0
        )
        nx, ny = first.heights.shape
        for r in range(1, len(rows)):
            seam = 0.5 * (grid[r * nx - 1, :] + grid[r * nx, :])
            grid[r * nx - 1, :] = seam
            grid[r * nx, :] = seam
        for c in range(1, len(rows[0])):
            seam = 0.5 * (grid[:, c * ny - 1] + grid[:, c * ny])
            grid[:, c * ny - 1] = seam
            grid[:, c * ny] = seam
        grid.setflags(write=False)
        object.__setattr__(self, "heights", grid)

    @property
    def rows(self) -> int:
        return len(self.tiles)

    @property
    def cols(self) -> int:
        return len(self.tiles[0])

    @property
    def resolution(self) -> float:
        return self.tiles[0][0].resolution

    @property
    def extent(self) -> Tuple[float, float]:
        return (self.rows * self.tile_size, self.cols * self.tile_size)

    def tile_center(self, row: int, col: int) -> Tuple[float, float]:
        return (
            self.origin[0] + (row + 0.5) * self.tile_size,
            self.origin[1] + (col + 0.5) * self.tile_size,
        )


def _interp(level: int, lo: float, hi: float, max_level: int) -> float:
    if level == 1:
        return lo
    if level == max_level:
        return hi
    return lo + (level - 1) / (max_level - 1) * (hi - lo)


def level_params(
    kind: Union[TerrainKind, str], level: int, cfg: Optional[TerrainConfig] = None
) -> dict:
    """Difficulty-level parameters; ranged values interpolate linearly in level."""
    cfg = cfg if cfg is not None else TerrainConfig()
    kind = TerrainKind.parse(kind)
    if not 1 <= level <= cfg.max_level:
        raise ValueError(f"level must be in [1, {cfg.max_level}], got {level}")
    if kind is TerrainKind.SMOOTH_SLOPE:
        return {"slope": _interp(level, *cfg.slope_range, cfg.max_level)}
    if kind is TerrainKind.ROUGH_SLOPE:
        scale = level / cfg.max_level
        return {
            "slope": _interp(level, *cfg.slope_range, cfg.max_level),
            "noise_lo": cfg.rough_noise_band[0] * scale,
            "noise_hi": cfg.rough_noise_band[1] * scale,
        }
    if kind in (TerrainKind.STAIRS_UP, TerrainKind.STAIRS_DOWN):
        return {
            "riser": _interp(level, *cfg.stair_riser_range, cfg.max_level),
            "tread": cfg.stair_tread,
        }
    if kind is TerrainKind.RANDOM_OBSTACLES:
        return {
            "height_lo": cfg.obstacle_height_range[0],
            "height_hi": _interp(level, *cfg.obstacle_height_range, cfg.max_level),
            "side_lo": cfg.obstacle_side_range[0],
            "side_hi": cfg.obstacle_side_range[1],
            "count": cfg.obstacles_per_tile,
        }
    if kind is TerrainKind.WAVY:
        return {"amplitude": cfg.wavy_amplitude, "num_waves": cfg.wavy_num_waves}
    return {}  # flat


def _stair_profile(n: int, riser: float, tread: float, res: float) -> np.ndarray:
    tread_cells = int(math.ceil(tread / res - 1e-12))
    n_steps = (n + tread_cells - 1) // tread_cells
    # Single rounding per plateau: each height is the correctly rounded
    # value of the exact product k * riser.
    step_heights = np.arange(n_steps, dtype=np.float64) * riser
    return step_heights[np.arange(n) // tread_cells]


def generate_tile(
    kind: Union[TerrainKind, str],
    level: int,
    seed: int,
    resolution: Optional[float] = None,
    cfg: Optional[TerrainConfig] = None,
) -> Heightfield:
    """Generate one tile. Pure function of (kind, level, seed, resolution)."""
    cfg = cfg if cfg is not None else TerrainConfig()
    kind = TerrainKind.parse(kind)
    res = cfg.resolution if resolution is None else resolution
    params = level_params(kind, level, cfg)
    n = int(round(cfg.tile_size / res))
    rng = np.random.Generator(np.random.Philox(key=int(seed)))

    if kind is TerrainKind.FLAT:
        h = np.zeros((n, n))
    elif kind is TerrainKind.SMOOTH_SLOPE:
        profile = math.tan(params["slope"]) * (np.arange(n) * res)
        h = np.broadcast_to(profile[:, None], (n, n)).copy()
    elif kind is TerrainKind.ROUGH_SLOPE:
        profile = math.tan(params["slope"]) * (np.arange(n) * res)
        h = profile[:, None] + rng.uniform(params["noise_lo"], params["noise_hi"], (n, n))
    elif kind is TerrainKind.STAIRS_UP:
        profile = _stair_profile(n, params["riser"], params["tread"], res)
        h = np.broadcast_to(profile[:, None], (n, n)).copy()
    elif kind is TerrainKind.STAIRS_DOWN:
        profile = _stair_profile(n, params["riser"], params["tread"], res)[::-1]
        h = np.broadcast_to(profile[:, None], (n, n)).copy()
    elif kind is TerrainKind.RANDOM_OBSTACLES:
        h = np.zeros((n, n))
        for _ in range(params["count"]):
            side = rng.uniform(params["side_lo"], params["side_hi"])
            height = rng.uniform(params["height_lo"], params["height_hi"])
            x0 = rng.uniform(0.0, cfg.tile_size - side)
            y0 = rng.uniform(0.0, cfg.tile_size - side)
            # Cells whose centers fall inside the block footprint.
            ix0 = max(0, math.ceil(x0 / res - 0.5))
            ix1 = min(n, math.ceil((x0 + side) / res - 0.5))
            iy0 = max(0, math.ceil(y0 / res - 0.5))
            iy1 = min(n, math.ceil((y0 + side) / res - 0.5))
            block = h[ix0:ix1, iy0:iy1]
            np.maximum(block, height, out=block)
    elif kind is TerrainKind.WAVY:
        phases = rng.uniform(0.0, 2.0 * np.pi, params["num_waves"])
        cell = (np.arange(n) + 0.5) / n
        profile = np.zeros(n)
        for k in range(params["num_waves"]):
            profile = profile + params["amplitude"] * np.sin(
                2.0 * np.pi * (k + 1) * cell + phases[k]
            )
        h = np.broadcast_to(profile[:, None], (n, n)).copy()
    else:  # pragma: no cover - parse() exhausts the enum
        raise ValueError(f"unhandled terrain kind {kind}")

    return Heightfield(resolution=res, heights=h, kind=kind, level=level, seed=int(seed))


def _tile_seed(base_seed: int, row: int, col: int) -> int:
    # SeedSequence hashing is platform-independent and decorrelates tiles.
    return int(np.random.SeedSequence(entropy=[int(base_seed), row, col]).generate_state(1, np.uint64)[0])


def build_arena(
    layout: Sequence[Sequence[Tuple[Union[TerrainKind, str], int]]],
    seeds: Union[int, Sequence[Sequence[int]]] = 0,
    resolution: Optional[float] = None,
    cfg: Optional[TerrainConfig] = None,
    origin: Tuple[float, float] = (0.0, 0.0),
) -> Arena:
    """Tile a rows x cols layout of (kind, level) into a stitched arena.

    `seeds` is either a single base seed (per-tile seeds are derived from it
    and the tile's grid position) or an explicit rows x cols grid of seeds.
    """
    cfg = cfg if cfg is not None else TerrainConfig()
    if not layout or not layout[0]:
        raise ValueError("arena layout must be non-empty")
    tiles = []
    for r, row in enumerate(layout):
        tile_row = []
        for c, (kind, level) in enumerate(row):
            seed = seeds[r][c] if not isinstance(seeds, (int, np.integer)) else _tile_seed(seeds, r, c)
            tile_row.append(generate_tile(kind, level, seed, resolution, cfg))
        tiles.append(tuple(tile_row))
    return Arena(tiles=tuple(tiles), tile_size=cfg.tile_size, origin=origin)


def sample_height(arena: Arena, x, y):
    """Bilinear height at world (x, y); out-of-range queries clamp to the border.

    Accepts scalars or equally-shaped arrays; returns matching shape.
    """
    H = arena.heights
    scalar = np.isscalar(x) and np.isscalar(y)
    u = (np.asarray(x, dtype=np.float64) - arena.origin[0]) / arena.resolution - 0.5
    v = (np.asarray(y, dtype=np.float64) - arena.origin[1]) / arena.resolution - 0.5
    u_round, v_round = np.round(u), np.round(v)
    u = np.where(np.abs(u - u_round) < _SNAP_EPS, u_round, u)
    v = np.where(np.abs(v - v_round) < _SNAP_EPS, v_round, v)
    u = np.clip(u, 0.0, H.shape[0] - 1.0)
    v = np.clip(v, 0.0, H.shape[1] - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.intp), H.shape[0] - 2)
    j0 = np.minimum(np.floor(v).astype(np.intp), H.shape[1] - 2)
    tx = u - i0
    ty = v - j0
    out = (
        H[i0, j0] * (1.0 - tx) * (1.0 - ty)
        + H[i0 + 1, j0] * tx * (1.0 - ty)
        + H[i0, j0 + 1] * (1.0 - tx) * ty
        + H[i0 + 1, j0 + 1] * tx * ty
    )
    return float(out) if scalar else out


def height_scan(arena: Arena, base_position: np.ndarray, base_yaw: float) -> np.ndarray:
    """231 relative heights (base z minus terrain) on a body-frame grid.

    21 x 11 samples, 0.1 m pitch, centered under the base and rotated by the
    base yaw; serialized forward-major (all lateral samples of the front row
    first... of the rearmost row last).
    """
    dx = (np.arange(SCAN_NX) - (SCAN_NX - 1) / 2) * SCAN_SPACING
    dy = (np.arange(SCAN_NY) - (SCAN_NY - 1) / 2) * SCAN_SPACING
    DX, DY = np.meshgrid(dx, dy, indexing="ij")
    c, s = np.cos(base_yaw), np.sin(base_yaw)
    px = base_position[0] + c * DX - s * DY
    py = base_position[1] + s * DX + c * DY
    return base_position[2] - sample_height(arena, px.ravel(), py.ravel())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def export_heightfield(hf: Heightfield, basepath, fmt: str = "csv") -> Path:
    """Write a tile to disk.

    "csv": <base>.json metadata plus <base>.csv heights (row i = x index).
    "asciigrid": <base>.asc ESRI-style grid for visualization tools.
    Returns the primary written path.
    """
    base = Path(basepath)
    if fmt == "csv":
        csv_path = base.with_suffix(".csv")
        json_path = base.with_suffix(".json")
        np.savetxt(csv_path, hf.heights, fmt="%.17g", delimiter=",")
        header = {
            "kind": hf.kind.value,
            "level": hf.level,
            "seed": int(hf.seed),
            "resolution": hf.resolution,
            "friction": hf.friction,
            "nx": hf.nx,
            "ny": hf.ny,
            "heights_csv": csv_path.name,
            "layout": "row i = x index, column j = y index",
        }
        json_path.write_text(json.dumps(header, indent=2) + "\n")
        return json_path
    if fmt == "asciigrid":
        asc_path = base.with_suffix(".asc")
        lines = [
            f"ncols {hf.nx}",
            f"nrows {hf.ny}",
            "xllcorner 0",
            "yllcorner 0",
            f"cellsize {hf.resolution:.17g}",
            "NODATA_value -9999",
        ]
        # ESRI rows run north to south: emit y rows in reverse.
        for j in range(hf.ny - 1, -1, -1):
            lines.append(" ".join(f"{v:.17g}" for v in hf.heights[:, j]))
        asc_path.write_text("\n".join(lines) + "\n")
        return asc_path
    raise ValueError(f"unknown export format {fmt!r}")


def load_heightfield(path) -> Heightfield:
    """Read a tile written by export_heightfield.

    ASCII-grid files carry geometry only; kind/level/seed metadata is not
    stored in that format and loads as flat/1/0.
    """
    path = Path(path)
    if path.suffix == ".json":
        header = json.loads(path.read_text())
        heights = np.loadtxt(path.parent / header["heights_csv"], delimiter=",", ndmin=2)
        return Heightfield(
            resolution=header["resolution"],
            heights=heights,
            kind=TerrainKind.parse(header["kind"]),
            level=header["level"],
            seed=header["seed"],
            friction=header.get("friction", 1.0),
        )
    if path.suffix == ".asc":
        lines = path.read_text().splitlines()
        meta = {}
        for line in lines[:6]:
            key, value = line.split()
            meta[key.lower()] = value
        grid = np.loadtxt(lines[6:], ndmin=2)
        heights = grid[::-1, :].T  # undo north-to-south row order
        return Heightfield(
            resolution=float(meta["cellsize"]),
            heights=heights,
            kind=TerrainKind.FLAT,
            level=1,
            seed=0,
        )
    raise ValueError(f"unrecognized heightfield file {path.name!r}")
