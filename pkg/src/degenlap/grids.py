"""Masked uniform grids and scalar grid functions.

Nodes live at box corners with uniform spacing h.  Each node is flagged
excluded / interior / boundary; quadrature cells are the hypercubes whose
2^n corner nodes are all non-excluded.  Interior nodes are the solver
unknowns, boundary nodes carry Dirichlet data.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["GridDomain", "GridFunction", "EXCLUDED", "INTERIOR", "BOUNDARY"]

EXCLUDED, INTERIOR, BOUNDARY = 0, 1, 2


@dataclass
class GridDomain:
    """Uniform tensor grid on a box with a node mask.

    mask values: 0 excluded, 1 interior, 2 boundary (Dirichlet).
    """

    bounds: np.ndarray          # (n, 2)
    shape: tuple[int, ...]      # nodes per axis
    mask: np.ndarray            # (shape,) int8
    h: float = field(init=False)

    def __post_init__(self):
        self.bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        self.shape = tuple(int(s) for s in self.shape)
        spacings = [(hi - lo) / (s - 1) for (lo, hi), s in zip(self.bounds, self.shape)]
        if not np.allclose(spacings, spacings[0], rtol=1e-12, atol=0.0):
            raise ValueError(f"grid spacing must be uniform across axes, got {spacings}")
        self.h = float(spacings[0])
        self.mask = np.asarray(self.mask, dtype=np.int8).reshape(self.shape)
        self._node_coords = None
        self._cell_cache = None

    # --- constructors ---------------------------------------------------

    @classmethod
    def box(cls, bounds, shape) -> "GridDomain":
        """Full box: interior everywhere except the outer faces (boundary)."""
        shape = tuple(int(s) for s in shape)
        mask = np.full(shape, INTERIOR, dtype=np.int8)
        for ax in range(len(shape)):
            sl = [slice(None)] * len(shape)
            sl[ax] = 0
            mask[tuple(sl)] = BOUNDARY
            sl[ax] = -1
            mask[tuple(sl)] = BOUNDARY
        return cls(bounds, shape, mask)

    @classmethod
    def disc(cls, radius: float, shape, center=None, bounds=None) -> "GridDomain":
        """Disc/ball mask |x - c| <= radius inside its bounding box."""
        n = len(shape)
        if bounds is None:
            bounds = [(-radius, radius)] * n
        if center is None:
            center = np.zeros(n)
        dom = cls(bounds, shape, np.full(shape, INTERIOR, dtype=np.int8))
        inside = np.linalg.norm(dom.node_coords() - np.asarray(center), axis=-1) <= radius
        dom.mask = _demote_face_nodes(_classify(inside))
        dom._cell_cache = None
        return dom

    @classmethod
    def annulus(cls, r_inner: float, r_outer: float, shape, bounds=None) -> "GridDomain":
        n = len(shape)
        if bounds is None:
            bounds = [(-r_outer, r_outer)] * n
        dom = cls(bounds, shape, np.full(shape, INTERIOR, dtype=np.int8))
        r = np.linalg.norm(dom.node_coords(), axis=-1)
        inside = (r >= r_inner) & (r <= r_outer)
        dom.mask = _demote_face_nodes(_classify(inside))
        dom._cell_cache = None
        return dom

    # --- geometry ---------------------------------------------------------

    @property
    def n(self) -> int:
        return self.bounds.shape[0]

    def node_coords(self) -> np.ndarray:
        """(shape..., n) array of node coordinates."""
        if self._node_coords is None:
            axes = [np.linspace(lo, hi, s) for (lo, hi), s in zip(self.bounds, self.shape)]
            grids = np.meshgrid(*axes, indexing="ij")
            self._node_coords = np.stack(grids, axis=-1)
        return self._node_coords

    def included_cells(self) -> np.ndarray:
        """Boolean array over cells (shape-1 per axis): all corners live and
        at least one corner interior."""
        if self._cell_cache is None:
            ok = self.mask > 0
            any_int = self.mask == INTERIOR
            for ax in range(self.n):
                lo = [slice(None)] * self.n
                hi = [slice(None)] * self.n
                lo[ax] = slice(0, -1)
                hi[ax] = slice(1, None)
                ok = ok[tuple(lo)] & ok[tuple(hi)]
                any_int = any_int[tuple(lo)] | any_int[tuple(hi)]
            self._cell_cache = ok & any_int
        return self._cell_cache

    def cell_centers(self) -> np.ndarray:
        """(cells..., n) coordinates of cell centers."""
        coords = self.node_coords()
        out = coords
        for ax in range(self.n):
            lo = [slice(None)] * self.n
            hi = [slice(None)] * self.n
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            out = 0.5 * (out[tuple(lo)] + out[tuple(hi)])
        return out

    def corner_index_arrays(self):
        """For each of the 2^n cell corners, the flat node index array over cells."""
        cell_shape = tuple(s - 1 for s in self.shape)
        base = np.arange(int(np.prod(self.shape))).reshape(self.shape)
        corners = []
        for bits in itertools.product((0, 1), repeat=self.n):
            sl = tuple(slice(b, b + s) for b, s in zip(bits, cell_shape))
            corners.append(base[sl].ravel())
        return corners  # list of 2^n arrays, each of length prod(cell_shape)

    def validate(self):
        inter = self.mask == INTERIOR
        ok = self.mask > 0
        for ax in range(self.n):
            for shift in (-1, 1):
                nb = np.roll(ok, shift, axis=ax)
                edge = [slice(None)] * self.n
                edge[ax] = 0 if shift == 1 else -1
                nb[tuple(edge)] = False
                if np.any(inter & ~nb):
                    raise ValueError("interior node with neighbor outside mask")
        return True


def _classify(inside: np.ndarray) -> np.ndarray:
    """Interior = the mask region itself; boundary = a one-cell collar of
    outside nodes around it (Moore neighborhood), where Dirichlet data is
    evaluated.  Every cell with an interior corner then has all its corners
    live, so interior nodes keep full stencils and no staircase gap opens
    between the quadrature region and the mask region."""
    n = inside.ndim
    dilated = inside.copy()
    for ax in range(n):
        grown = dilated.copy()
        for shift in (-1, 1):
            nb = np.roll(dilated, shift, axis=ax)
            edge = [slice(None)] * n
            edge[ax] = 0 if shift == 1 else -1
            nb[tuple(edge)] = False
            grown |= nb
        dilated = grown
    mask = np.where(inside, INTERIOR, np.where(dilated, BOUNDARY, EXCLUDED))
    return mask.astype(np.int8)


def _demote_face_nodes(mask: np.ndarray) -> np.ndarray:
    """Interior nodes on the outer box faces lack stencil cells; fix them."""
    n = mask.ndim
    for ax in range(n):
        for idx in (0, -1):
            sl = [slice(None)] * n
            sl[ax] = idx
            face = mask[tuple(sl)]
            face[face == INTERIOR] = BOUNDARY
    return mask


@dataclass
class GridFunction:
    """Scalar field on the nodes of a GridDomain."""

    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.domain.shape)
        live = self.domain.mask > 0
        if not np.all(np.isfinite(self.values[live])):
            raise ValueError("grid function has non-finite values on live nodes")

    @classmethod
    def from_callable(cls, domain: GridDomain, f: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        coords = domain.node_coords().reshape(-1, domain.n)
        vals = np.asarray(f(coords), dtype=float).reshape(domain.shape)
        vals = np.where(domain.mask > 0, vals, 0.0)
        return cls(domain, vals)

    @classmethod
    def zeros(cls, domain: GridDomain) -> "GridFunction":
        return cls(domain, np.zeros(domain.shape))

    def copy(self) -> "GridFunction":
        return GridFunction(self.domain, self.values.copy())

    def to_csv(self, path) -> None:
        """Serialize as `x1,...,xn,value,boundary` rows (17 significant digits)."""
        dom = self.domain
        coords = dom.node_coords().reshape(-1, dom.n)
        vals = self.values.ravel()
        flags = dom.mask.ravel()
        keep = flags > 0
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            header = ",".join(f"x{i + 1}" for i in range(dom.n)) + ",value,boundary\n"
            fh.write(header)
            for c, v, f in zip(coords[keep], vals[keep], flags[keep]):
                cs = ",".join("%.17g" % x for x in c)
                fh.write(f"{cs},{'%.17g' % v},{int(f == BOUNDARY)}\n")

    @classmethod
    def from_csv(cls, domain: GridDomain, path) -> "GridFunction":
        data = np.genfromtxt(path, delimiter=",", names=True)
        n = domain.n
        try:
            coords = np.stack([data[f"x{i + 1}"] for i in range(n)], axis=-1)
        except (KeyError, ValueError) as exc:
            raise ValueError(f"solution file does not have x1..x{n} columns") from exc
        live_count = int(np.count_nonzero(domain.mask > 0))
        if len(coords) != live_count:
            raise ValueError(
                f"solution file has {len(coords)} rows, grid has {live_count} live nodes")
        vals = np.zeros(domain.shape)
        idx = []
        for ax in range(n):
            lo = domain.bounds[ax, 0]
            pos = (coords[:, ax] - lo) / domain.h
            ii = np.rint(pos).astype(int)
            if np.abs(pos - ii).max() > 1e-6 or ii.min() < 0 or ii.max() >= domain.shape[ax]:
                raise ValueError("solution coordinates do not lie on the grid")
            idx.append(ii)
        vals[tuple(idx)] = data["value"]
        return cls(domain, vals)
