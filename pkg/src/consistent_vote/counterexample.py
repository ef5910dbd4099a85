"""Same labels, arbitrary gradients.

Given a binary labelling ``H`` of a gridded domain and any bounded function
``g``, build ``hhat`` whose sign reproduces ``H`` everywhere while its
gradient equals ``g``'s at every point farther than ``epsilon / 2`` from the
decision boundary:

    ghat = g - min(g) + c   on +1 regions
    ghat = g - max(g) - c   on -1 regions
    hhat = ghat                       where d > epsilon / 2
    hhat = ghat * 2 d / epsilon       where d <= epsilon / 2

with ``d`` the distance to the decision boundary. The factor ``2d/epsilon``
makes ``hhat`` continuous at ``d = epsilon/2``; a variant written with
``d/epsilon`` would not be, so the former is used.

Grids are cell-centred: ``resolution`` cells per axis, one node at each cell
centre. The boundary between two orthogonally adjacent nodes of opposite
label is taken to lie midway between them, so ``d`` is the distance to the
nearest opposite-label node minus half a cell.
"""

from __future__ import annotations

import ast
import math
import operator
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage


@dataclass(frozen=True, eq=False)
class GridFunction:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        if not 1 <= len(self.resolution) <= 2:
            raise ValueError("grids are limited to 1 or 2 dimensions")
        if not len(self.lower) == len(self.upper) == len(self.resolution):
            raise ValueError("domain bounds and resolution must have one entry per axis")
        if any(r < 8 for r in self.resolution):
            raise ValueError(f"resolution must be >= 8 per axis, got {self.resolution}")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("each axis needs upper > lower")
        if self.values.shape != tuple(self.resolution):
            raise ValueError(f"values shape {self.values.shape} does not match resolution {self.resolution}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")

    @classmethod
    def sample(cls, f: Callable, lower, upper, resolution) -> GridFunction:
        lower, upper, resolution = tuple(map(float, lower)), tuple(map(float, upper)), tuple(map(int, resolution))
        axes = grid_axes(lower, upper, resolution)
        mesh = np.meshgrid(*axes, indexing="ij")
        values = np.broadcast_to(np.asarray(f(*mesh), dtype=np.float64), resolution).copy()
        return cls(lower, upper, resolution, values)

    @property
    def ndim(self) -> int:
        return len(self.resolution)

    @property
    def cell_widths(self) -> tuple[float, ...]:
        return tuple((hi - lo) / r for lo, hi, r in zip(self.lower, self.upper, self.resolution))

    @property
    def axes(self) -> list[np.ndarray]:
        return grid_axes(self.lower, self.upper, self.resolution)

    def with_values(self, values: np.ndarray) -> GridFunction:
        return replace(self, values=np.asarray(values, dtype=np.float64))

    def same_grid(self, other: GridFunction) -> bool:
        return (self.lower, self.upper, self.resolution) == (other.lower, other.upper, other.resolution)


def grid_axes(lower, upper, resolution) -> list[np.ndarray]:
    return [lo + (np.arange(r) + 0.5) * (hi - lo) / r for lo, hi, r in zip(lower, upper, resolution)]


def sign_grid(h: GridFunction) -> GridFunction:
    """Labels in {-1, +1}; nodes where ``h`` is exactly zero are assigned +1."""
    return h.with_values(np.where(h.values >= 0, 1.0, -1.0))


@dataclass(frozen=True, eq=False)
class RegionLabeling:
    region_id: np.ndarray  # 1-based, one per node
    region_label: dict[int, int]
    distance: np.ndarray  # to the decision boundary; +inf when there is none

    @property
    def num_regions(self) -> int:
        return len(self.region_label)


def label_regions(H: GridFunction) -> RegionLabeling:
    """Orthogonally connected same-label regions and each node's boundary distance."""
    signs, widths = H.values, H.cell_widths
    if not np.all(np.isin(signs, (-1.0, 1.0))):
        raise ValueError("sign grid values must be -1 or +1")
    region_id = np.zeros(signs.shape, dtype=np.int64)
    region_label: dict[int, int] = {}
    offset = 0
    for label in (1, -1):
        ids, count = ndimage.label(signs == label)  # default structure: orthogonal adjacency
        mask = ids > 0
        region_id[mask] = ids[mask] + offset
        for r in range(1, count + 1):
            region_label[offset + r] = label
        offset += count
    if np.all(signs == signs.flat[0]):
        distance = np.full(signs.shape, np.inf)
    else:
        # exact Euclidean distance from each node to the nearest node of the other label
        to_other = np.where(
            signs > 0,
            ndimage.distance_transform_edt(signs > 0, sampling=widths),
            ndimage.distance_transform_edt(signs < 0, sampling=widths),
        )
        distance = np.maximum(to_other - 0.5 * min(widths), 0.0)
    return RegionLabeling(region_id, region_label, distance)


def default_offset(g: GridFunction) -> float:
    return 0.1 * (float(g.values.max() - g.values.min()) + 1.0)


def shifted_g(H: GridFunction, g: GridFunction, c: float) -> np.ndarray:
    """``g - min g + c`` on +1 nodes and ``g - max g - c`` on -1 nodes."""
    return np.where(H.values > 0, g.values - g.values.min() + c, g.values - g.values.max() - c)


def blend(ghat: np.ndarray, distance: np.ndarray, epsilon: float) -> np.ndarray:
    distance = np.asarray(distance, dtype=np.float64)
    return np.where(distance > epsilon / 2, ghat, ghat * 2.0 * np.minimum(distance, epsilon) / epsilon)


def construct_hhat(H: GridFunction, g: GridFunction, epsilon: float, c: float | None = None) -> GridFunction:
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if c is None:
        c = default_offset(g)
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    if not H.same_grid(g):
        raise ValueError("H and g must share a grid")
    labeling = label_regions(H)
    return g.with_values(blend(shifted_g(H, g, c), labeling.distance, epsilon))


def central_gradient(f: GridFunction) -> np.ndarray:
    """Central differences per axis, shape (ndim, *resolution); NaN on the outer ring."""
    out = np.full((f.ndim, *f.values.shape), np.nan)
    for axis, h in enumerate(f.cell_widths):
        fwd = np.roll(f.values, -1, axis=axis)
        back = np.roll(f.values, 1, axis=axis)
        grad = (fwd - back) / (2 * h)
        edge = [slice(None)] * f.ndim
        for idx in (0, -1):
            edge[axis] = idx
            grad[tuple(edge)] = np.nan
        out[axis] = grad
    return out


@dataclass(frozen=True)
class VerificationReport:
    num_regions: int
    label_checked: int
    label_mismatches: int
    zero_nodes: int
    grad_checked: int
    max_grad_error: float
    grad_tol: float

    @property
    def labels_ok(self) -> bool:
        return self.label_mismatches == 0

    @property
    def gradients_ok(self) -> bool:
        return self.max_grad_error <= self.grad_tol

    @property
    def passed(self) -> bool:
        return self.labels_ok and self.gradients_ok

    def to_json(self) -> dict:
        return {
            "num_regions": self.num_regions,
            "label_checked": self.label_checked,
            "label_mismatches": self.label_mismatches,
            "zero_nodes": self.zero_nodes,
            "grad_checked": self.grad_checked,
            "max_grad_error": self.max_grad_error,
            "grad_tol": self.grad_tol,
            "labels_ok": self.labels_ok,
            "gradients_ok": self.gradients_ok,
            "passed": self.passed,
        }


def verify_construction(
    H: GridFunction, hhat: GridFunction, g: GridFunction, epsilon: float, grad_tol: float
) -> VerificationReport:
    """Check sign agreement off the boundary and gradient agreement away from the blend zone.

    Nodes where ``hhat`` is exactly zero have no sign; they are counted in
    ``zero_nodes`` rather than as mismatches.
    """
    if not (H.same_grid(hhat) and H.same_grid(g)):
        raise ValueError("H, hhat and g must share a grid")
    labeling = label_regions(H)
    d = labeling.distance
    off_boundary = d > 0
    s = np.sign(hhat.values)
    zero = off_boundary & (s == 0)
    checked = off_boundary & ~zero
    mismatches = int(np.sum(checked & (s != H.values)))

    far = d > epsilon / 2 + 2 * max(H.cell_widths)
    gh, gg = central_gradient(hhat), central_gradient(g)
    interior = np.all(np.isfinite(gh), axis=0) & np.all(np.isfinite(gg), axis=0)
    mask = far & interior
    err = np.abs(gh - gg)[:, mask]
    max_err = float(err.max()) if err.size else 0.0
    return VerificationReport(
        num_regions=labeling.num_regions,
        label_checked=int(checked.sum()),
        label_mismatches=mismatches,
        zero_nodes=int(zero.sum()),
        grad_checked=int(mask.sum()),
        max_grad_error=max_err,
        grad_tol=grad_tol,
    )


# ---------------------------------------------------------------------------
# Expressions for the command line: polynomials and sin/cos/exp in x (and y)
# ---------------------------------------------------------------------------

_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp, "tanh": np.tanh, "abs": np.abs}
_CONSTS = {"pi": math.pi, "e": math.e}


def parse_expression(text: str, variables: Sequence[str] = ("x", "y")) -> Callable:
    """Compile an arithmetic expression over ``variables`` into a vectorised function."""
    try:
        tree = ast.parse(text, mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            check(node.right)
        elif isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            check(node.operand)
        elif isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            if len(node.args) != 1 or node.keywords:
                raise ValueError(f"{node.func.id}() takes exactly one argument")
            check(node.args[0])
        elif isinstance(node, ast.Name):
            if node.id not in variables and node.id not in _CONSTS:
                raise ValueError(f"unknown name {node.id!r} in {text!r}")
        elif isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            pass
        else:
            raise ValueError(f"unsupported syntax in {text!r}")

    check(tree)

    def evaluate(node, env):
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](evaluate(node.left, env), evaluate(node.right, env))
        if isinstance(node, ast.UnaryOp):
            v = evaluate(node.operand, env)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](evaluate(node.args[0], env))
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        return node.value

    def f(*coords):
        env = dict(zip(variables, coords))
        return evaluate(tree, env)

    return f
