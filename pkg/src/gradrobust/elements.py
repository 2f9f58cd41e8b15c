"""Reference-cell finite elements and tensor-product Gauss quadrature.

Everything lives on the reference square [-1,1]^2.  The velocity element
is the 9-node biquadratic Lagrange element with nodes on the tensor grid
{-1,0,1}^2 ordered row by row (x fastest).  The pressure element is the
modal, discontinuous linear triple {1, x, y}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: reference coordinates of the 9 biquadratic nodes, row by row
Q2_NODES = np.array(
    [[x, y] for y in (-1.0, 0.0, 1.0) for x in (-1.0, 0.0, 1.0)]
)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss rule on the reference square."""

    points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)
    points_per_axis: int


def gauss_rule(points_per_axis: int) -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule, exact for degree 2n-1 per axis."""
    if points_per_axis < 1 or points_per_axis > 10:
        raise ValueError("points_per_axis must lie in 1..10")
    t, w = np.polynomial.legendre.leggauss(points_per_axis)
    X, Y = np.meshgrid(t, t, indexing="xy")
    WX, WY = np.meshgrid(w, w, indexing="xy")
    return QuadratureRule(
        points=np.column_stack([X.ravel(), Y.ravel()]),
        weights=(WX * WY).ravel(),
        points_per_axis=points_per_axis,
    )


def _check_reference(points: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 2:
        raise ValueError("points must have shape (n, 2)")
    if np.any(np.abs(pts) > 1.0 + 1e-12):
        raise ValueError("points must lie in the reference square [-1,1]^2")
    return pts


def _lag1d(t: np.ndarray):
    """Quadratic Lagrange values/derivatives on nodes {-1, 0, 1}."""
    vals = np.stack([0.5 * t * (t - 1.0), 1.0 - t * t, 0.5 * t * (t + 1.0)])
    ders = np.stack([t - 0.5, -2.0 * t, t + 0.5])
    return vals, ders


class Q2Element:
    """Scalar 9-node biquadratic element."""

    n_basis = 9
    nodes = Q2_NODES

    def tabulate(self, points: np.ndarray):
        """Values (9, n) and reference gradients (9, n, 2) at given points."""
        pts = _check_reference(points)
        lx, dlx = _lag1d(pts[:, 0])
        ly, dly = _lag1d(pts[:, 1])
        n = pts.shape[0]
        vals = np.empty((9, n))
        grads = np.empty((9, n, 2))
        for j in range(3):
            for i in range(3):
                k = 3 * j + i
                vals[k] = lx[i] * ly[j]
                grads[k, :, 0] = dlx[i] * ly[j]
                grads[k, :, 1] = lx[i] * dly[j]
        return vals, grads


class P1Element:
    """Discontinuous linear pressure element, modal basis {1, x, y}."""

    n_basis = 3

    def tabulate(self, points: np.ndarray):
        pts = _check_reference(points)
        n = pts.shape[0]
        vals = np.stack([np.ones(n), pts[:, 0], pts[:, 1]])
        grads = np.zeros((3, n, 2))
        grads[1, :, 0] = 1.0
        grads[2, :, 1] = 1.0
        return vals, grads


_ELEMENTS = {"q2": Q2Element, "p1": P1Element}


def scalar_element(kind: str):
    """Element factory; kind is 'q2' or 'p1'."""
    try:
        return _ELEMENTS[kind.lower()]()
    except KeyError:
        raise ValueError(f"unknown element kind {kind!r}") from None


def eval_scalar_basis(element, points: np.ndarray):
    """Tabulate an element's basis values and reference gradients."""
    return element.tabulate(points)
