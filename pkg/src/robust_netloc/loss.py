"""Scalar loss kernels and their convexified (hinge-composed) versions.

Every kernel returns value and derivative together. Inputs may be scalars or
numpy arrays; scalar inputs give float outputs. At kinks the derivative is
the subgradient 0 (``absolute`` at 0, ``hinge`` at 0).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .model import canonical_family


class LossValue(NamedTuple):
    value: float | np.ndarray
    derivative: float | np.ndarray


def _out(value, derivative, scalar: bool) -> LossValue:
    if scalar:
        return LossValue(float(value), float(derivative))
    return LossValue(value, derivative)


def _check_radius(R):
    R = np.asarray(R, dtype=float)
    if np.any(~(R > 0)):
        raise ValueError(f"Huber radius must be positive, got {R}")
    return R


def quadratic(t) -> LossValue:
    t = np.asarray(t, dtype=float)
    return _out(t * t, 2.0 * t, t.ndim == 0)


def absolute(t) -> LossValue:
    t = np.asarray(t, dtype=float)
    return _out(np.abs(t), np.sign(t), t.ndim == 0)


def huber(t, R) -> LossValue:
    """Huber loss: ``t**2`` for ``|t| <= R``, ``2R|t| - R**2`` beyond."""
    R = _check_radius(R)
    t = np.asarray(t, dtype=float)
    a = np.abs(t)
    inner = a <= R
    value = np.where(inner, t * t, 2.0 * R * a - R * R)
    deriv = np.where(inner, 2.0 * t, 2.0 * R * np.sign(t))
    return _out(value, deriv, t.ndim == 0 and R.ndim == 0)


def hinge(t) -> LossValue:
    """``max(0, t)`` with derivative 1 for t > 0 and 0 otherwise."""
    t = np.asarray(t, dtype=float)
    return _out(np.maximum(t, 0.0), (t > 0).astype(float), t.ndim == 0)


def loss(family: str, t, R=None) -> LossValue:
    """Evaluate the plain kernel of ``family``; ``R`` is used only for Huber."""
    family = canonical_family(family)
    if family == "quadratic":
        return quadratic(t)
    if family == "absolute":
        return absolute(t)
    if R is None:
        raise ValueError("Huber loss needs a radius")
    return huber(t, R)


def convexified(family: str, t, R=None) -> LossValue:
    """Kernel composed with the hinge: ``h(max(0, t))``.

    Zero for ``t <= 0`` and equal to the plain kernel for ``t >= 0``.
    """
    s, ds = hinge(t)
    h, dh = loss(family, s, R)
    return LossValue(h, dh * ds)
