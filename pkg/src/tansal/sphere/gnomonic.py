"""Gnomonic (tangent-plane) projection and its inverse.

The forward map takes a direction on the sphere to coordinates on the plane
tangent at ``center``:

    cos c = sin(phi1) sin(phi) + cos(phi1) cos(phi) cos(theta - theta0)
    x = cos(phi) sin(theta - theta0) / cos c
    y = (cos(phi1) sin(phi) - sin(phi1) cos(phi) cos(theta - theta0)) / cos c

It is only defined on the hemisphere facing the tangent point (cos c > 0).
The inverse maps any finite plane point back onto that hemisphere:

    rho = sqrt(x^2 + y^2),  c = arctan(rho)
    phi   = arcsin(cos c sin(phi1) + y sin c cos(phi1) / rho)
    theta = theta0 + arctan2(x sin c, rho cos(phi1) cos c - y sin(phi1) sin c)

with the plane origin mapping to the center itself.
"""

from __future__ import annotations

import math

import numpy as np

from .layout import AngularCoord, wrap_longitude


class OutOfHemisphereError(ValueError):
    """The point lies at or beyond 90 degrees from the tangent center."""


def gnomonic_forward(center: AngularCoord, point: AngularCoord) -> tuple[float, float]:
    """Project ``point`` onto the plane tangent at ``center``."""
    sp1, cp1 = math.sin(center.phi), math.cos(center.phi)
    sp, cp = math.sin(point.phi), math.cos(point.phi)
    cd = math.cos(point.theta - center.theta)
    cos_c = sp1 * sp + cp1 * cp * cd
    if cos_c <= 0.0:
        raise OutOfHemisphereError(
            f"point {point} is {math.degrees(math.acos(max(-1.0, min(1.0, cos_c)))):.1f} deg "
            f"from center {center}; gnomonic projection needs < 90 deg"
        )
    x = cp * math.sin(point.theta - center.theta) / cos_c
    y = (cp1 * sp - sp1 * cp * cd) / cos_c
    return x, y


def gnomonic_inverse(center: AngularCoord, x: float, y: float) -> AngularCoord:
    """Map plane coordinates back to the sphere. Exact inverse of the forward map."""
    rho = math.hypot(x, y)
    if rho == 0.0:
        return center
    c = math.atan(rho)
    sc, cc = math.sin(c), math.cos(c)
    phi = math.asin(
        max(-1.0, min(1.0, cc * math.sin(center.phi) + y * sc * math.cos(center.phi) / rho))
    )
    theta = center.theta + math.atan2(
        x * sc, rho * math.cos(center.phi) * cc - y * math.sin(center.phi) * sc
    )
    return AngularCoord(phi, wrap_longitude(theta))


def gnomonic_forward_arrays(
    center_phi: float, center_theta: float, phi: np.ndarray, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized forward projection.

    Returns (x, y, cos_c); entries with cos_c <= 0 are outside the visible
    hemisphere and carry meaningless x, y. Callers mask on cos_c.
    """
    sp1, cp1 = math.sin(center_phi), math.cos(center_phi)
    sp, cp = np.sin(phi), np.cos(phi)
    cd = np.cos(theta - center_theta)
    cos_c = sp1 * sp + cp1 * cp * cd
    with np.errstate(divide="ignore", invalid="ignore"):
        x = cp * np.sin(theta - center_theta) / cos_c
        y = (cp1 * sp - sp1 * cp * cd) / cos_c
    return x, y, cos_c


def gnomonic_inverse_arrays(
    center_phi: float, center_theta: float, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized inverse projection. Returns (phi, theta) with theta wrapped."""
    rho = np.hypot(x, y)
    c = np.arctan(rho)
    sc, cc = np.sin(c), np.cos(c)
    safe_rho = np.where(rho > 0.0, rho, 1.0)
    phi = np.arcsin(
        np.clip(cc * math.sin(center_phi) + y * sc * math.cos(center_phi) / safe_rho, -1.0, 1.0)
    )
    theta = center_theta + np.arctan2(
        x * sc, rho * math.cos(center_phi) * cc - y * math.sin(center_phi) * sc
    )
    phi = np.where(rho == 0.0, center_phi, phi)
    theta = np.where(rho == 0.0, center_theta, theta)
    theta = (theta + np.pi) % (2.0 * np.pi) - np.pi
    return phi, theta
