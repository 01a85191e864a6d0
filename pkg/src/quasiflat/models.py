"""Built-in models and the model registry."""

from __future__ import annotations

import math
from typing import Callable

from . import autodiff as ad
from .flatmodel import FlatSystem
from .multijet import JetFunction

__all__ = ["vtol", "gantry_crane", "MODELS", "get_model", "UnknownModelError"]


class UnknownModelError(KeyError):
    pass


def vtol(eps: float = 0.1) -> FlatSystem:
    """Planar VTOL aircraft, ``q = (x, z, theta)``, gravity normalized to 1.

    Equations of motion::

        x''     = eps cos(theta) u2 - sin(theta) u1
        z''     = cos(theta) u1 + eps sin(theta) u2 - 1
        theta'' = u2

    The flat output is the point ``(x - eps sin(theta), z + eps cos(theta))``.
    Its acceleration is ``(u1 - eps omega**2) * (-sin(theta), cos(theta))``
    minus gravity, which fixes ``theta`` on the branch of positive effective
    thrust.
    """

    def flat_output(q):
        s, c = ad.sincos(q[2])
        return [q[0] - eps * s, q[1] + eps * c]

    def completion(q):
        return q[2]

    def fq(y):
        theta = ad.atan2(-y[0, 2], y[1, 2] + 1.0)
        s, c = ad.sincos(theta)
        return [y[0, 0] + eps * s, y[1, 0] - eps * c, theta]

    def drift(q, v):
        return [0.0, -1.0, 0.0]

    def input_matrix(q):
        s, c = ad.sincos(q[2])
        return [[-s, eps * c], [c, eps * s], [0.0, 1.0]]

    return FlatSystem(
        name="vtol",
        n=3,
        flat_output=flat_output,
        completion=completion,
        Fq=JetFunction.vector(fq, (2, 2), 3, ["x", "z", "theta"]),
        drift=drift,
        input_matrix=input_matrix,
        parameters={"eps": eps},
        nominal_output=(0.0, eps),
        probe_box=(1.0, 0.5, 0.5, 0.5, 0.5, 0.5),
        chart=lambda q: math.cos(q[2]) > 0.0,
        coordinate_names=("x", "z", "theta"),
    )


def gantry_crane(trolley_mass: float = 10.0, load_mass: float = 1.0,
                 winch_inertia: float = 1.0, g: float = 9.81) -> FlatSystem:
    """Two-dimensional gantry crane, ``q = (s, l, phi)``.

    ``s`` is the trolley position, ``l`` the cable length and ``phi`` the
    cable angle from the downward vertical. Inputs are the generalized
    forces on ``s`` and ``l``; ``winch_inertia`` is the winch inertia
    reduced to the cable. The load is a point mass at
    ``(s + l sin(phi), l cos(phi))`` with the vertical axis pointing down;
    that position is the flat output.
    """
    M, m, J = trolley_mass, load_mass, winch_inertia

    def flat_output(q):
        s, c = ad.sincos(q[2])
        return [q[0] + q[1] * s, q[1] * c]

    def completion(q):
        return q[2]

    def fq(y):
        # cable force is parallel to gravity minus load acceleration
        phi = ad.atan2(-y[0, 2], g - y[1, 2])
        s, c = ad.sincos(phi)
        length = y[1, 0] / c
        return [y[0, 0] - length * s, length, phi]

    def mass_matrix(q):
        s, c = ad.sincos(q[2])
        length = q[1]
        return [[M + m, m * s, m * length * c],
                [m * s, J + m, 0.0],
                [m * length * c, 0.0, m * length * length]]

    def drift(q, v):
        s, c = ad.sincos(q[2])
        length = q[1]
        ldot, w = v[1], v[2]
        return [-2.0 * m * ldot * w * c + m * length * w * w * s,
                m * length * w * w + m * g * c,
                -2.0 * m * length * ldot * w - m * g * length * s]

    def input_matrix(q):
        return [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]]

    return FlatSystem(
        name="gantry-crane",
        n=3,
        flat_output=flat_output,
        completion=completion,
        Fq=JetFunction.vector(fq, (2, 2), 3, ["s", "l", "phi"]),
        drift=drift,
        input_matrix=input_matrix,
        mass_matrix=mass_matrix,
        parameters={"trolley_mass": M, "load_mass": m, "winch_inertia": J, "g": g},
        nominal_output=(0.0, 1.0),
        probe_box=(0.5, 0.5, 0.5, 0.5, 0.5, 0.5),
        chart=lambda q: q[1] > 0.0 and math.cos(q[2]) > 0.0,
        coordinate_names=("s", "l", "phi"),
    )


MODELS: dict[str, Callable[..., FlatSystem]] = {
    "vtol": vtol,
    "gantry-crane": gantry_crane,
}


def get_model(name: str, **params) -> FlatSystem:
    """Build a registered model; unknown parameter names raise ``TypeError``."""
    try:
        factory = MODELS[name]
    except KeyError:
        raise UnknownModelError(f"unknown model {name!r}; known: {', '.join(sorted(MODELS))}") from None
    return factory(**params)
