"""Built-in experiments, one entry per benchmark problem.

Each entry holds one or more config texts in the documented format; the
first is the main study, the others are companion runs on the same problem
(a second potential, the rescaled model).
"""
from __future__ import annotations

from dataclasses import dataclass

from .config import ExperimentConfig, parse_config

UNDERSPECIFIED = "geometry-underspecified"


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    description: str
    texts: tuple[str, ...]

    def configs(self) -> list[ExperimentConfig]:
        out = []
        for k, text in enumerate(self.texts):
            out.append(parse_config(text, name=self.name if k == 0 else f"{self.name}-{k}"))
        return out

    @property
    def flags(self) -> tuple[str, ...]:
        return self.configs()[0].flags


_LSHAPE = """
[experiment]
name = lshape
[geometry]
shape = lshape(-1, -1, 1, 1, 0, 0, 1, 1)
box = -2*pi/5, 2*pi/5, -2*pi/5, 2*pi/5
[model]
kind = cubic
beta = 0
[discretization]
resolutions = 4*pi/300, 4*pi/400, 4*pi/500
[reference]
mu = 9.639723844021
source = literature
rate_reference = literature
report_scale = 2    # -Lap u = mu u, while the flow uses -Lap/2
"""

_SQUARE = """
[experiment]
name = square-harmonic
[geometry]
shape = rectangle(-2, -2, 2, 2)
box = -5*pi/6, 5*pi/6, -5*pi/6, 5*pi/6
[potential]
kind = harmonic
[model]
kind = cubic
beta = 50
[discretization]
resolutions = 5*pi/180, 5*pi/240, 5*pi/300, 5*pi/360
[reference]
mu = 6.188543396102850
source = literature
rate_reference = literature
"""

_SQUARE_RESCALED = _SQUARE.replace("name = square-harmonic", "name = square-harmonic-rescaled") \
    .replace("kind = cubic", "kind = cubic-rescaled")

_CIRCLE = """
[experiment]
name = circle-lattice
[geometry]
shape = circle(0, 0, 2)
box = -pi, pi, -pi, pi
[potential]
kind = harmonic-lattice
params = 50
[model]
kind = cubic
beta = 200
[discretization]
resolutions = pi/60, pi/90, pi/120, pi/180
[reference]
mu = 68.0881
energy = 52.8319
source = literature
rate_reference = self-finest
"""

_ELLIPSE = """
[experiment]
name = ellipse-box
[geometry]
shape = ellipse(1.5, 2.0)
box = -pi, pi, -pi, pi
[model]
kind = cubic
beta = 4
[discretization]
resolutions = pi/60, pi/90, pi/120, pi/180
[reference]
mu = 1.8055
source = literature
rate_reference = self-finest
[excited]
states = 1
mu = 3.0755
"""

_ELLIPSE_POT = """
[experiment]
name = ellipse-shaped-potential
[geometry]
shape = ellipse(1.5, 2.0)
box = -pi, pi, -pi, pi
[potential]
kind = ellipse-shaped
params = 4, 1.5, 2.0, 0.3
[model]
kind = cubic
beta = 4
[discretization]
resolutions = pi/60, pi/90, pi/120
[reference]
mu = 2.3411
source = literature
rate_reference = self-finest
"""

_CRESCENT = """
[experiment]
name = crescent
flags = geometry-underspecified
markers = -0.35, 0    # peak of the obstacle potential
[geometry]
shape = csg_difference(circle(0, 0, 0.9), circle(0.55, 0, 0.75))
box = -pi/3, pi/3, -pi/3, pi/3
[potential]
kind = gaussian-obstacle
params = 4, -0.35, 0
[model]
kind = cubic
beta = 10
[discretization]
resolutions = pi/90, pi/120, pi/180, pi/240
[reference]
mu = 86.5431
source = annotation
rate_reference = self-finest
"""

_SECTOR = """
[experiment]
name = sector-cq
flags = geometry-underspecified
[geometry]
shape = csg_intersection(circle(0, 0, 2), csg_intersection(halfplane(-1, 0, 0), halfplane(0, -1, 0)))
box = -pi, pi, -pi, pi
[potential]
kind = quantum-pendulum
[model]
kind = cubic-quintic
beta = 1
gamma = 1
[discretization]
resolutions = pi/60, pi/90, pi/120, pi/180
[reference]
mu = 2.432
source = annotation
rate_reference = self-finest
"""

_HOI = """
[experiment]
name = ellipse-hoi
[geometry]
shape = ellipse(1.5, 2.0)
box = -pi, pi, -pi, pi
[model]
kind = hoi-split
beta = 10
delta = 10
[discretization]
resolutions = pi/60, pi/90, pi/120
dt = 0.001
[reference]
mu = 6.1360
energy = 5.7685
source = literature
rate_reference = self-finest
"""

CATALOG: dict[str, CatalogEntry] = {e.name: e for e in (
    CatalogEntry("lshape", "Dirichlet-Laplace eigenvalue on the L-shaped domain (reports 2 mu)",
                 (_LSHAPE,)),
    CatalogEntry("square-harmonic", "square [-2,2]^2, harmonic trap, beta = 50; plain and "
                 "rescaled models", (_SQUARE, _SQUARE_RESCALED)),
    CatalogEntry("circle-lattice", "disk r = 2, harmonic + optical lattice, beta = 200",
                 (_CIRCLE,)),
    CatalogEntry("ellipse-box", "ellipse (1.5, 2.0), box potential, beta = 4, first excited "
                 "state; ellipse-shaped potential companion", (_ELLIPSE, _ELLIPSE_POT)),
    CatalogEntry("crescent", "crescent, Gaussian obstacle, beta = 10", (_CRESCENT,)),
    CatalogEntry("sector-cq", "quarter disk r = 2, quantum pendulum, cubic-quintic beta = gamma "
                 "= 1", (_SECTOR,)),
    CatalogEntry("ellipse-hoi", "ellipse, higher-order interaction beta = delta = 10, dt = 1e-3",
                 (_HOI,)),
)}


def get(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown catalog entry {name!r}; available: "
                       + ", ".join(CATALOG)) from None
