"""Numerical toolkit for the Klein-Gordon extension operator on the hyperboloid.

Submodules: ``geometry`` (brackets and Lorentz boosts), ``regions`` (dyadic
caps, sectors and the Whitney cover), ``functions`` (sampled functions and
quadrature grids), ``extension`` (the extension operator and its norms),
``inequalities`` (decoupling, bilinear and refined Strichartz reports),
``search`` (extremizer ascent and recentering), ``calibration`` and
``acceptance``.
"""

__version__ = "1.0.0"

from .constants import POLICY, get_constants  # noqa: E402
from .geometry import LorentzBoost, bracket  # noqa: E402

__all__ = ["POLICY", "LorentzBoost", "bracket", "get_constants", "__version__"]
