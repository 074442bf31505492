"""Numerical companion for integrable plane fields with leafwise symplectic forms.

Modules: ``geom_core`` (plane fields, 2-forms, margins), ``triangulation``
(Kuhn lattices, jiggling, general position), ``civilization`` (tubular
normal forms over skeleta), ``torus_example`` (the solid-torus filling),
``diffeo_group`` (compactly supported diffeomorphisms and paths) and
``pipeline``/``cli`` (orchestration).
"""

__version__ = "0.1.0"
