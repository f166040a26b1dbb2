"""Numerical toolkit for the first-order semiclassical expansion of the
two-electron interaction functional in one dimension.

The package is organized around the pipeline

    density  ->  coulomb_ot  ->  recovery + marginal_fix  ->  oracle

with `gridfield` and `trunc_gauss` providing the discrete-field and
truncated-Gaussian primitives shared by the construction and the oracles.
A FastAPI service (`coulomb_zpo.service`) exposes every pipeline stage as an
endpoint; the command-line interface (`coulomb_zpo.cli`) is a thin client of
that service.
"""

__version__ = "0.1.0"
