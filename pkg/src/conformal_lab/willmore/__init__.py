"""Willmore geometry on analytic charts: energies, identities, residuals and conservation laws."""
from .charts import (CHUNK, Geometry, ImmersionChart, ImmersionError, SurfaceCatalogueEntry, catalogue,
                     chart_on_disc, get_surface, polar_quadrature)
from .invariance import (InversionError, Mobius, conformal_invariance_check, multiplicity_energy_scan,
                         physical_energies, random_inversion)
from .operators import (ConformalityError, area, as_charts, bracket, curvature_identities_check,
                        default_variation, first_variation_check, structure_identities_check,
                        total_curvature, willmore_energy, willmore_pointwise, willmore_residual_codim1,
                        willmore_residual_conservative, willmore_residual_discrete)
from .potentials import (NotWillmoreError, Potentials, conformal_willmore_differential,
                         conservation_potentials)


def fundamental_forms(chart: ImmersionChart, where: str = "quad") -> Geometry:
    """Populate and return the cached geometry of a chart."""
    return chart.fundamental_forms(where)
