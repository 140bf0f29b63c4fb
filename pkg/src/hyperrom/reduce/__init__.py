"""Approximation spaces: POD, local POD, quadratic manifold, LLE with local charts."""

from .lle import (ChartWarning, LleModel, LocalChart, embed_init, embed_init_bar, fit_chart,
                  lle_embedding, lle_fit, local_chart, reconstruction_weights)
from .lpod import LpodModel, lpod_fit, lpod_select
from .pm import PmModel, pm_fit, pm_tangent, quad, quad_jacobian
from .pod import PodBasis, pod_fit, pod_tail
from .spaces import (FixedChartSpace, LleSpace, LpodSpace, PmSpace, PodSpace, ReducedSpace,
                     SpaceState)

__all__ = [
    "ChartWarning", "LleModel", "LocalChart", "embed_init", "embed_init_bar", "fit_chart",
    "lle_embedding", "lle_fit", "local_chart", "reconstruction_weights", "LpodModel", "lpod_fit",
    "lpod_select", "PmModel", "pm_fit", "pm_tangent", "quad", "quad_jacobian", "PodBasis",
    "pod_fit", "pod_tail", "FixedChartSpace", "LleSpace", "LpodSpace", "PmSpace", "PodSpace",
    "ReducedSpace", "SpaceState",
]
