"""Phonon lasing in tweezer-defined cavities of long ion crystals."""
from .crystal import CA40, IonArraySpec, IonSpecies, build_coupling_matrix, unit_scale

__version__ = "0.1.0"

__all__ = ["CA40", "IonArraySpec", "IonSpecies", "build_coupling_matrix", "unit_scale", "__version__"]
