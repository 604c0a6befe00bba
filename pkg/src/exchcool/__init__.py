"""Exchange cooling of two trapped ions: transport waveforms, dynamics and thermometry."""
from . import constants, dynamics, filters, potential, thermometry, waveform
from .constants import CA40, CODATA, IonSpecies, PhysicalConstants
from .potential import Compensation, PolyPotential

__version__ = "0.1.0"

__all__ = ["constants", "dynamics", "filters", "potential", "thermometry", "waveform",
           "CA40", "CODATA", "IonSpecies", "PhysicalConstants", "Compensation", "PolyPotential"]
