# Analysis Module
# Detection, spectra, feedback thermometry and parameter fits

from .characterize import fit_charge_to_mass, fit_radius
from .feedback import closed_loop_cool, gain_sweep
from .signal import fit_lorentzian, transduce, welch_psd

__all__ = ["fit_charge_to_mass", "fit_radius", "closed_loop_cool", "gain_sweep", "fit_lorentzian", "transduce", "welch_psd"]
