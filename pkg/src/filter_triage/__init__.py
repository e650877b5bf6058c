"""Find distortion-susceptible CNN filters and fine-tune only those."""

from . import _tuning

_tuning.apply()

__version__ = "0.1.0"
