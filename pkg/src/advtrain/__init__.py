"""Robust adverse pre-training for CNN recognizers on degraded images.

Modules: :mod:`numeric` (layer kernels), :mod:`degrade` (HQ -> LQ operators),
:mod:`network` (specs, sub-models, layer export), :mod:`training` (SGD, RAP,
ARAP, baselines, evaluation), :mod:`video` (clip fusion), :mod:`transfer`
(prefix transfer to a target set), :mod:`data` (formats and datasets) and
:mod:`cli`.
"""

__version__ = "0.1.0"
