"""Autoencoder-based hybrid beamforming for multi-user mmWave MIMO.

Submodules: :mod:`numerics`, :mod:`channel`, :mod:`autoencoder`,
:mod:`baselines`, :mod:`modulation`, :mod:`simulation`, :mod:`cli`.
"""

from .channel import GeometryParams, SystemConfig

__version__ = "0.1.0"
