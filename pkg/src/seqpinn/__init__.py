"""Sequential-in-time PINN solver with time-modulated network parameters.

Subpackages:

- ``tape``/``jets``/``autodiff``: the differentiation engine.
- ``ramps``: blending (extrapolation control) functions and interval stacking.
- ``network``: the time-modulated fully connected network.
- ``problems``: benchmark PDE definitions and sample generation.
- ``training``: composite loss, Adam, L-BFGS, sequential interval driver.
- ``reference``: exact/spectral reference solutions and error metrics.
- ``experiments``: config-driven experiment runner and CSV artifacts.
"""

__version__ = "0.1.0"
