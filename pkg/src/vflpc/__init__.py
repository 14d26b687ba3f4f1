"""Vector-field guided learning predictive control for a planar vehicle.

Modules: ``fields`` (guiding vector fields and trajectories), ``koopman``
(lifted linear models), ``gp`` (sparse residual GP), ``safety`` (barrier
switch), ``lpc`` (receding-horizon actor-critic), ``sim`` (bicycle plant),
``controller``/``runner``/``cli`` (closed loop and command line).
"""

__version__ = "0.1.0"
