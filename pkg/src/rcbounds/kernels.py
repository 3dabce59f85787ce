"""Dispatch between the numba and numpy kernel sets.

Both modules expose the same function names; which one backs this module is
decided once, at import, by ``_accel.USE_NUMBA``.
"""
from . import _kernels_np as numpy_kernels
from ._accel import USE_NUMBA, backend_name

if USE_NUMBA:
    from . import _kernels_nb as active
else:
    active = numpy_kernels

rk4_trajectory = active.rk4_trajectory
dopri_trajectory = active.dopri_trajectory
flow_tangent_qr = active.flow_tangent_qr
esn_drive = active.esn_drive
esn_closed_loop = active.esn_closed_loop
esn_phi = active.esn_phi
esn_tangent_qr = active.esn_tangent_qr

__all__ = [
    "USE_NUMBA", "backend_name", "numpy_kernels", "active",
    "rk4_trajectory", "dopri_trajectory", "flow_tangent_qr",
    "esn_drive", "esn_closed_loop", "esn_phi", "esn_tangent_qr",
]
