"""Frozen reference values for the three-layer derivative checks.

Medium: interfaces 0 and -2, wavenumbers (0.8, 1.5, 2.0).  Quantity:
(d_x + i d_y)^s d_z^k3 d_z'^k3' u_11^up(r, r') / (s! k3! k3'!), obtained by
high-accuracy direct quadrature.
"""
from .medium import LayeredMedium


def three_layer_medium() -> LayeredMedium:
    return LayeredMedium([0.0, -2.0], [0.8, 1.5, 2.0])


DCIM_Z_MIN = -1.5  # image reference height for the DCIM check
DCIM_LEVEL_SAMPLES = 101

POINTS = (
    ((0.5, 1.0, -0.5), (0.3, 1.3, -0.5)),
    ((0.6, 0.3, -1.2), (0.5, 1.0, -0.5)),
)

# (target, source, (k3, k3', s)) -> value
DERIVATIVES = {
    (POINTS[0], (0, 0, 0)): 0.0636386627264339 + 0.00236214962912961j,
    (POINTS[0], (3, 4, 0)): 0.00474777580070183 - 0.00126663970537548j,
    (POINTS[0], (8, 8, 0)): -7.40635683599036e-10 + 1.3083718652325e-06j,
    (POINTS[0], (0, 0, 4)): -1.77276908208051e-06 - 1.50190394931086e-06j,
    (POINTS[0], (0, 0, 8)): 1.61980348471514e-11 - 2.87922306729206e-13j,
    (POINTS[1], (0, 0, 0)): 0.0470021533117637 - 0.0655662374392812j,
    (POINTS[1], (3, 4, 0)): 0.00185695910047338 - 0.00407200441147604j,
    (POINTS[1], (8, 8, 0)): 5.85835080649916e-09 - 5.8052078071366e-05j,
    (POINTS[1], (0, 0, 4)): -1.71372127668556e-05 + 0.000103591338132027j,
    (POINTS[1], (0, 0, 8)): -1.26729956194435e-07 + 5.90666673167792e-08j,
}
