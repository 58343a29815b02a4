"""Bundled example plants and controller gains.

``second_order``  -- SISO plant with transfer function -s/(s^2 - w0^2).
``third_order``   -- SISO plant (s^2 + 1)/(s^3 + s^2 - s/3 - 1).
``ex52``          -- 6-state plant with three state delays and its designed PID gains.
``quadcopter``    -- 12-state hover linearization with two designed PID gain sets.
"""

from __future__ import annotations

import numpy as np

from .model import DelaySystem, PidGains


def second_order(omega0: float = 1.0) -> DelaySystem:
    A = [[0.0, omega0], [omega0, 0.0]]
    return DelaySystem(A=(A,), delays=(), B=[[-1.0], [0.0]], C=[[1.0, 0.0]])


def third_order() -> DelaySystem:
    A = [[-1.0, 1.0 / 3.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    return DelaySystem(A=(A,), delays=(), B=[[2.0], [0.0], [0.0]], C=[[0.5, 0.0, 0.5]])


_EX52_A0 = [
    [-0.3430, 0.6843, -0.1278, 0.4078, -0.7793, -1.4286],
    [1.6663, 0.0558, -1.4103, 0.2430, -1.7622, -1.1146],
    [-0.7667, -1.4018, 0.6029, 0.3975, -1.9355, 0.9132],
    [2.6355, -1.3601, -0.4569, -0.1757, 1.5269, 0.9764],
    [-0.0168, -1.5217, -0.1397, -0.3175, 0.6787, -1.5769],
    [0.3042, 1.0547, -0.9833, -1.1016, -2.2772, 0.2041],
]
_EX52_A1 = [
    [-1.1636, -0.0632, -0.0153, 0.1706, 1.0161, 0.3321],
    [0.4537, 0.3837, -1.5704, 1.0775, 1.0633, -1.2500],
    [0.6882, -0.1188, -0.6172, 0.1081, -0.9434, -0.8816],
    [0.4581, 0.4896, -0.7158, 0.2237, -0.2411, -0.2983],
    [0.9957, 0.0992, -0.1938, 0.4602, -0.9461, -0.2692],
    [-1.0270, 0.3322, 0.6574, 0.5190, 0.0591, 0.3468],
]
_EX52_A2 = [
    [-0.1620, -0.7600, 0.2185, 0.6680, -0.0869, 0.2811],
    [0.3548, 1.1226, -0.1035, 0.0191, 0.8869, -0.1554],
    [-0.0062, -0.1772, -0.5372, -0.1446, 0.4768, -0.2087],
    [0.1849, -0.5384, 0.2619, 0.4180, -0.8080, 0.7966],
    [1.0530, -0.2093, -0.4522, -0.6498, -0.9190, 0.9116],
    [0.2829, 0.0122, -0.0370, 0.0390, -0.0724, -0.0892],
]
_EX52_A3 = [
    [2.4775, 1.0257, 1.5891, 0.8326, -1.3239, 1.7045],
    [-0.3964, 1.2449, -0.4890, -1.5695, -0.8312, 0.5800],
    [-2.2922, 2.2344, -2.0149, -0.2128, 0.6352, 2.5780],
    [0.1915, 1.4213, -0.8818, 1.5595, -1.1228, -1.1024],
    [0.8404, 0.6028, -1.7115, -0.7325, -1.8020, 2.0994],
    [0.8771, 1.2225, -0.6453, -2.3762, 2.2157, 0.2430],
]
_EX52_B = [
    [-0.7928, -0.1048, 1.7634],
    [0.3175, 0.8241, -0.0609],
    [0.3013, -1.0316, -0.1341],
    [0.8311, -1.2573, 0.5240],
    [-2.4712, 0.2176, 0.0554],
    [0.4338, -0.4529, 1.1995],
]
_EX52_C = [
    [1.5959, -0.8172, 0.7905, 1.9030, -0.3477, -0.9110],
    [-0.0133, 0.1929, 0.4005, -1.1900, -0.2924, -0.5558],
]


def ex52() -> DelaySystem:
    return DelaySystem(A=(_EX52_A0, _EX52_A1, _EX52_A2, _EX52_A3), delays=(0.11, 0.21, 1.0),
                       B=_EX52_B, C=_EX52_C)


def ex52_gains(T: float | None = None) -> PidGains:
    Kp = [[2.8615, 10.5346], [3.9254, 5.3124], [-3.9750, 13.8184]]
    Kd = [[1.7447, -5.2424], [4.7113, 3.9833], [0.9434, 12.2535]]
    Ki = [[0.6519, 0.0412], [2.3498, -2.5687], [1.0265, 1.5849]]
    return PidGains(Kp, Kd, Ki, T)


# Iz is 1.51e-2; the printed "151e-2" leaves the bundled controllers unstable
# with rho(B Kd C) = 0.388, while 1.51e-2 reproduces rho = 0.4925 and the four
# fast roots near (lambda_i - 1)/T.
QUAD_PARAMS = dict(g=9.8, m=1.32, b=1.5108e-5, l=0.214, Ix=9.3e-3, Iy=9.2e-3,
                   Iz=1.51e-2, d=4.406e-7)


def quadcopter(input_delay: float | None = None, **params) -> DelaySystem:
    """Hover linearization; the thrust row uses the hover speed Omega0 = sqrt(m g / (4 b)).

    Keyword arguments override entries of ``QUAD_PARAMS``.
    """
    P = dict(QUAD_PARAMS, **params)
    g, m, b, l, d = P["g"], P["m"], P["b"], P["l"], P["d"]
    omega0 = np.sqrt(m * g / (4 * b))
    theta0 = omega0  # the thrust row's Theta0 is taken equal to Omega0
    A = np.zeros((12, 12))
    A[0:3, 3:6] = np.eye(3)
    A[3:6, 6:9] = [[0, -g, 0], [g, 0, 0], [0, 0, 0]]
    A[6:9, 9:12] = np.eye(3)
    B = np.zeros((12, 4))
    B[5, :] = -2 * b * theta0 / m
    kx = 2 * l * b * omega0 / P["Ix"]
    ky = 2 * l * b * omega0 / P["Iy"]
    kz = 2 * d * omega0 / P["Iz"]
    B[9, :] = [0, kx, 0, -kx]
    B[10, :] = [ky, 0, -ky, 0]
    B[11, :] = [-kz, kz, -kz, kz]
    C = np.zeros((8, 12))
    C[0:3, 0:3] = np.eye(3)
    C[3, 3:6] = 1.0
    C[4:7, 6:9] = np.eye(3)
    C[7, 11] = 1.0
    return DelaySystem(A=(A,), delays=(), B=B, C=C, input_delay=input_delay)


def quadcopter_gains(which: int = 1, T: float | None = None) -> PidGains:
    """``which=1``: state-delay-free design; ``which=2``: the input-delay redesign."""
    if which == 1:
        Kp = [[-5.4621, -37.8386, 50.3201, 2.2475, -81.8761, -81.3841, 20.7403, 20.9480],
              [-43.1886, -19.1534, 28.1863, -49.3413, -5.5520, -3.2277, -23.3179, -28.9068],
              [-13.8907, -20.9904, 43.0970, 3.3196, 66.3708, 64.3681, 32.7644, 44.4112],
              [17.0573, 7.0390, 9.8189, 73.1320, 21.4069, 16.2811, -22.8678, -12.1369]]
        Kd = [[2.6020, -35.2924, 30.7326, 4.6261, -26.2670, -44.9325, 19.4149, 11.9269],
              [-46.6939, -28.3477, 24.5842, -47.1050, -52.6639, 0.5357, -26.7642, -12.0257],
              [-25.7283, 5.1204, 21.7455, 16.7965, 19.4925, 48.8419, 43.1543, -1.4350],
              [33.9343, 13.0930, 26.7705, 62.2667, 45.2039, -3.5705, -10.7538, 8.9672]]
        Ki = [[20.3716, -4.9418, 23.0753, 9.2952, -5.5020, -0.1435, 10.1706, 20.7039],
              [-15.7922, -15.7094, -12.4776, -32.2340, -5.9862, 5.4981, -16.9445, -23.1467],
              [-35.2062, 0.9211, 1.7405, 6.6778, 0.9162, 1.9864, 11.1697, 32.2109],
              [-6.5286, 10.7784, -21.8867, 36.4701, 0.9330, -2.7628, -24.3316, -23.2082]]
    elif which == 2:
        Kp = [[16.6430, -63.3128, 62.1810, 4.4335, -66.8876, -68.0598, 16.3207, 16.5152],
              [-50.8533, -19.3299, 30.2406, -36.1548, -9.8565, -12.9958, -31.7057, -26.1467],
              [-50.0849, 5.6587, 42.9924, 13.2329, 58.8861, 52.4494, 55.4277, 42.7279],
              [10.3170, 15.6469, 8.9039, 75.0145, 19.3511, 16.4770, -32.1567, -8.2343]]
        Kd = [[24.1572, -13.2747, 29.8087, 17.3038, 4.6970, -33.3402, 5.7379, -1.0075],
              [-25.7786, 4.0052, -9.0192, -1.2406, -19.6114, -13.1057, -14.1845, -4.0257],
              [-44.9690, 8.0431, 14.2946, 8.2878, 6.5073, 0.3612, 9.4864, -1.4291],
              [-16.8650, -2.2785, 3.3891, 26.6494, 11.8299, -24.9899, -20.4291, -1.1029]]
        Ki = [[3.7628, -33.6333, 37.4261, 13.1179, -27.1173, -45.3188, 15.8870, 7.5073],
              [-45.3248, -37.6528, 26.1769, -52.8919, -50.6522, 1.5547, -25.0178, -20.4135],
              [-18.7744, -0.9240, 14.8563, 7.1468, 20.2193, 49.8381, 41.4465, 21.2283],
              [28.9560, 27.5731, 27.6152, 63.2191, 43.8716, -2.5157, -6.3298, -0.3217]]
    else:
        raise ValueError("quadcopter gain set must be 1 or 2")
    return PidGains(Kp, Kd, Ki, T)


SYSTEMS = {
    "2nd": second_order,
    "3rd": third_order,
    "ex52": ex52,
    "quadcopter": quadcopter,
}

GAIN_SETS = {
    "2nd": {"pd": lambda: PidGains.siso(-1.0, -2.0)},
    "3rd": {
        "pd_m2_m2": lambda: PidGains.siso(-2.0, -2.0),
        "ex51_constrained": lambda: PidGains.siso(-1.08015, -1.04045),
        "ex51_unconstrained": lambda: PidGains.siso(1.26832, 1.01777),
    },
    "ex52": {"designed": lambda: ex52_gains(T=1e-7)},
    "quadcopter": {
        "designed": lambda: quadcopter_gains(1, T=1e-6),
        "input_delay": lambda: quadcopter_gains(2, T=1e-6),
    },
}
