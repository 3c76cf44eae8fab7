"""Small reference models used for testing and for the toy identification study."""

from __future__ import annotations

import numpy as np

from .ssm import FunctionModel, ParameterSpace


def linear_gaussian_model(a: float = 0.9, x0: float = 0.0) -> FunctionModel:
    """Scalar ``x_k = a x_{k-1} + u_k``, ``z_k = x_k``; ``a`` may also come from theta."""

    def f(x, u, theta):
        gain = a if theta is None or np.size(theta) == 0 else np.asarray(theta).ravel()[0]
        return gain * x + u[0]

    def h(x, u, theta):
        return x

    return FunctionModel(f, h, 1, 1, 1, x0=[x0])


class LogisticModel(FunctionModel):
    """Forced logistic growth ``x_k = r x (1 - x / K) + b u_k``, observed directly.

    ``theta = (r, K, b)``.
    """

    param_names = ("growth_rate", "capacity", "input_gain")

    def __init__(self, x0: float = 0.5):
        super().__init__(self._f, self._h, 1, 1, 1, x0=[x0])

    @staticmethod
    def _f(x, u, theta):
        r, K, b = theta
        return r * x * (1.0 - x / K) + b * u[0]

    @staticmethod
    def _h(x, u, theta):
        return x


LOGISTIC_TRUE = np.array([1.5, 2.0, 0.5])
LOGISTIC_SPACE = ParameterSpace(LogisticModel.param_names, [0.5, 1.0, 0.0], [2.5, 4.0, 1.5])
LOGISTIC_Q = 1e-4
LOGISTIC_R = 2.5e-3

MODELS = {"logistic": LogisticModel, "linear": linear_gaussian_model}
