"""Analytic targets shared by the inference tests."""

import numpy as np


class GaussianTarget:
    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, float)
        self.cov = np.asarray(cov, float)
        self.prec = np.linalg.inv(self.cov)
        self.dim = len(self.mean)
        self.param_names = [f"x{i}" for i in range(self.dim)]

    def logp_and_grad(self, x):
        d = x - self.mean
        g = -self.prec @ d
        return 0.5 * float(d @ g), g

    def initial_points(self, count, rng):
        return [rng.normal(0.0, 3.0, self.dim) for _ in range(count)]
