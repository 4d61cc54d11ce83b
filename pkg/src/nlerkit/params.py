"""Working-parameter spaces for the case studies.

All training, finite differencing, score targets and network inputs use
*working* coordinates (log-scale transforms of the raw rates / length
scales). A space carries the base bounds plus two margins:

* the train margin widens the box used for training-data generation,
* the E-test margin shrinks the box used for downstream-inference grids.

A margin fraction ``m`` on a coordinate of width ``w`` moves each edge by
``m * w / 4`` (the margin is ``m`` of the half-width, split equally between
the two edges), e.g. bounds [-1, 1] with a 20% train margin train on
[-1.1, 1.1] and with a 40% E-test margin evaluate on [-0.8, 0.8].
"""

from dataclasses import dataclass

import numpy as np

_TRANSFORMS = {
    "identity": (lambda w: w, lambda r: r),
    "log": (np.exp, np.log),
    "log_offset2": (lambda w: 2.0 + np.exp(w), lambda r: np.log(r - 2.0)),
}


@dataclass(frozen=True)
class ParameterSpace:
    names: tuple
    bounds: np.ndarray  # [d, 2] working coordinates
    train_margin: float
    etest_margin: float
    transforms: tuple  # per-coordinate key into _TRANSFORMS

    @property
    def dim(self):
        return len(self.names)

    def base_box(self):
        return np.array(self.bounds, dtype=np.float64)

    def train_box(self):
        box = self.base_box()
        delta = self.train_margin * (box[:, 1] - box[:, 0]) / 4.0
        box[:, 0] -= delta
        box[:, 1] += delta
        return box

    def etest_box(self):
        box = self.base_box()
        delta = self.etest_margin * (box[:, 1] - box[:, 0]) / 4.0
        box[:, 0] += delta
        box[:, 1] -= delta
        return box

    def to_raw(self, working):
        working = np.asarray(working, dtype=np.float64)
        return np.array(
            [_TRANSFORMS[t][0](working[..., k]) for k, t in enumerate(self.transforms)]
        ).T if working.ndim > 1 else np.array(
            [_TRANSFORMS[t][0](working[k]) for k, t in enumerate(self.transforms)]
        )

    def to_working(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        return np.array([_TRANSFORMS[t][1](raw[k]) for k, t in enumerate(self.transforms)])


def sis_space():
    return ParameterSpace(
        names=("log_lambda", "log_mu"),
        bounds=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        train_margin=0.2,
        etest_margin=0.4,
        transforms=("log", "log"),
    )


def gp_space():
    return ParameterSpace(
        names=("log_lx", "log_ly", "log_eps"),
        bounds=np.array([[-1.0, 1.0], [-1.0, 1.0], [-4.0, -1.0]]),
        train_margin=0.1,
        etest_margin=0.4,
        transforms=("log", "log", "log"),
    )


def stp_space():
    return ParameterSpace(
        names=("log_lx", "log_ly", "log_nu_minus_2"),
        bounds=np.array([[-1.0, 1.0], [-1.0, 1.0], [-2.0, 3.0]]),
        train_margin=0.1,
        etest_margin=0.4,
        transforms=("log", "log", "log_offset2"),
    )


def toy_space():
    return ParameterSpace(
        names=("theta",),
        bounds=np.array([[-2.0, 2.0]]),
        train_margin=0.0,
        etest_margin=0.0,
        transforms=("identity",),
    )
