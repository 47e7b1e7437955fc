"""Shared long-running fits, trained once per session and only on demand."""

import functools
import logging
import time

import pytest

from dpdiscover import pinn_ekenstam as pe
from dpdiscover import pinn_emsley as pm
from dpdiscover.data import add_noise, make_ekenstam_dataset
from dpdiscover.kinetics import REFERENCE_EKENSTAM

NOISE_SEED = 0  # one noisy realisation per level, shared by every training seed
log = logging.getLogger("dpdiscover.tests")


class EkenstamFits:
    def __init__(self):
        self.clean = make_ekenstam_dataset(REFERENCE_EKENSTAM, 24, 40)

    @functools.lru_cache(maxsize=None)
    def get(self, noise_pct: int, seed: int):
        series = self.clean if noise_pct == 0 else add_noise(self.clean, noise_pct / 100.0, NOISE_SEED)
        start = time.perf_counter()
        fit = pe.train(series, pe.EkenstamInverseConfig(seed=seed))
        log.info("ekenstam noise=%d%% seed=%d in %.0fs", noise_pct, seed, time.perf_counter() - start)
        return fit, pe.metrics(fit, REFERENCE_EKENSTAM)


class EmsleyFits:
    def __init__(self):
        self.seconds = {}

    @functools.lru_cache(maxsize=None)
    def get(self, seed: int):
        start = time.perf_counter()
        fit = pm.train(pm.EmsleyInverseConfig(seed=seed))
        self.seconds[seed] = time.perf_counter() - start
        return fit, pm.metrics(fit)


@pytest.fixture(scope="session")
def ekenstam_fits():
    return EkenstamFits()


@pytest.fixture(scope="session")
def emsley_fits():
    return EmsleyFits()
