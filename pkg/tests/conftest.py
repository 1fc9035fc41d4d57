import pytest

from pairgram import autodiff


@pytest.fixture(autouse=True)
def _nan_checks_on():
    # surface NaN/+inf in every op while testing; trainers switch it off
    autodiff.set_nan_checks(True)
    yield
    autodiff.set_nan_checks(False)
