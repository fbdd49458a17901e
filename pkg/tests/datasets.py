"""Locating optional real datasets for the tests."""

import os

MICE_ENV = "LASSONET_MICE_CSV"
MICE_DEFAULT = os.path.join(os.path.dirname(__file__), "..", "data", "Data_Cortex_Nuclear.csv")


def mice_csv():
    """Path to a CSV export of the MICE Protein Expression data, or None if absent."""
    path = os.environ.get(MICE_ENV) or MICE_DEFAULT
    return path if os.path.isfile(path) else None
