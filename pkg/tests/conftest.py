import numpy as np
import pandas as pd
import pytest

from nosmodel.checks import toy_posterior


def obs_frame(rows):
    """Observation table from dicts, filling optional columns with defaults."""
    defaults = {
        "indicator": "primary_proportion",
        "se_proportion": 0.01,
        "n_eff": np.nan,
        "char_mismatch": False,
        "documented_concern": False,
        "pma_series_id": "",
    }
    records = []
    for i, r in enumerate(rows, start=1):
        rec = {"id": i, **defaults, **r}
        if rec["source_type"] == "PMA" and not rec["pma_series_id"]:
            rec["pma_series_id"] = "S1"
        records.append(rec)
    return pd.DataFrame(records)


@pytest.fixture
def make_frame():
    return obs_frame


@pytest.fixture(scope="session")
def toy_model():
    return toy_posterior(0)
