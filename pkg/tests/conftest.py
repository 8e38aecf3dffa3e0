import os
from datetime import date

import numpy as np
import pandas as pd
import pytest

from exposure_panel.panel_core import PanelDataset, PostingRecord
from exposure_panel.spatial_stats import lattice_weights
from exposure_panel.synthetic_oracle import SyntheticSpec, gen_did_panel, gen_interaction_panel


def make_posting(posting_id, neighborhood_id='N1', posting_date=date(2018, 3, 5), company_id='C1',
                 occupation_code='OCC1', industry_code='A', compensation=120_000.0,
                 education='bachelor'):
    return PostingRecord(
        posting_id=posting_id, company_id=company_id, neighborhood_id=neighborhood_id,
        posting_date=posting_date, occupation_code=occupation_code, industry_code=industry_code,
        compensation_total_annual=compensation, education_requirement=education,
    )


@pytest.fixture
def posting():
    return make_posting


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope='session')
def did_panel():
    panel, truth = gen_did_panel(SyntheticSpec(n_entities=80, seed=7))
    return panel, truth


@pytest.fixture(scope='session')
def interaction_panel():
    panel, truth = gen_interaction_panel(SyntheticSpec(n_entities=80, seed=11))
    return panel, truth


@pytest.fixture
def toy_panel():
    """Three entities over 2020-2024 with the treatment switched on in 2023"""
    rows = []
    treatment = {'A': 1.0, 'B': 0.0, 'C': -1.0}
    shift = {'A': 0.0, 'B': 0.3, 'C': -0.2}
    noise = [0.01, -0.02, 0.015, 0.0, -0.01, 0.02, -0.015, 0.005, 0.01, -0.005, 0.0, 0.02, -0.01, 0.01, -0.02]
    k = 0
    for entity in ('A', 'B', 'C'):
        for year in range(2020, 2025):
            post = 1.0 if year >= 2023 else 0.0
            rows.append({
                'entity_id': entity, 'year': year, 'genai_2018': treatment[entity],
                'ln_avg_wage': 9.0 + shift[entity] + 0.05 * (year - 2020) - 0.2 * treatment[entity] * post + noise[k],
            })
            k += 1
    return PanelDataset.from_frame(pd.DataFrame(rows))


@pytest.fixture(scope='session')
def lattice6():
    return lattice_weights(6, 6, 'queen')


@pytest.fixture
def write_csv(tmp_path):
    def _write(name, frame):
        path = os.path.join(str(tmp_path), name)
        frame.to_csv(path, index=False)
        return path
    return _write
