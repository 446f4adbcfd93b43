import numpy as np
import pytest

from core.config import GLMM_THETA_TRUE
from core.errors import IngestionError
from core.sixcity import COLUMNS, load_sixcity, synth_sixcity, write_sixcity

HEADER = ",".join(COLUMNS)


def _write(tmp_path, text):
    path = tmp_path / "sixcity.csv"
    path.write_text(text)
    return path


def test_synthetic_table_shape():
    data = synth_sixcity(GLMM_THETA_TRUE, seed=4, n_individuals=50)
    assert data.n_individuals == 50
    assert data.n_visits == 4
    assert set(np.unique(data.y)) <= {0, 1}
    assert set(np.unique(data.smoking)) <= {0.0, 1.0}
    assert np.array_equal(data.age[0], [-2.0, -1.0, 0.0, 1.0])
    # Wheeze is rare at β1 = -3.1.
    assert data.y.mean() < 0.3


def test_synthetic_table_is_seeded():
    a = synth_sixcity(GLMM_THETA_TRUE, seed=9, n_individuals=20)
    b = synth_sixcity(GLMM_THETA_TRUE, seed=9, n_individuals=20)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.smoking, b.smoking)


def test_write_then_load(tmp_path, glmm_data):
    loaded = load_sixcity(write_sixcity(glmm_data, tmp_path / "out" / "six.csv"))
    assert loaded.ids == glmm_data.ids
    assert np.array_equal(loaded.y, glmm_data.y)
    assert np.array_equal(loaded.age, glmm_data.age)
    assert np.array_equal(loaded.smoking, glmm_data.smoking)


def test_rows_may_arrive_in_any_order(tmp_path):
    text = "\n".join([
        HEADER,
        "2,2,0,0.5,1", "1,2,1,0.5,0", "2,1,1,-0.5,1", "1,1,0,-0.5,0",
    ])
    data = load_sixcity(_write(tmp_path, text))
    assert data.ids == [1, 2]
    assert data.y.tolist() == [[0, 1], [1, 0]]
    assert data.smoking.tolist() == [0.0, 1.0]


@pytest.mark.parametrize(
    "body, fragment",
    [
        ("", "empty"),
        ("id,visit,y\n1,1,0", "header"),
        (HEADER, "no data rows"),
        (HEADER + "\n1,1,0,0.0", "row 1"),
        (HEADER + "\n1,1,2,0.0,0", "y must be 0 or 1"),
        (HEADER + "\n1,1,0,0.0,0\n1,1,1,0.0,0", "duplicate visit"),
        (HEADER + "\n1,1,0,0.0,0\n1,2,1,0.0,1", "smoking changes"),
        (HEADER + "\n1,1,0,0.0,0\n1,2,0,1.0,0\n2,1,0,0.0,1", "missing visits"),
        (HEADER + "\n1,1,x,0.0,0", "unparseable"),
    ],
)
def test_ingestion_errors(tmp_path, body, fragment):
    with pytest.raises(IngestionError, match=fragment):
        load_sixcity(_write(tmp_path, body))


def test_error_row_numbers_count_data_rows(tmp_path):
    text = HEADER + "\n1,1,0,0.0,0\n1,2,0,1.0,0\n1,3,5,2.0,0"
    with pytest.raises(IngestionError, match="row 3: "):
        load_sixcity(_write(tmp_path, text))


def test_missing_file_is_an_ingestion_error(tmp_path):
    missing = tmp_path / "nope.csv"
    with pytest.raises(IngestionError, match="cannot read") as info:
        load_sixcity(missing)
    assert str(missing) in str(info.value)
    with pytest.raises(IngestionError, match="cannot read"):
        load_sixcity(tmp_path)
