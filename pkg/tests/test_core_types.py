import io

import numpy as np
import pytest

from scorefim import Dataset, Design, IndividualRecord, ParamVector
from scorefim.data import dataset_to_csv_string, read_dataset_csv, write_dataset_csv
from scorefim.errors import ConfigError, DimensionMismatch, DomainViolation


def test_param_vector_basic():
    theta = ParamVector(np.array([3.0, 2.0, 5.0]), ("beta", "eta2", "sigma2"))
    assert theta.p == 3
    assert theta["eta2"] == 2.0
    assert theta.scales[0] == 3.0 and theta.scales[1] == 2.0
    with pytest.raises(DimensionMismatch):
        ParamVector(np.array([1.0, 2.0]), ("a",))


def test_param_vector_immutable():
    theta = ParamVector(np.array([1.0]), ("a",))
    with pytest.raises(ValueError):
        theta.values[0] = 2.0


def test_record_invariants():
    with pytest.raises(DomainViolation):
        IndividualRecord(y=np.array([1.0, 2.0]), times=np.array([2.0, 1.0]))
    with pytest.raises(DomainViolation):
        IndividualRecord(y=np.array([1.0]), times=np.array([1.0]), dose=-3.0)
    with pytest.raises(DimensionMismatch):
        IndividualRecord(y=np.array([]))


def test_dataset_needs_individuals():
    with pytest.raises(DimensionMismatch):
        Dataset(())


def test_dataset_csv_roundtrip():
    records = (
        IndividualRecord(y=np.array([1.25, -2.5]), times=np.array([0.5, 1.0]), dose=320.0),
        IndividualRecord(y=np.array([0.0, 3.125]), times=np.array([0.5, 1.0]), dose=320.0),
    )
    ds = Dataset(records, latent_truth=np.array([[0.1], [0.2]]))
    text = dataset_to_csv_string(ds)
    assert text.splitlines()[0] == "individual,obs_index,time,dose,y"
    back = read_dataset_csv(io.StringIO(text))
    assert back.n == 2
    np.testing.assert_array_equal(back.records[0].y, ds.records[0].y)
    np.testing.assert_array_equal(back.records[1].times, ds.records[1].times)
    assert back.records[0].dose == 320.0
    assert back.latent_truth is None  # estimators never see the truth


def test_dataset_csv_empty_design_columns():
    ds = Dataset((IndividualRecord(y=np.array([4.0, 5.0])),))
    text = dataset_to_csv_string(ds)
    line = text.splitlines()[1].split(",")
    assert line[2] == "" and line[3] == ""
    back = read_dataset_csv(io.StringIO(text))
    assert back.records[0].times is None and back.records[0].dose is None


def test_dataset_csv_rejects_garbage():
    with pytest.raises(ConfigError):
        read_dataset_csv(io.StringIO("a,b\n1,2\n"))


def test_design_validation():
    with pytest.raises(DomainViolation):
        Design(n=0)
