import json

import numpy as np
import pandas as pd
import pytest

from corrugation.errors import ConfigError, PreconditionError
from corrugation.export import (
    dump_json,
    export_mesh,
    export_report,
    field_slice_csv,
    load_field,
    quad_faces,
    report_tables,
    save_field,
    write_table,
)
from corrugation.fields import ScalarField
from corrugation.verify import LadderFit


def test_field_container(tmp_path, flat_map):
    paths = save_field(flat_map, tmp_path / "u")
    header = json.loads(paths["json"].read_text())
    assert header["kind"] == "map"
    assert header["value_shape"] == [8]
    assert paths["bin"].stat().st_size == 64 * 64 * 8 * 8
    loaded = load_field(tmp_path / "u")
    np.testing.assert_array_equal(loaded.values, flat_map.values)
    assert loaded.grid == flat_map.grid


def test_tampered_container_fails_its_checksum(tmp_path, unit_grid):
    f = ScalarField(unit_grid, np.ones(unit_grid.shape))
    paths = save_field(f, tmp_path / "rho")
    raw = bytearray(paths["bin"].read_bytes())
    raw[0] ^= 0xFF
    paths["bin"].write_bytes(bytes(raw))
    with pytest.raises(ConfigError):
        load_field(tmp_path / "rho")


def test_unknown_kind_is_refused(tmp_path, unit_grid):
    paths = save_field(ScalarField(unit_grid, np.zeros(unit_grid.shape)), tmp_path / "z")
    header = json.loads(paths["json"].read_text())
    header["kind"] = "spinor"
    paths["json"].write_text(json.dumps(header))
    with pytest.raises(ConfigError):
        load_field(tmp_path / "z")


def test_quad_faces_count():
    assert quad_faces((4, 5), (False, False)).shape == (24, 3)
    assert quad_faces((4, 5), (True, True)).shape == (40, 3)
    faces = quad_faces((4, 5), (True, False))
    assert faces.max() == 19


def test_obj_export(tmp_path, flat_map):
    path = export_mesh(flat_map, tmp_path / "flat.obj")
    lines = path.read_text().splitlines()
    assert sum(line.startswith("v ") for line in lines) == 64 * 64
    assert sum(line.startswith("f ") for line in lines) == 2 * 63 * 63


@pytest.mark.parametrize("projection", [(0, 0, 1), (0, 1, 9), (0, 1)])
def test_bad_projection(tmp_path, flat_map, projection):
    with pytest.raises(PreconditionError):
        export_mesh(flat_map, tmp_path / "bad.obj", projection)


def test_empty_report(tmp_path):
    written = export_report(None, tmp_path, "empty")
    assert list(written) == ["json"]
    assert report_tables(None) == {}


def test_ladder_tables(tmp_path):
    fit = LadderFit(
        lams=[50.0, 100.0],
        measured={"E_c0": [1e-3, 5e-4], "v_minus_u_c0": [1e-4, 3e-5], "v_c2": [10.0, 28.0], "v_minus_u_c1": [0.3, 0.31]},
        slopes={"E_c0": -1.0, "v_minus_u_c0": -1.7, "v_c2": 1.5, "v_minus_u_c1": 0.05},
        expected={"E_c0": -1.0, "v_minus_u_c0": -1.5, "v_c2": 1.5, "v_minus_u_c1": 0.0},
        c1_spread=1.03,
    )
    written = export_report(fit, tmp_path, "ladder")
    table = pd.read_csv(written["ladder"])
    assert list(table["lam"]) == [50.0, 100.0]
    assert "slope_E_c0" in table.columns
    assert (tmp_path / "ladder.json").exists()


def test_tables_use_the_fixed_float_format(tmp_path):
    path = write_table([{"a": 0.5}], tmp_path / "t.csv")
    assert path.read_text() == "a\n5.000000000000e-01\n"


def test_json_is_byte_stable(tmp_path):
    a = dump_json({"b": 1, "a": [1.5, 2]}, tmp_path / "a.json").read_bytes()
    b = dump_json({"a": [1.5, 2], "b": 1}, tmp_path / "b.json").read_bytes()
    assert a == b
    assert a.endswith(b"\n")


def test_slice_table(tmp_path, flat_map):
    table = pd.read_csv(field_slice_csv(flat_map, tmp_path / "slice.csv"))
    assert len(table) == 64
    assert list(table.columns[:3]) == ["x", "c0", "c1"]
