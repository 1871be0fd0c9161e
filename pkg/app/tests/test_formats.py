"""Readers and writers for meshes, clouds, voxels, grids and datasets."""

import json

import numpy as np
import pytest

from models.field import FieldGrid
from models.geometry import PointCloud, VoxelVolume
from services.errors import FormatError, InvalidArgumentError, ParseError
from services.field_grid import init_grid
from services.formats import (
    decode_grid,
    encode_grid,
    format_pgm,
    format_voxels,
    format_xyz,
    load_run_config,
    parse_off,
    parse_voxels,
    parse_xyz,
    read_dataset,
    read_grid,
    write_dataset,
    write_grid,
    write_slices,
)
from services.synthetic import gen_synthetic_dataset

MINIMAL_OFF = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n"


class TestOff:
    def test_minimal(self):
        mesh = parse_off(MINIMAL_OFF)
        assert mesh.n_vertices == 3 and mesh.n_faces == 1
        assert mesh.faces.tolist() == [[0, 1, 2]]

    def test_counts_on_header_line_and_comments(self):
        text = "OFF 3 1 0\n# a comment\n0 0 0\n1 0 0\n\n0 1 0\n3 0 1 2 255 0 0\n"
        assert parse_off(text).n_faces == 1

    def test_quad_is_fan_triangulated(self):
        text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
        assert parse_off(text).faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_bad_index_reports_line(self):
        with pytest.raises(ParseError) as excinfo:
            parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n")
        assert excinfo.value.line == 6

    @pytest.mark.parametrize(
        "text",
        [
            "",
            "PLY\n",
            "OFF\n3 1 0\n0 0 0\n1 0 0\n",
            "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 1\n",
            "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n9 9 9\n",
            "OFF\n3 1 0\n0 0 x\n1 0 0\n0 1 0\n3 0 1 2\n",
        ],
    )
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            parse_off(text)


class TestXyz:
    def test_three_columns(self):
        cloud = parse_xyz("0 0 0\n1 2 3\n")
        assert cloud.points.tolist() == [[0, 0, 0], [1, 2, 3]]
        assert cloud.normals is None

    def test_six_columns_carry_normals(self):
        cloud = parse_xyz("0 0 1 0 0 1\n")
        assert cloud.normals.tolist() == [[0, 0, 1]]

    def test_two_columns_rejected(self):
        with pytest.raises(ParseError) as excinfo:
            parse_xyz("0 0 0\n0 0\n")
        assert excinfo.value.line == 2

    def test_mixed_arity_rejected(self):
        with pytest.raises(ParseError):
            parse_xyz("0 0 0\n0 0 0 1 0 0\n")

    def test_format_is_lossless(self, rng):
        cloud = PointCloud(points=rng.normal(size=(5, 3)))
        assert np.array_equal(parse_xyz(format_xyz(cloud)).points, cloud.points)


class TestVoxels:
    def test_single_voxel(self):
        vol = parse_voxels("VOXN 1\n1\n")
        assert vol.size == 1 and vol.occupancy[0, 0, 0]

    def test_row_layout(self):
        # row index = iz * N + iy, characters over ix
        vol = parse_voxels("VOXN 2\n01\n00\n00\n10\n")
        assert vol.occupancy[1, 0, 0] and vol.occupancy[0, 1, 1]
        assert vol.n_occupied == 2

    def test_format_reads_back(self, rng):
        vol = VoxelVolume.of(rng.random((3, 3, 3)) < 0.5)
        assert np.array_equal(parse_voxels(format_voxels(vol)).occupancy, vol.occupancy)

    def test_random_volumes_round_trip(self):
        rng = np.random.default_rng(10)
        for trial in range(100):
            vol = VoxelVolume.of(rng.random((8, 8, 8)) < rng.uniform(0.0, 1.0))
            again = parse_voxels(format_voxels(vol))
            assert np.array_equal(again.occupancy, vol.occupancy), f"trial {trial}"

    @pytest.mark.parametrize(
        "text,line",
        [("VOX 1\n1\n", 1), ("VOXN 2\n01\n0\n00\n00\n", 3), ("VOXN 1\n2\n", 2)],
    )
    def test_bad_rows(self, text, line):
        with pytest.raises(ParseError) as excinfo:
            parse_voxels(text)
        assert excinfo.value.line == line

    def test_row_count(self):
        with pytest.raises(ParseError):
            parse_voxels("VOXN 2\n00\n00\n00\n")


class TestGridFile:
    def test_default_size(self):
        data = encode_grid(FieldGrid(values=np.zeros((16, 16, 16, 32))))
        assert len(data) == 524304
        assert data[:4] == b"RASF"
        assert data[13:16] == b"\x00\x00\x00"

    def test_double_precision_is_exact(self, rng):
        grid = FieldGrid(values=rng.normal(size=(3, 3, 3, 2)))
        stored = decode_grid(encode_grid(grid, precision=8))
        assert stored.precision == 8
        assert np.array_equal(stored.grid.values, grid.values)

    def test_single_precision_rounds(self, small_grid):
        stored = decode_grid(encode_grid(small_grid))
        assert np.array_equal(
            stored.grid.values, small_grid.values.astype(np.float32).astype(np.float64)
        )
        assert stored.n_bytes == 16 + 4 * 4**3 * 3

    def test_random_grids_round_trip(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            r, c = int(rng.integers(2, 7)), int(rng.integers(1, 6))
            precision = int(rng.choice([4, 8]))
            values = rng.normal(scale=rng.uniform(0.01, 100.0), size=(r, r, r, c))
            if precision == 4:
                values = values.astype(np.float32).astype(np.float64)
            data = encode_grid(FieldGrid(values=values), precision)
            assert len(data) == 16 + precision * r**3 * c
            stored = decode_grid(data)
            assert (stored.resolution, stored.channels, stored.precision) == (r, c, precision)
            assert np.array_equal(stored.grid.values, values), f"trial {trial}"

    def test_bad_magic(self, small_grid):
        data = bytearray(encode_grid(small_grid))
        data[:4] = b"XXXX"
        with pytest.raises(FormatError):
            decode_grid(bytes(data))

    @pytest.mark.parametrize("cut", [10, 100])
    def test_truncated(self, small_grid, cut):
        with pytest.raises(FormatError):
            decode_grid(encode_grid(small_grid)[:cut])

    def test_bad_precision(self, small_grid):
        with pytest.raises(InvalidArgumentError):
            encode_grid(small_grid, precision=2)

    def test_file_write(self, tmp_path, small_grid):
        path = tmp_path / "nested" / "grid.bin"
        write_grid(path, small_grid, precision=8)
        assert np.array_equal(read_grid(path).values, small_grid.values)
        assert [p.name for p in path.parent.iterdir()] == ["grid.bin"]


class TestDataset:
    def test_write_then_read(self, tmp_path):
        shapes = gen_synthetic_dataset(2, 16, 0.0, seed=0)
        write_dataset(tmp_path, shapes)
        samples = read_dataset(tmp_path)
        assert [s.label for s in samples] == [0, 0, 1, 1, 2, 2]
        assert np.array_equal(samples[3].cloud.points, shapes[3].cloud.points)
        assert np.array_equal(samples[3].cloud.normals, shapes[3].normals)

    def test_unlabelled_directory(self, tmp_path):
        (tmp_path / "b.xyz").write_text("0 0 0\n1 1 1\n")
        (tmp_path / "a.xyz").write_text("2 2 2\n3 3 3\n")
        samples = read_dataset(tmp_path)
        assert samples[0].cloud.points[0].tolist() == [2, 2, 2]
        assert all(s.label is None for s in samples)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            read_dataset(tmp_path / "nope")

    def test_bad_label(self, tmp_path):
        (tmp_path / "labels.csv").write_text("file,label\na.xyz,cube\n")
        with pytest.raises(ParseError) as excinfo:
            read_dataset(tmp_path)
        assert excinfo.value.line == 2


class TestImages:
    def test_pgm_scaling(self):
        text, lo, hi = format_pgm(np.array([[0.0, 1.0], [2.0, 4.0]]))
        assert text == "P2\n2 2\n255\n0 64\n128 255\n"
        assert (lo, hi) == (0.0, 4.0)

    def test_flat_image(self):
        text, _, _ = format_pgm(np.full((1, 3), 7.0))
        assert text.endswith("0 0 0\n")

    def test_slices(self, tmp_path, small_grid):
        slices = small_grid.values.max(axis=2).transpose(2, 0, 1)
        written = write_slices(tmp_path, slices, "z")
        assert len(written) == 2 * 3 + 1
        assert (tmp_path / "slice_z_c02.pgm").read_text().startswith("P2\n4 4\n255\n")
        assert (tmp_path / "ranges.txt").read_text().splitlines()[0] == "channel,min,max"


class TestRunConfig:
    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"resolution": 8, "epochs": 3, "task": "supervised"}))
        cfg = load_run_config(path, channels=4, resolution=None)
        assert cfg.resolution == 8 and cfg.channels == 4
        assert cfg.pretext.epochs == 3 and cfg.pretext.task == "supervised"

    def test_bad_json_reports_line(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text('{\n  "resolution": 8,\n}\n')
        with pytest.raises(ParseError) as excinfo:
            load_run_config(path)
        assert excinfo.value.line == 3

    def test_invalid_value(self):
        with pytest.raises(InvalidArgumentError):
            load_run_config(None, resolution=1)

    def test_grid_defaults(self):
        cfg = load_run_config()
        grid = init_grid(cfg.resolution, cfg.channels)
        assert grid.values.shape == (16, 16, 16, 32)
