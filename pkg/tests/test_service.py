from concurrent.futures import ThreadPoolExecutor

import pytest
from fastapi.testclient import TestClient

from gaussvdb.formats import write_grid_file
from gaussvdb.service import create_app
from gaussvdb.sparse_grid import SparseGrid

from conftest import CAMERA_DOC, CONFIG_DOC, make_dense_grid


@pytest.fixture()
def data_dir(tmp_path):
    d = tmp_path / "data"
    d.mkdir()
    return d


@pytest.fixture()
def client(data_dir):
    write_grid_file(make_dense_grid(64), data_dir / "dense64.svdb")
    small = SparseGrid(name="tiny")
    small.set_voxel((0, 0, 0), 0.5)
    write_grid_file(small, data_dir / "tiny.svdb")
    return TestClient(create_app(data_dir))


def render_body(dataset="dense64", lod="low", **config_overrides):
    return {
        "dataset": dataset,
        "lod": lod,
        "camera": dict(CAMERA_DOC),
        "config": dict(CONFIG_DOC, **config_overrides),
    }


def test_datasets_empty_dir(data_dir):
    client = TestClient(create_app(data_dir))
    r = client.get("/api/datasets")
    assert r.status_code == 200
    assert r.json() == []


def test_datasets_listing(client):
    r = client.get("/api/datasets")
    entries = {e["id"]: e for e in r.json()}
    assert set(entries) == {"dense64", "tiny"}
    assert entries["dense64"]["voxels"] == 64**3
    assert entries["dense64"]["leaf_count"] == 512
    assert entries["dense64"]["grid_class"] == "volume"


def test_datasets_corrupt_file_flagged(data_dir):
    (data_dir / "broken.svdb").write_bytes(b"garbage")
    write_grid_file(make_dense_grid(8), data_dir / "fine.svdb")
    client = TestClient(create_app(data_dir))
    r = client.get("/api/datasets")
    assert r.status_code == 200
    entries = {e["id"]: e for e in r.json()}
    assert "error" in entries["broken"]
    assert "error" not in entries["fine"]


def test_extract_report_and_cache(client):
    r1 = client.post("/api/extract", json={"dataset": "dense64", "lod": "low"})
    assert r1.status_code == 200
    assert r1.headers["X-Cache"] == "miss"
    doc = r1.json()
    assert doc["gaussian_count"] == 512
    assert doc["grid_stats"]["active_voxels"] == 64**3

    r2 = client.post("/api/extract", json={"dataset": "dense64", "lod": "low"})
    assert r2.headers["X-Cache"] == "hit"
    assert r2.json() == doc


def test_extract_errors(client):
    assert client.post("/api/extract", json={"dataset": "nope", "lod": "low"}).status_code == 404
    assert client.post("/api/extract", json={"dataset": "tiny", "lod": "ultra"}).status_code == 400
    r = client.post("/api/extract", json={"dataset": "tiny", "lod": "low",
                                          "options": {"wat": 1}})
    assert r.status_code == 400


def test_render_png_and_determinism(client):
    body = render_body()
    r1 = client.post("/api/render", json=body)
    assert r1.status_code == 200
    assert r1.headers["content-type"] == "image/png"
    assert r1.content[:8] == b"\x89PNG\r\n\x1a\n"
    r2 = client.post("/api/render", json=body)
    assert r2.content == r1.content


def test_render_errors(client):
    assert client.post("/api/render", json=render_body(dataset="nope")).status_code == 404
    bad = render_body()
    bad["camera"]["width"] = 0
    assert client.post("/api/render", json=bad).status_code == 400
    worse = render_body()
    worse["camera"]["lens_mm"] = 50
    assert client.post("/api/render", json=worse).status_code == 400


def test_concurrent_renders_match_serial(client):
    body = render_body(lod="med")
    serial = client.post("/api/render", json=body).content

    def hit(_):
        return client.post("/api/render", json=body).content

    with ThreadPoolExecutor(max_workers=4) as pool:
        results = list(pool.map(hit, range(8)))
    assert all(r == serial for r in results)


def test_extract_lod_alias(client):
    r = client.post("/api/extract", json={"dataset": "dense64", "lod": "med"})
    assert r.status_code == 200
    assert r.json()["gaussian_count"] == 4096


def test_viewer_static_mount(tmp_path, data_dir):
    viewer = tmp_path / "viewer"
    viewer.mkdir()
    (viewer / "index.html").write_text("<html><body>viewer shell</body></html>")
    client = TestClient(create_app(data_dir, viewer_dir=viewer))
    r = client.get("/")
    assert r.status_code == 200
    assert "viewer shell" in r.text
    assert client.get("/api/datasets").status_code == 200
