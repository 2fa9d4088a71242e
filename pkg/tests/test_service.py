import io
import json
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from scenestage.blobio import decode_f32_blob
from scenestage.denoiser import AttentionMode, KVRecord, ToyDenoiser, embed_prompt
from scenestage.geometry import default_camera, make_scene, scene_to_dict
from scenestage.service import (
    BackendDescriptor,
    BackendError,
    CapabilityError,
    EpsPrediction,
    ExternalModel,
    FifoLock,
    PredictRequest,
    backend_predict,
    create_app,
    mode_from_wire,
    mode_to_wire,
    prediction_from_wire,
    predict_request_from_wire,
    predict_request_to_wire,
)

FIXTURES = Path(__file__).parent / "fixtures"

SCENE = scene_to_dict(make_scene((4.0, 3.0, 6.0), default_camera(64, 64)))
CONFIG = {"timesteps": 3, "resolution": 64}
CRATE = {"id": "crate", "center": [0.0, 0.5, 3.0], "size": [1.0, 1.0, 1.0]}


@pytest.fixture()
def client(tmp_path):
    return TestClient(create_app(tmp_path / "store"))


def make_session(client, config=CONFIG):
    r = client.post("/sessions", json={"scene": SCENE, "config": config})
    assert r.status_code == 201, r.text
    return r.json()["id"]


def add(client, sid, box=None, text="a room", **extra):
    body = {"prompt": {"text": text}, **extra}
    if box is not None:
        body["box"] = box
    return client.post(f"/sessions/{sid}/stages:add", json=body)


def wait_job(client, job_id, deadline=30.0):
    end = time.time() + deadline
    while time.time() < end:
        state = client.get(f"/jobs/{job_id}").json()
        if state["status"] in ("done", "error"):
            return state
        time.sleep(0.02)
    raise AssertionError(f"job {job_id} did not finish")


def sse_events(client, job_id, **params):
    with client.stream("GET", f"/jobs/{job_id}/events", params=params) as resp:
        assert resp.headers["content-type"].startswith("text/event-stream")
        text = "".join(resp.iter_text())
    events = []
    for block in text.strip().split("\n\n"):
        fields = dict(line.split(": ", 1) for line in block.splitlines())
        events.append((int(fields["id"]), json.loads(fields["data"])))
    return events


# --- session lifecycle --------------------------------------------------------


def test_create_session_returns_handle(client):
    r = client.post("/sessions", json={"scene": SCENE, "config": CONFIG})
    assert r.status_code == 201
    handle = r.json()
    assert handle["stage_count"] == 0
    assert handle["config"]["timesteps"] == 3
    assert handle["created_at"] > 0


def test_duplicate_creates_get_distinct_ids(client):
    a = make_session(client)
    b = make_session(client)
    assert a != b


def test_create_retry_with_operation_key_is_idempotent(client):
    body = {"scene": SCENE, "config": CONFIG, "operation_key": "boot-1"}
    first = client.post("/sessions", json=body)
    second = client.post("/sessions", json=body)
    assert first.json()["id"] == second.json()["id"]
    assert second.status_code == 201


def test_malformed_scene_names_the_field(client):
    r = client.post("/sessions", json={"scene": {"planes": "nope"}})
    assert r.status_code == 422
    err = r.json()
    assert err["code"] == "invalid_scene"
    assert err["detail"][0]["field"] == "scene"


def test_invalid_config_rejected(client):
    r = client.post("/sessions", json={"scene": SCENE, "config": {"resolution": 60}})
    assert r.status_code == 422
    assert r.json()["code"] == "invalid_config"


def test_missing_body_fields_report_paths(client):
    sid = make_session(client)
    r = client.post(f"/sessions/{sid}/stages:add", json={})
    assert r.status_code == 422
    err = r.json()
    assert err["code"] == "validation_error"
    assert any("prompt" in d["field"] for d in err["detail"])


def test_unknown_session_404(client):
    r = client.get("/sessions/deadbeef")
    assert r.status_code == 404
    assert r.json()["code"] == "session_not_found"


def test_camera_resolution_mismatch_rejected(client):
    r = client.post(
        "/sessions",
        json={"scene": SCENE, "config": {"timesteps": 3, "resolution": 128}},
    )
    assert r.status_code == 422
    assert r.json()["code"] == "invalid_config"


# --- stage mutations ----------------------------------------------------------


def test_stage_lifecycle_and_summaries(client):
    sid = make_session(client)
    r0 = add(client, sid)
    assert r0.status_code == 200
    assert r0.json()["kind"] == "background"
    r1 = add(client, sid, box=CRATE, text="a crate")
    assert r1.status_code == 200
    body = r1.json()
    assert body["index"] == 1
    assert body["image_url"].endswith("/stages/1/render/image")

    view = client.get(f"/sessions/{sid}").json()
    assert view["stage_count"] == 2
    assert [s["kind"] for s in view["stages"]] == ["background", "add"]
    assert view["scene"]["boxes"][0]["id"] == "crate"
    assert view["initial_scene"]["boxes"] == []


def test_add_without_background_is_stage_order_error(client):
    sid = make_session(client)
    r = add(client, sid, box=CRATE, text="a crate")
    assert r.status_code == 409
    assert r.json()["code"] == "stage_order"


def test_second_background_rejected(client):
    sid = make_session(client)
    add(client, sid)
    r = add(client, sid)
    assert r.status_code == 409
    assert r.json()["code"] == "stage_order"


def test_out_of_bounds_box_leaves_session_unchanged(client):
    sid = make_session(client)
    add(client, sid)
    huge = {"id": "huge", "center": [0.0, 0.5, 3.0], "size": [40.0, 1.0, 1.0]}
    r = add(client, sid, box=huge, text="a huge slab")
    assert r.status_code == 409
    assert r.json()["code"] == "out_of_bounds"
    assert client.get(f"/sessions/{sid}").json()["stage_count"] == 1


def test_unparseable_box_rejected(client):
    sid = make_session(client)
    add(client, sid)
    r = add(client, sid, box={"id": "x", "center": [0, 0.5]}, text="a thing")
    assert r.status_code == 422
    assert r.json()["code"] == "invalid_box"


def test_duplicate_box_id_rejected_before_compute(client):
    sid = make_session(client)
    add(client, sid)
    assert add(client, sid, box=CRATE, text="a crate").status_code == 200
    r = add(client, sid, box=CRATE, text="a crate again")
    assert r.status_code == 409
    assert r.json()["code"] == "invalid_layout"
    assert client.get(f"/sessions/{sid}").json()["stage_count"] == 2


def test_add_retry_with_operation_key_returns_same_stage(client):
    sid = make_session(client)
    add(client, sid)
    body = {"box": CRATE, "prompt": {"text": "a crate"}, "operation_key": "add-1"}
    first = client.post(f"/sessions/{sid}/stages:add", json=body)
    second = client.post(f"/sessions/{sid}/stages:add", json=body)
    assert first.json() == second.json()
    assert client.get(f"/sessions/{sid}").json()["stage_count"] == 2


def test_translate_smoke_and_errors(client):
    sid = make_session(client)
    add(client, sid)
    add(client, sid, box=CRATE, text="a crate")

    r = client.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "crate", "t": [0.0, 0.0, 0.0]},
    )
    assert r.status_code == 200
    assert r.json()["kind"] == "translate"
    assert r.json()["translation"] == [0.0, 0.0, 0.0]

    r = client.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "crate", "t": [100.0, 0.0, 0.0]},
    )
    assert r.status_code == 409
    assert r.json()["code"] == "out_of_bounds"

    r = client.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "ghost", "t": [0.1, 0.0, 0.0]},
    )
    assert r.status_code == 409

    r = client.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "crate", "t": [0.1, 0.0]},
    )
    assert r.status_code == 422
    assert r.json()["code"] == "validation_error"

    r = client.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "crate", "t": [0.1, 0.0, 0.0], "blend_fraction": 1.5},
    )
    assert r.status_code == 422
    assert r.json()["code"] == "invalid_translation"


def test_translate_surfaces_segmentation_failure(client):
    sid = make_session(client)
    add(client, sid)
    add(client, sid, box=CRATE, text="a crate")
    # A wall-to-wall slab in front of the crate removes it from view,
    # so segmentation of the crate must fail in a typed way.
    slab = {"id": "slab", "center": [0.0, 1.4, 1.5], "size": [3.9, 2.79, 0.3]}
    r = add(client, sid, box=slab, text="a slab")
    assert r.status_code == 200
    r = client.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "crate", "t": [0.1, 0.0, 0.0]},
    )
    assert r.status_code == 409
    assert r.json()["code"] == "segmentation_failed"


# --- renders ------------------------------------------------------------------


def test_render_kinds_round_trip(client):
    sid = make_session(client)
    add(client, sid)
    add(client, sid, box=CRATE, text="a crate")

    r = client.get(f"/sessions/{sid}/stages/1/render/image")
    assert r.headers["content-type"] == "image/png"
    img = Image.open(io.BytesIO(r.content))
    assert img.size == (64, 64)

    r = client.get(f"/sessions/{sid}/stages/1/render/mask_fg")
    mask = np.asarray(Image.open(io.BytesIO(r.content)))
    assert mask.shape[:2] == (64, 64)
    assert set(np.unique(mask)) <= {0, 255}

    r = client.get(f"/sessions/{sid}/stages/1/render/depth")
    depth = decode_f32_blob(r.content)
    assert depth.shape == (64, 64, 1)
    assert np.all(depth > 0)

    r = client.get(f"/sessions/{sid}/stages/1/render/cartesian")
    coords = decode_f32_blob(r.content)
    assert coords.shape == (64, 64, 3)


def test_render_unknown_stage_and_kind(client):
    sid = make_session(client)
    add(client, sid)
    assert client.get(f"/sessions/{sid}/stages/7/render/image").status_code == 404
    assert client.get(f"/sessions/{sid}/stages/0/render/hologram").status_code == 404
    r = client.get(f"/sessions/{sid}/stages/0/render/cartesian")
    assert r.status_code == 404
    assert r.json()["code"] == "no_box"


# --- async jobs and SSE -------------------------------------------------------


def test_async_add_streams_monotone_progress(client):
    sid = make_session(client)
    add(client, sid)
    r = add(client, sid, box=CRATE, text="a crate", **{"async": True})
    assert r.status_code == 202
    job_id = r.json()["job_id"]
    state = wait_job(client, job_id)
    assert state["status"] == "done"
    assert state["result"]["index"] == 1

    events = sse_events(client, job_id)
    ids = [i for i, _ in events]
    assert ids == sorted(ids)
    progress = [e for _, e in events if e["type"] == "progress"]
    steps = [e["step"] for e in progress]
    assert steps == sorted(steps)
    assert all(e["total"] == 3 for e in progress)
    terminals = [e for _, e in events if e["type"] in ("done", "error")]
    assert len(terminals) == 1
    assert terminals[0]["type"] == "done"
    assert terminals[0]["index"] == 1


def test_sse_resume_skips_consumed_events(client):
    sid = make_session(client)
    add(client, sid)
    job_id = add(client, sid, box=CRATE, text="a crate", **{"async": True}).json()["job_id"]
    wait_job(client, job_id)
    full = sse_events(client, job_id)
    tail = sse_events(client, job_id, start=2)
    assert tail == full[2:]


def test_async_failure_emits_single_error_terminal(client):
    sid = make_session(client)
    add(client, sid)
    huge = {"id": "huge", "center": [0.0, 0.5, 3.0], "size": [40.0, 1.0, 1.0]}
    job_id = add(client, sid, box=huge, text="a slab", **{"async": True}).json()["job_id"]
    state = wait_job(client, job_id)
    assert state["status"] == "error"
    assert state["error"]["code"] == "out_of_bounds"
    events = [e for _, e in sse_events(client, job_id)]
    assert [e["type"] for e in events].count("error") == 1
    assert events[-1]["code"] == "out_of_bounds"
    assert client.get(f"/sessions/{sid}").json()["stage_count"] == 1


def test_unknown_job_404(client):
    assert client.get("/jobs/nope").status_code == 404


def test_concurrent_mutations_serialize_in_submission_order(client):
    sid = make_session(client)
    add(client, sid)
    crate2 = {"id": "crate2", "center": [1.0, 0.5, 3.0], "size": [1.0, 1.0, 1.0]}
    ja = add(client, sid, box=CRATE, text="a crate", **{"async": True}).json()["job_id"]
    jb = add(client, sid, box=crate2, text="a crate", **{"async": True}).json()["job_id"]
    sa = wait_job(client, ja)
    sb = wait_job(client, jb)
    assert sa["result"]["index"] == 1
    assert sb["result"]["index"] == 2
    assert client.get(f"/sessions/{sid}").json()["stage_count"] == 3


def test_fifo_lock_hands_off_in_arrival_order():
    lock = FifoLock()
    order = []
    lock.acquire()
    threads = []

    def worker(tag, started):
        started.set()
        with lock:
            order.append(tag)
            time.sleep(0.01)

    for tag in range(5):
        started = threading.Event()
        th = threading.Thread(target=worker, args=(tag, started))
        th.start()
        started.wait()
        time.sleep(0.02)  # let the acquire enqueue before the next arrival
        threads.append(th)
    lock.release()
    for th in threads:
        th.join(timeout=10)
    assert order == [0, 1, 2, 3, 4]


# --- restart ------------------------------------------------------------------


def test_restart_preserves_sessions_byte_identically(tmp_path):
    store = tmp_path / "store"
    client = TestClient(create_app(store))
    sid = make_session(client)
    add(client, sid)
    add(client, sid, box=CRATE, text="a crate")
    before = {
        kind: client.get(f"/sessions/{sid}/stages/1/render/{kind}").content
        for kind in ("image", "mask_fg", "depth", "cartesian")
    }
    handle_before = client.get(f"/sessions/{sid}").json()

    client2 = TestClient(create_app(store))
    handle_after = client2.get(f"/sessions/{sid}").json()
    assert handle_after["stage_count"] == handle_before["stage_count"]
    assert handle_after["stages"] == handle_before["stages"]
    for kind, blob in before.items():
        assert client2.get(f"/sessions/{sid}/stages/1/render/{kind}").content == blob

    # the restored session keeps working
    r = client2.post(
        f"/sessions/{sid}/stages:translate",
        json={"box_id": "crate", "t": [0.2, 0.0, 0.0]},
    )
    assert r.status_code == 200
    assert r.json()["index"] == 2


# --- backend protocol ---------------------------------------------------------


def _f32(arr):
    return np.asarray(arr).astype(np.float32).astype(np.float64)


@pytest.fixture(scope="module")
def toy():
    return ToyDenoiser(seed=0)


@pytest.fixture()
def predict_inputs(toy):
    rng = np.random.default_rng(9)
    x = _f32(rng.standard_normal((4, 8, 8)))
    depth = _f32(rng.uniform(0.0, 1.0, (8, 8)))
    emb = _f32(embed_prompt("a fern"))
    return x, depth, emb


def test_toy_dispatch_is_bit_exact(toy, predict_inputs):
    x, depth, emb = predict_inputs
    direct_eps, direct_kv, direct_cross = toy.predict_eps(x, 2, emb, depth)
    pred = backend_predict(
        BackendDescriptor(kind="toy"),
        PredictRequest(x, 2, emb, depth),
        model=toy,
    )
    assert np.array_equal(pred.eps, direct_eps)
    assert len(pred.kv) == len(direct_kv)
    assert len(pred.cross) == len(direct_cross)


def test_wire_loopback_matches_direct_call(client, toy, predict_inputs):
    x, depth, emb = predict_inputs
    direct_eps, _, _ = toy.predict_eps(x, 2, emb, depth)
    ext = ExternalModel("http://svc/backend/predict", client=client)
    remote_eps, remote_kv, remote_cross = ext.predict_eps(x, 2, emb, depth)
    assert np.array_equal(remote_eps, _f32(direct_eps))
    assert {r.layer for r in remote_kv} == {"self_attn_4x", "self_attn_8x"}
    assert all(r.map.ndim == 1 for r in remote_cross)


def test_wire_loopback_with_dsa_mode(client, toy, predict_inputs):
    x, depth, emb = predict_inputs
    _, kvs, _ = toy.predict_eps(x, 3, emb, depth)
    kv_prev = {
        r.layer: KVRecord(layer=r.layer, t=r.t, K=_f32(r.K), V=_f32(r.V))
        for r in kvs
    }
    fg = np.zeros((64, 64), dtype=np.uint8)
    fg[8:32, 8:32] = 1
    masks = toy.token_masks(fg, (8, 8))
    mode = AttentionMode(kind="dsa", kv_prev=kv_prev, fg_tokens=masks)

    direct_eps, _, _ = toy.predict_eps(x, 2, emb, depth, mode)
    ext = ExternalModel("http://svc/backend/predict", client=client)
    remote_eps, _, _ = ext.predict_eps(x, 2, emb, depth, mode)
    assert np.array_equal(remote_eps, _f32(direct_eps))


def test_mode_wire_round_trip(toy, predict_inputs):
    x, depth, emb = predict_inputs
    _, kvs, _ = toy.predict_eps(x, 3, emb, depth)
    kv_prev = {
        r.layer: KVRecord(layer=r.layer, t=r.t, K=_f32(r.K), V=_f32(r.V))
        for r in kvs
    }
    fg = np.zeros((64, 64), dtype=np.uint8)
    fg[0:16, 0:16] = 1
    masks = toy.token_masks(fg, (8, 8))
    mode = AttentionMode(kind="dsa", kv_prev=kv_prev, fg_tokens=masks)
    back = mode_from_wire(mode_to_wire(mode))
    assert back.kind == "dsa"
    for layer, rec in kv_prev.items():
        assert np.array_equal(back.kv_prev[layer].K, rec.K)
        assert np.array_equal(back.kv_prev[layer].V, rec.V)
        assert back.kv_prev[layer].t == rec.t
    for layer, mask in masks.items():
        assert np.array_equal(back.fg_tokens[layer], mask)


def test_recorded_wire_fixture_decodes_to_correct_shapes():
    wire = json.loads((FIXTURES / "backend_wire.json").read_text())
    request = predict_request_from_wire(wire["request"])
    assert request.latent.shape == (4, 8, 8)
    assert request.depth.shape == (8, 8)
    assert request.prompt.shape[1] == 32
    assert request.mode.kind == "dsa"
    assert set(request.mode.fg_tokens) == {"self_attn_4x", "self_attn_8x"}

    pred = prediction_from_wire(wire["response"])
    assert pred.eps.shape == (4, 8, 8)
    layers = {r.layer for r in pred.kv}
    assert layers == {"self_attn_4x", "self_attn_8x"}
    for record in pred.kv:
        assert record.K.shape == record.V.shape
        assert record.K.shape[1] == 64
    assert all(r.map.ndim == 1 for r in pred.cross)


def test_recorded_fixture_replays_through_the_server(client):
    wire = json.loads((FIXTURES / "backend_wire.json").read_text())
    resp = client.post("/backend/predict", json=wire["request"])
    assert resp.status_code == 200
    fresh = prediction_from_wire(resp.json())
    recorded = prediction_from_wire(wire["response"])
    assert np.array_equal(fresh.eps, recorded.eps)


def test_capability_mismatch_refuses_before_any_network(toy, predict_inputs):
    x, depth, emb = predict_inputs
    _, kvs, _ = toy.predict_eps(x, 3, emb, depth)
    kv_prev = {r.layer: r for r in kvs}
    no_kv = BackendDescriptor(kind="external", endpoint="http://nowhere",
                              supports_kv_injection=False)
    with pytest.raises(CapabilityError):
        backend_predict(no_kv, PredictRequest(
            x, 2, emb, depth, AttentionMode(kind="cross_frame", kv_prev=kv_prev)
        ))
    small = BackendDescriptor(kind="external", endpoint="http://nowhere",
                              max_resolution=32)
    with pytest.raises(CapabilityError):
        backend_predict(small, PredictRequest(x, 2, emb, depth))


def test_unreachable_backend_raises_backend_error(predict_inputs):
    x, depth, emb = predict_inputs

    def refuse(request):
        raise httpx.ConnectError("connection refused")

    client = httpx.Client(transport=httpx.MockTransport(refuse))
    with pytest.raises(BackendError):
        backend_predict(
            BackendDescriptor(kind="external", endpoint="http://nowhere/predict"),
            PredictRequest(x, 2, emb, depth),
            client=client,
        )


def test_unreachable_backend_leaves_session_unchanged(tmp_path):
    def refuse(request):
        raise httpx.ConnectError("connection refused")

    model = ExternalModel("http://nowhere/predict",
                          client=httpx.Client(transport=httpx.MockTransport(refuse)))
    client = TestClient(create_app(tmp_path / "store", model=model))
    sid = make_session(client)
    r = add(client, sid)
    assert r.status_code == 502
    assert r.json()["code"] == "backend_unreachable"
    assert client.get(f"/sessions/{sid}").json()["stage_count"] == 0


def test_backend_descriptor_validation_and_round_trip():
    with pytest.raises(ValueError):
        BackendDescriptor(kind="external")
    with pytest.raises(ValueError):
        BackendDescriptor(kind="toy", endpoint="http://x")
    with pytest.raises(ValueError):
        BackendDescriptor(kind="quantum")
    desc = BackendDescriptor(kind="external", endpoint="http://x",
                             max_resolution=256, supports_kv_injection=False)
    assert BackendDescriptor.from_dict(desc.to_dict()) == desc


def test_backends_endpoint_lists_descriptors(client):
    body = client.get("/backends").json()
    assert body["backends"][0]["kind"] == "toy"
    assert body["backends"][0]["capabilities"]["supports_kv_injection"] is True


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"


def test_malformed_predict_request_rejected(client):
    r = client.post("/backend/predict", json={"latent": "not-a-blob", "t": 1})
    assert r.status_code == 422
    assert r.json()["code"] == "invalid_predict_request"
