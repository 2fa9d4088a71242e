#!/usr/bin/env python3
"""Record server fixtures for the studio's contract tests.

Runs the real service in-process and captures, verbatim, everything the
frontend tests replay: the OpenAPI schema, session/stage/job responses, raw
SSE streams, and a set of rejected requests.  Re-run after changing the
service; the tests never talk to a live server.

Usage: python3 tests/fixtures/record.py   (from frontend/)
"""

import json
import time
from pathlib import Path
from tempfile import TemporaryDirectory

from fastapi.testclient import TestClient

from scenestage import default_camera, make_scene, scene_to_json
from scenestage.service import create_app

OUT = Path(__file__).parent / "recorded"

CONFIG = {"resolution": 64, "timesteps": 4, "seed": 0}
ROOM = (4.0, 3.0, 6.0)
CRATE = {"id": "crate", "center": [0.6, 0.5, 3.0], "size": [1.0, 1.0, 1.0], "yaw": 0.3}
SHELF = {"id": "shelf", "center": [-1.2, 0.4, 4.0], "size": [0.8, 0.8, 0.8], "yaw": 0.0}


def dump(name: str, payload) -> None:
    (OUT / name).write_text(json.dumps(payload, indent=2, sort_keys=False) + "\n")


def record_response(name: str, response) -> dict:
    wrapper = {"status": response.status_code, "body": response.json()}
    dump(name, wrapper)
    return wrapper


def stream_events(client: TestClient, url: str, headers: dict | None = None) -> str:
    with client.stream("GET", url, headers=headers) as response:
        assert response.status_code == 200, response.status_code
        return "".join(response.iter_text())


def wait_for_job(client: TestClient, job_id: str) -> dict:
    for _ in range(600):
        status = client.get(f"/jobs/{job_id}").json()
        if status["status"] in ("done", "error"):
            return status
        time.sleep(0.05)
    raise RuntimeError(f"job {job_id} did not settle")


def main() -> None:
    OUT.mkdir(exist_ok=True)
    scene = make_scene(ROOM, default_camera(CONFIG["resolution"], CONFIG["resolution"]))
    scene_dict = json.loads(scene_to_json(scene))

    with TemporaryDirectory(prefix="studio-fixtures-") as root:
        client = TestClient(create_app(root))

        dump("openapi.json", client.get("/openapi.json").json())
        record_response("health.json", client.get("/healthz"))
        record_response("backends.json", client.get("/backends"))

        created = record_response(
            "session_created.json",
            client.post("/sessions", json={"scene": scene_dict, "config": CONFIG}),
        )
        sid = created["body"]["id"]

        record_response(
            "stage_background.json",
            client.post(
                f"/sessions/{sid}/stages:add",
                json={"box": None, "prompt": {"text": "a plain room"}},
            ),
        )
        record_response(
            "stage_add.json",
            client.post(
                f"/sessions/{sid}/stages:add",
                json={"box": CRATE,
                      "prompt": {"text": "a wooden crate", "object_token_index": 2}},
            ),
        )
        record_response(
            "stage_translate.json",
            client.post(
                f"/sessions/{sid}/stages:translate",
                json={"box_id": "crate", "t": [-0.5, 0.0, 0.4], "blend_fraction": 0.8},
            ),
        )

        # an async stage: the job envelope, the full SSE stream, a resumed
        # stream, and the settled job status
        envelope = record_response(
            "job_envelope.json",
            client.post(
                f"/sessions/{sid}/stages:add",
                json={"box": SHELF,
                      "prompt": {"text": "a low shelf", "object_token_index": 2},
                      "async": True},
            ),
        )
        job_id = envelope["body"]["job_id"]
        dump("job_status.json", wait_for_job(client, job_id))
        events_url = envelope["body"]["events_url"]
        (OUT / "job_events.sse").write_text(stream_events(client, events_url))
        (OUT / "job_events_resume.sse").write_text(
            stream_events(client, events_url, headers={"Last-Event-ID": "1"})
        )

        # a failing async job: its stream ends in a single error event
        ghost = record_response(
            "job_envelope_error.json",
            client.post(
                f"/sessions/{sid}/stages:translate",
                json={"box_id": "ghost", "t": [0.2, 0.0, 0.0], "async": True},
            ),
        )
        wait_for_job(client, ghost["body"]["job_id"])
        (OUT / "job_events_error.sse").write_text(
            stream_events(client, ghost["body"]["events_url"])
        )

        record_response("session_full.json", client.get(f"/sessions/{sid}"))

        # raw render bytes for the browser-side f32 decoder
        depth = client.get(f"/sessions/{sid}/stages/0/render/depth")
        assert depth.status_code == 200
        (OUT / "depth_stage0.f32").write_bytes(depth.content)

        # requests the server rejects; the client must reject every one of
        # these before they reach the network
        rejections = {}
        for name, method, path, body in [
            ("scene_missing_camera", "POST", "/sessions",
             {"scene": {"room": {"extents": [4, 3, 6]}, "planes": [], "boxes": []}}),
            ("config_bad_resolution", "POST", "/sessions",
             {"scene": scene_dict, "config": {"resolution": 100}}),
            ("box_bad_size_arity", "POST", f"/sessions/{sid}/stages:add",
             {"box": {"id": "bad", "center": [0, 0.5, 3], "size": [1, 1]},
              "prompt": {"text": "a box"}}),
            ("box_nonpositive_size", "POST", f"/sessions/{sid}/stages:add",
             {"box": {"id": "bad", "center": [0, 0.5, 3], "size": [1, -1, 1]},
              "prompt": {"text": "a box"}}),
            ("box_duplicate_id", "POST", f"/sessions/{sid}/stages:add",
             {"box": CRATE, "prompt": {"text": "a crate again", "object_token_index": 1}}),
            ("box_out_of_bounds", "POST", f"/sessions/{sid}/stages:add",
             {"box": {"id": "far", "center": [3.9, 0.5, 3], "size": [1, 1, 1]},
              "prompt": {"text": "a far box", "object_token_index": 2}}),
            ("prompt_empty", "POST", f"/sessions/{sid}/stages:add",
             {"box": None, "prompt": {"text": "   "}}),
            ("prompt_token_out_of_range", "POST", f"/sessions/{sid}/stages:add",
             {"box": None, "prompt": {"text": "a room", "object_token_index": 5}}),
            ("translate_bad_blend", "POST", f"/sessions/{sid}/stages:translate",
             {"box_id": "crate", "t": [0.2, 0, 0], "blend_fraction": 1.5}),
            ("translate_bad_arity", "POST", f"/sessions/{sid}/stages:translate",
             {"box_id": "crate", "t": [0.2, 0]}),
            ("translate_unknown_box", "POST", f"/sessions/{sid}/stages:translate",
             {"box_id": "ghost", "t": [0.2, 0, 0]}),
            ("translate_out_of_room", "POST", f"/sessions/{sid}/stages:translate",
             {"box_id": "crate", "t": [5.0, 0, 0]}),
        ]:
            response = client.request(method, path, json=body)
            assert response.status_code >= 400, (name, response.status_code)
            rejections[name] = {
                "request": {"method": method, "path": path, "body": body},
                "status": response.status_code,
                "body": response.json(),
            }
        dump("rejections.json", rejections)

    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()
