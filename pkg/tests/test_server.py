import json
import time

import pytest
from fastapi.testclient import TestClient

from tendonhand.hand_model import ACTUATOR_ORDER
from tendonhand.hand_spec_io import default_hand_spec
from tendonhand.retargeting import calibrate_operator, default_profile, synthetic_sweep
from tendonhand.server import SimRuntime, apply_command, create_app
from tendonhand.service import run_pipeline_on_stream


@pytest.fixture()
def runtime():
    rt = SimRuntime(default_hand_spec(), rate_hz=60.0)
    yield rt
    rt.stop()


@pytest.fixture()
def client(runtime):
    app = create_app(runtime)
    with TestClient(app) as client:
        yield client


class TestHttpEndpoints:
    def test_spec_endpoint(self, client):
        doc = client.get("/spec").json()
        assert doc["palm_length"] == 0.095
        assert doc["finger_length"] == 0.103
        assert len(doc["joints"]) == 20
        assert len(doc["actuator_order"]) == 15
        assert {d["name"] for d in doc["digits"]} == {"thumb", "index", "middle", "ring", "pinky"}

    def test_grasps_endpoint(self, client):
        grasps = client.get("/grasps").json()
        assert len(grasps) == 33
        names = {g["name"] for g in grasps}
        assert "Large Diameter" in names and "Writing Tripod" in names
        assert all(len(g["angles"]) == 20 for g in grasps)


class TestCommandChannel:
    def test_joint_target_roundtrip(self, client):
        with client.websocket_connect("/command") as ws:
            ws.send_text(json.dumps({"kind": "joints", "targets": {"index.mcp_flex": 0.8}}))
            ack = json.loads(ws.receive_text())
        assert ack["ok"]
        assert ack["applied"]["index.mcp_flex"] == 0.8

    def test_out_of_limit_target_rejected(self, client):
        with client.websocket_connect("/command") as ws:
            ws.send_text(json.dumps({"kind": "joints", "targets": {"index.mcp_flex": 3.0}}))
            ack = json.loads(ws.receive_text())
        assert not ack["ok"]
        assert "limits" in ack["error"]

    def test_unknown_grasp_lists_names(self, client):
        with client.websocket_connect("/command") as ws:
            ws.send_text(json.dumps({"kind": "grasp", "name": "Banana Grip"}))
            ack = json.loads(ws.receive_text())
        assert not ack["ok"]
        assert len(ack["valid_names"]) == 33

    def test_grasp_command_settles_to_preset(self, runtime, client):
        with client.websocket_connect("/command") as ws:
            ws.send_text(json.dumps({"kind": "grasp", "name": "Tip Pinch"}))
            ack = json.loads(ws.receive_text())
        assert ack["ok"]
        target = runtime.presets["Tip Pinch"].q
        for _ in range(200):
            message = runtime.step_once()
        worst = max(abs(message.joints[j] - target[j]) for j in ACTUATOR_ORDER)
        assert worst < 1e-3

    def test_fault_state_rejects_commands(self, runtime):
        runtime.fault = True
        ack = apply_command(runtime, {"kind": "joints", "targets": {"index.pip": 0.4}})
        assert not ack["ok"]
        assert "fault" in ack["error"]


class TestStateStream:
    def test_state_messages_flow(self, runtime, client):
        with client.websocket_connect("/state") as ws:
            runtime.step_once()
            message = json.loads(ws.receive_text())
        assert message["schema"] == "state/1"
        assert len(message["joints"]) == 20
        assert len(message["motor_positions"]) == 15
        assert len(message["motor_currents"]) == 15
        assert set(message["flags"]) == {"stale", "saturated", "fault"}

    def test_two_subscribers_get_identical_sequences(self, runtime, client):
        with client.websocket_connect("/state") as a, client.websocket_connect("/state") as b:
            for _ in range(5):
                runtime.step_once()
            seq_a = [json.loads(a.receive_text())["t"] for _ in range(5)]
            seq_b = [json.loads(b.receive_text())["t"] for _ in range(5)]
        assert seq_a == seq_b


class TestReplayControl:
    def test_replay_session_through_command(self, runtime, client, tmp_path):
        spec = runtime.spec
        profile = default_profile(spec, calibrate_operator(synthetic_sweep(n_frames=30)))
        session = tmp_path / "demo.session"
        run_pipeline_on_stream(spec, profile, synthetic_sweep(n_frames=30), session_path=session)
        with client.websocket_connect("/command") as ws:
            ws.send_text(json.dumps({"kind": "replay", "action": "start", "path": str(session)}))
            ack = json.loads(ws.receive_text())
            assert ack["ok"]
            assert ack["commands"] > 0
            ws.send_text(json.dumps({"kind": "replay", "action": "stop"}))
            ack = json.loads(ws.receive_text())
            assert ack["ok"]


class TestKeypointInput:
    def test_keypoints_rejected_without_pipeline(self, client):
        with client.websocket_connect("/keypoints") as ws:
            reply = json.loads(ws.receive_text())
        assert not reply["ok"]

    def test_keypoints_feed_pipeline_mailbox(self):
        spec = default_hand_spec()
        profile = default_profile(spec, calibrate_operator(synthetic_sweep(n_frames=30)))
        from tendonhand.service import StateBroadcaster, TeleopPipeline

        pipeline = TeleopPipeline(spec, profile, broadcaster=StateBroadcaster())
        app = create_app(pipeline=pipeline)
        frame = synthetic_sweep(n_frames=2)[1]
        with TestClient(app) as client:
            with client.websocket_connect("/keypoints") as ws:
                ws.send_text(json.dumps(frame.to_record()))
                time.sleep(0.1)
        assert pipeline.mailbox.peek() is not None
        assert pipeline.mailbox.peek().timestamp == frame.timestamp
