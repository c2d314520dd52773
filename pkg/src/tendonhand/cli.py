"""Command-line entry points.

Subcommands: sim (virtual hand + service endpoints), teleop / record
(retargeting pipeline over a recorded stream or live socket), calibrate,
test (structural harnesses with figures), grasp (drive to a preset),
replay (deterministic session re-run). All failures print one
machine-readable JSON error line on stderr and exit nonzero.
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import yaml

from .grasps import load_presets
from .hand_model import ACTUATOR_ORDER
from .hand_spec_io import load_hand_spec
from .reports import render_report, write_report
from .retargeting import (
    calibrate_operator,
    default_profile,
    load_profile,
    read_keypoint_stream,
    robot_limits_from_spec,
    save_profile,
)
from .serialization import dumps_canonical, sha256_text
from .service import (
    DEFAULT_RATE_HZ,
    RealtimeLoop,
    StateBroadcaster,
    TeleopPipeline,
    replay_session,
    run_pipeline_on_stream,
    session_command_log,
)
from .sim_engine import (
    HoldingConfig,
    PulloutConfig,
    RepeatabilityConfig,
    run_holding_test,
    run_pullout_test,
    run_repeatability_test,
)


def _fail(message: str, code: int = 1, **extra):
    click.echo(dumps_canonical({"error": message, **extra}), err=True)
    sys.exit(code)


@click.group()
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path),
              default=None, help="Hand-spec file (default: $TENDONHAND_SPEC or built-in).")
@click.pass_context
def main(ctx, spec_path):
    """Digital twin and teleoperation toolkit for the tendon-driven hand."""
    try:
        ctx.obj = load_hand_spec(spec_path)
    except Exception as exc:
        _fail(f"failed to load hand spec: {exc}")


@main.command()
@click.option("--bind", default="127.0.0.1:8720", show_default=True)
@click.option("--rate", default=DEFAULT_RATE_HZ, show_default=True)
@click.option("--console", "console_dir", type=click.Path(exists=True, path_type=Path),
              default=None, help="Serve the built browser console from this directory.")
@click.pass_obj
def sim(spec, bind, rate, console_dir):
    """Run the virtual hand with the state server and console endpoints."""
    import uvicorn

    from .server import SimRuntime, create_app

    host, _, port = bind.partition(":")
    runtime = SimRuntime(spec, rate_hz=rate)
    app = create_app(runtime, console_dir=console_dir)
    click.echo(f"serving on http://{bind}  (state: ws://{bind}/state)")
    uvicorn.run(app, host=host, port=int(port or 8720), log_level="warning")


def _run_stream_teleop(spec, source, profile_path, session, rate):
    profile = load_profile(profile_path)
    frames = list(read_keypoint_stream(source))
    summary = run_pipeline_on_stream(
        spec, profile, frames, rate_hz=rate, session_path=session)
    if session:
        log = session_command_log(session)
        summary["command_log_sha256"] = sha256_text("\n".join(log))
        summary["session"] = str(session)
    click.echo(dumps_canonical(summary))


def _run_live_teleop(spec, bind, profile_path, session, rate):
    import uvicorn

    from .server import create_app
    from .service import SessionWriter, spec_content_hash

    profile = load_profile(profile_path)
    writer = None
    if session:
        writer = SessionWriter(session, profile.content_hash(), spec_content_hash(spec), rate)
    pipeline = TeleopPipeline(spec, profile, rate_hz=rate,
                              broadcaster=StateBroadcaster(), session=writer)
    loop = RealtimeLoop(pipeline)
    loop.start()
    host, _, port = bind.partition(":")
    app = create_app(pipeline=pipeline)
    click.echo(f"teleop live: push frames to ws://{bind}/keypoints")
    try:
        uvicorn.run(app, host=host, port=int(port or 8721), log_level="warning")
    finally:
        loop.stop()
        if writer:
            writer.close()
        click.echo(dumps_canonical(pipeline.summary()))


@main.command()
@click.option("--input", "source", required=True,
              help="Keypoint stream file, or 'socket' for a live websocket input.")
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--session", type=click.Path(path_type=Path), default=None,
              help="Record the session to this file.")
@click.option("--bind", default="127.0.0.1:8721", show_default=True,
              help="Bind address for live socket input.")
@click.option("--rate", default=DEFAULT_RATE_HZ, show_default=True)
@click.pass_obj
def teleop(spec, source, profile_path, session, bind, rate):
    """Run the retargeting pipeline from a recorded stream or live socket."""
    try:
        if source == "socket" or source.startswith("ws://"):
            _run_live_teleop(spec, bind, profile_path, session, rate)
        else:
            _run_stream_teleop(spec, Path(source), profile_path, session, rate)
    except Exception as exc:
        _fail(str(exc))


@main.command()
@click.option("--input", "source", required=True, help="Keypoint stream file.")
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.argument("session", type=click.Path(path_type=Path))
@click.option("--rate", default=DEFAULT_RATE_HZ, show_default=True)
@click.pass_obj
def record(spec, source, profile_path, session, rate):
    """Record a teleop session from a keypoint stream."""
    try:
        _run_stream_teleop(spec, Path(source), profile_path, session, rate)
    except Exception as exc:
        _fail(str(exc))


@main.command()
@click.argument("session", type=click.Path(exists=True, path_type=Path))
@click.option("--profile", "profile_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None,
              help="Write the replayed session here (default: <session>.replay).")
@click.pass_obj
def replay(spec, session, profile_path, out_path):
    """Re-run a recorded session deterministically and report the command log hash."""
    try:
        profile = load_profile(profile_path)
        out_path = out_path or session.with_suffix(session.suffix + ".replay")
        summary = replay_session(spec, profile, session, out_path)
        log = session_command_log(out_path)
        summary["replayed_to"] = str(out_path)
        summary["command_log_sha256"] = sha256_text("\n".join(log))
        click.echo(dumps_canonical(summary))
    except Exception as exc:
        _fail(str(exc))


@main.command()
@click.option("--robot", "robot_side", is_flag=True, help="Sweep and print robot joint ranges.")
@click.option("--operator", "operator_side", is_flag=True,
              help="Build a profile from an operator range-of-motion stream.")
@click.option("--input", "stream_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
@click.option("--ema-alpha", default=0.3, show_default=True)
@click.pass_obj
def calibrate(spec, robot_side, operator_side, stream_path, out_path, ema_alpha):
    """Calibration: --robot sweeps the virtual joints to their extremes;
    --operator consumes a recorded range-of-motion stream and writes a
    complete profile (the robot side is swept automatically)."""
    try:
        if robot_side and not operator_side:
            limits = robot_limits_from_spec(spec)
            doc = {j.name: list(limits[j]) for j in ACTUATOR_ORDER}
            if out_path:
                Path(out_path).write_text(dumps_canonical(doc) + "\n")
            click.echo(dumps_canonical(doc))
            return
        if operator_side:
            if stream_path is None or out_path is None:
                _fail("--operator needs --input <stream> and --out <profile>")
            frames = list(read_keypoint_stream(stream_path))
            operator_range = calibrate_operator(frames)
            profile = default_profile(spec, operator_range, ema_alpha=ema_alpha)
            save_profile(profile, out_path)
            click.echo(dumps_canonical({
                "profile": str(out_path),
                "frames_used": operator_range.frames_used,
                "under_calibrated": [j.name for j in operator_range.under_calibrated],
                "profile_hash": profile.content_hash(),
            }))
            return
        _fail("pass --robot and/or --operator")
    except SystemExit:
        raise
    except Exception as exc:
        _fail(str(exc))


_TEST_CONFIGS = {
    "pullout": (PulloutConfig, run_pullout_test),
    "repeat": (RepeatabilityConfig, run_repeatability_test),
    "hold": (HoldingConfig, run_holding_test),
}


@main.command("test")
@click.argument("kind", type=click.Choice(sorted(_TEST_CONFIGS)))
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("reports"),
              show_default=True)
@click.pass_obj
def run_test(spec, kind, config_path, out_dir):
    """Run a structural-test harness; writes the report and its figure."""
    try:
        config_cls, runner = _TEST_CONFIGS[kind]
        config = config_cls()
        if config_path:
            overrides = yaml.safe_load(Path(config_path).read_text()) or {}
            config = dataclasses.replace(config, **overrides)
        report = runner(spec, config)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        data_path = write_report(report, out_dir / f"{report.kind}.jsonl")
        figure_path = render_report(report, out_dir)
        if not report.verify_self():
            _fail("report failed self-verification")
        click.echo(dumps_canonical({
            "kind": report.kind,
            "report": str(data_path),
            "figure": str(figure_path),
            "summary": report.summary,
        }))
    except SystemExit:
        raise
    except Exception as exc:
        _fail(str(exc))


@main.command()
@click.argument("name")
@click.option("--settle-seconds", default=2.0, show_default=True)
@click.option("--tolerance", default=1e-3, show_default=True)
@click.option("--rate", default=DEFAULT_RATE_HZ, show_default=True)
@click.pass_obj
def grasp(spec, name, settle_seconds, tolerance, rate):
    """Drive the virtual hand to a named grasp preset and verify it settles."""
    from .server import SimRuntime

    presets = {p.name: p for p in load_presets(spec=spec)}
    if name not in presets:
        _fail(f"unknown grasp {name!r}", code=2, valid_names=sorted(presets))
    runtime = SimRuntime(spec, rate_hz=rate)
    runtime.set_grasp(name)
    now = 0.0
    for _ in range(int(settle_seconds * rate)):
        now += runtime.dt
        message = runtime.step_once(now)
    target = presets[name].q
    worst = max(abs(message.joints[j] - target[j]) for j in ACTUATOR_ORDER)
    if worst > tolerance:
        _fail(f"did not settle: worst joint error {worst:.2e} rad", worst_error=worst)
    click.echo(dumps_canonical({
        "grasp": name,
        "settled": True,
        "worst_error_rad": worst,
        "ticks": runtime.ticks,
    }))


if __name__ == "__main__":
    main()
