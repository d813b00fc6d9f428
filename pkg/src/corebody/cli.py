"""Command-line entry points.

Subcommands:
    gen-assets      write a deterministic test-body asset file
    eval            offline metrics for a recorded session against a target
    replay          stream a .poselog through the pipeline (realtime or max)
    serve           run the live REST + WebSocket service
    convert-report  extract the CSV series from a JSON report

Exit codes: 0 success, 1 runtime failure (diagnostic on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import assets_io, testbody
from .estimator import FrameProtocolError, open_replay_file
from .evaluation import parse_report, render_report, report_to_csv, series_to_csv
from .session import (
    SessionConfig,
    SessionError,
    SessionStore,
    load_config_file,
    run_session,
    set_target,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corebody",
        description="Core-training guidance engine: compare estimated body meshes "
        "against a target pose and score the session.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-assets", help="write a deterministic test body")
    gen.add_argument("--out", required=True, help="output asset path (.cbm)")
    gen.add_argument("--n-ring", type=int, default=8, help="segments per tube ring")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--ring-spacing", type=float, default=0.045, help="meters between rings")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--assets", required=True, help="asset file path")
    common.add_argument("--config", help="session config JSON path")
    common.add_argument("--mode", choices=("skeleton", "markers"), help="guidance mode label")
    common.add_argument("--report-out", help="write the JSON report here")
    common.add_argument("--csv-out", help="write the RMSE series CSV here")

    ev = sub.add_parser("eval", parents=[common], help="offline metrics for a session")
    ev.add_argument("target", help="target .poselog (first frame is the target pose)")
    ev.add_argument("session", help="session .poselog to score")
    ev.add_argument("--target-index", type=int, default=0, help="target frame index")

    rp = sub.add_parser("replay", parents=[common], help="stream a .poselog through the pipeline")
    rp.add_argument("--target", required=True, dest="target", help="target .poselog")
    rp.add_argument("session", help="session .poselog to stream")
    rp.add_argument("--target-index", type=int, default=0)
    rp.add_argument("--speed", choices=("realtime", "max"), default="max")
    rp.add_argument("--sessions-dir", help="persist session artifacts here")
    rp.add_argument("--session-id", default="replay", help="artifact base name")

    sv = sub.add_parser("serve", help="run the live service")
    sv.add_argument("--assets", required=True)
    sv.add_argument("--config", help="session config JSON path")
    sv.add_argument("--bind", default="127.0.0.1:8760", help="addr:port to listen on")
    sv.add_argument("--mode", choices=("skeleton", "markers"))
    sv.add_argument("--static", help="directory of built UI files to serve at /")
    sv.add_argument("--sessions-dir")

    cv = sub.add_parser("convert-report", help="JSON report to CSV series")
    cv.add_argument("report", help="report JSON path")
    cv.add_argument("--csv-out", help="output CSV path (default: stdout)")

    return parser


def _load_setup(args):
    assets = assets_io.load_assets_file(args.assets)
    config = load_config_file(args.config) if args.config else SessionConfig()
    if args.mode:
        from dataclasses import replace

        config = replace(config, mode=args.mode)
    return assets, config


def _score_poselog(assets, config, target_path, target_index, session_path, speed=None):
    target_frame = None
    for i, frame in enumerate(open_replay_file(target_path)):
        if i == target_index:
            target_frame = frame
            break
    if target_frame is None:
        raise SessionError(f"target index {target_index} beyond end of {target_path}")
    target = set_target(assets, config, target_frame)

    echoed = []
    prev_t = None

    def on_frame(frame_id, frame, guidance):
        nonlocal prev_t
        if speed == "realtime" and prev_t is not None and frame.t > prev_t:
            time.sleep(min(frame.t - prev_t, 1.0))
        prev_t = frame.t
        echoed.append(frame)

    result = run_session(assets, config, target, open_replay_file(session_path), on_frame)
    return target, echoed, result


def _print_summary(result, mode, out=None):
    out = out if out is not None else sys.stdout
    metrics = result.metrics
    print(f"mode: {mode}", file=out)
    print(f"samples: {metrics.sample_count} (skipped {result.frames_skipped})", file=out)
    print(f"RMSE_0: {metrics.rmse_0:g} m", file=out)
    print(f"RMSE_min: {metrics.rmse_min:g} m at t_min={metrics.t_min:g} s", file=out)
    print(f"R={metrics.accuracy_r:g}", file=out)
    if result.partial:
        print("warning: stream ended early; metrics are partial", file=out)


def _write_outputs(args, result, mode):
    report_text = render_report(result.metrics, result.samples, mode)
    if args.report_out:
        Path(args.report_out).write_text(report_text, encoding="utf-8")
    if args.csv_out:
        Path(args.csv_out).write_text(series_to_csv(result.samples), encoding="utf-8")


def cmd_gen_assets(args) -> int:
    assets = testbody.generate_test_assets(
        n_ring=args.n_ring, seed=args.seed, ring_spacing=args.ring_spacing
    )
    assets_io.save_assets_file(assets, args.out)
    print(f"{args.out}: N={assets.n_vertices} F={assets.n_faces} J={assets.n_joints}")
    return 0


def cmd_eval(args) -> int:
    assets, config = _load_setup(args)
    _, _, result = _score_poselog(
        assets, config, args.target, args.target_index, args.session
    )
    _print_summary(result, config.mode)
    _write_outputs(args, result, config.mode)
    return 0


def cmd_replay(args) -> int:
    assets, config = _load_setup(args)
    _, echoed, result = _score_poselog(
        assets, config, args.target, args.target_index, args.session, speed=args.speed
    )
    store = SessionStore(args.sessions_dir)
    report_path = store.persist(args.session_id, echoed, result, config.mode)
    _print_summary(result, config.mode)
    print(f"report: {report_path}")
    _write_outputs(args, result, config.mode)
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import ServiceState, build_app

    assets = assets_io.load_assets_file(args.assets)
    config = load_config_file(args.config) if args.config else SessionConfig()
    if args.mode:
        from dataclasses import replace

        config = replace(config, mode=args.mode)
    state = ServiceState(assets, config, args.sessions_dir)
    app = build_app(state, static_dir=args.static)
    host, _, port = args.bind.rpartition(":")
    if not host or not port.isdigit():
        print(f"--bind must be addr:port, got {args.bind!r}", file=sys.stderr)
        return 2
    uvicorn.run(app, host=host, port=int(port), log_level="info")
    return 0


def cmd_convert_report(args) -> int:
    report = parse_report(Path(args.report).read_text(encoding="utf-8"))
    csv_text = report_to_csv(report)
    if args.csv_out:
        Path(args.csv_out).write_text(csv_text, encoding="utf-8")
    else:
        sys.stdout.write(csv_text)
    return 0


_COMMANDS = {
    "gen-assets": cmd_gen_assets,
    "eval": cmd_eval,
    "replay": cmd_replay,
    "serve": cmd_serve,
    "convert-report": cmd_convert_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, FrameProtocolError, SessionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
