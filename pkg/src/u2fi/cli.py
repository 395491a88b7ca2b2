"""Command-line driver: ``u2fi checkin | op | checkout | attack | policy``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .cloud import DEFAULT_POLICY, OperationClass
from .net import EventLog, RadioConfig
from .scenario import (
    LOG_FILE,
    ScenarioConfig,
    World,
    default_state_dir,
    load_state,
    replay,
    run_attack,
    save_state,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--state-dir", type=Path, default=None, help="run directory (default: $U2FI_STATE_DIR or ./.u2fi)")
    p.add_argument("--auto-approve", action="store_true", help="approve every user-presence prompt")
    p.add_argument("--decline", action="store_true", help="decline every user-presence prompt without asking")
    p.add_argument("--quiet", "-q", action="store_true", help="do not print the event log")


def _add_scenario(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise-drop", type=float, default=0.0)
    p.add_argument("--noise-dup", type=float, default=0.0)
    p.add_argument("--noise-reorder", type=int, default=0)
    p.add_argument("--ssid", default="HotelGuest")
    p.add_argument("--passphrase", default="s3cret-infrastructure-psk")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="u2fi", description="U2F-gated IoT provisioning simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("checkin", help="enroll the token and provision devices")
    _add_common(p)
    _add_scenario(p)
    p.add_argument("--devices", type=int, default=1)

    p = sub.add_parser("op", help="run an operation on a provisioned device")
    _add_common(p)
    p.add_argument("device", help="device index or hex id")
    p.add_argument("command")

    p = sub.add_parser("checkout", help="remove the token and unbind every device")
    _add_common(p)

    p = sub.add_parser("attack", help="eavesdrop on a provisioning broadcast")
    _add_common(p)
    _add_scenario(p)
    p.add_argument("mode", choices=["legacy", "u2fi"])

    p = sub.add_parser("policy", help="show or edit the operation classification table")
    _add_common(p)
    p.add_argument("action", choices=["list", "set"])
    p.add_argument("command", nargs="?")
    p.add_argument("cls", nargs="?", choices=[c.value for c in OperationClass])
    return parser


def _approver(args):
    if args.auto_approve:
        return lambda info: True
    if args.decline or not sys.stdin.isatty():
        return lambda info: False

    def ask(info):
        answer = input(f"[gateway] token LED blinking for '{info['command']}'. Press the button? [y/N] ")
        return answer.strip().lower() in ("y", "yes")

    return ask


def _recording(approver, answers: list):
    def wrapped(info):
        ok = bool(approver(info))
        answers.append(ok)
        return ok

    return wrapped


def _emit(world: World, start: int, args, state_dir: Path | None) -> None:
    if not args.quiet:
        for rec in world.log.records[start:]:
            print(EventLog.render(rec))
    if state_dir is not None:
        state_dir.mkdir(parents=True, exist_ok=True)
        (state_dir / LOG_FILE).write_text(world.log.to_jsonl())


def _config_from_args(args, devices: int = 0) -> ScenarioConfig:
    noise = RadioConfig(args.noise_dup, args.noise_reorder, args.noise_drop, args.seed)
    return ScenarioConfig(
        seed=args.seed, device_count=devices, noise=noise, auto_approve=args.auto_approve,
        ssid=args.ssid, passphrase=args.passphrase,
    )


def cmd_checkin(args) -> int:
    state_dir = args.state_dir or default_state_dir()
    cfg = _config_from_args(args, args.devices)
    answers: list[bool] = []
    world = World(cfg, _recording(_approver(args), answers))
    ok = world.checkin()
    save_state(state_dir, cfg, [{"op": "checkin", "devices": args.devices, "answers": answers}])
    _emit(world, 0, args, state_dir)
    print(json.dumps(world.state_dump(), indent=1))
    return 0 if ok else 1


def _continue(args, action: dict):
    state_dir = args.state_dir or default_state_dir()
    cfg, journal = load_state(state_dir)
    world = replay(cfg, journal)
    start = len(world.log.records)
    answers: list[bool] = []
    world.approver = _recording(_approver(args), answers)
    result = world.apply(action)
    journal.append({**action, "answers": answers})
    save_state(state_dir, cfg, journal)
    _emit(world, start, args, state_dir)
    return world, result


def cmd_op(args) -> int:
    world, (ok, err) = _continue(args, {"op": "op", "device": args.device, "command": args.command})
    dev = world.device(args.device)
    cls = world.cloud.classify_operation(args.command).value
    ceremony = cls != OperationClass.NON_CRITICAL.value
    print(json.dumps({"device": dev.device_id.hex(), "command": args.command, "class": cls,
                      "ceremony": ceremony, "ok": ok, "error": err, "camera_on": dev.camera_on}))
    return 0 if ok else 1


def cmd_checkout(args) -> int:
    world, revoked = _continue(args, {"op": "checkout"})
    all_revoked = all(d.phase.value == "revoked" for d in world.devices)
    print(json.dumps({"revoked": revoked, "all_devices_revoked": all_revoked}))
    return 0 if all_revoked else 1


def cmd_attack(args) -> int:
    cfg = _config_from_args(args)
    report = run_attack(cfg, args.mode)
    log = report.pop("log")
    _emit_log = not args.quiet
    if _emit_log:
        for rec in log.records:
            print(EventLog.render(rec))
    if args.state_dir is not None:
        args.state_dir.mkdir(parents=True, exist_ok=True)
        (args.state_dir / LOG_FILE).write_text(log.to_jsonl())
    shown = dict(report)
    shown["passphrase_recovered"] = report["passphrase_recovered"] or "none"
    print(json.dumps(shown, indent=1))
    if args.mode == "legacy":
        return 0 if report["passphrase_recovered"] == cfg.passphrase else 1
    return 0 if report["passphrase_recovered"] is None and report["honest_device_decoded"] else 1


def cmd_policy(args) -> int:
    if args.action == "set":
        if not args.command or not args.cls:
            print("usage: u2fi policy set COMMAND CLASS", file=sys.stderr)
            return 2
        world, _ = _continue(args, {"op": "policy", "command": args.command, "cls": args.cls})
        table = world.cloud.policy
    else:
        state_dir = args.state_dir or default_state_dir()
        try:
            cfg, journal = load_state(state_dir)
            table = replay(cfg, journal).cloud.policy
        except FileNotFoundError:
            table = dict(DEFAULT_POLICY)
    for cmd, cls in sorted(table.items()):
        print(f"{cmd}\t{cls.value}")
    print(f"*\t{OperationClass.NON_CRITICAL.value}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"checkin": cmd_checkin, "op": cmd_op, "checkout": cmd_checkout,
                "attack": cmd_attack, "policy": cmd_policy}[args.cmd](args)
    except FileNotFoundError as exc:
        print(f"u2fi: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"u2fi: {exc.args[0]}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
