"""Command-line entry point.

Exit codes: 0 ok, 1 usage, 2 scenario error, 3 policy failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shlex
import sys
from pathlib import Path

from . import harness
from .catalog import catalog
from .metrics import aggregate_suite, render_closed_loop_table, score_episode
from .remote import EchoServer, serve_stdio
from .report import build_report
from .scenario import ScenarioError, serialize_scenario

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_POLICY = 0, 1, 2, 3
POLICIES = ("oracle", "no-cot", "remote")

# flag name -> (config key, default)
_RUN_KEYS = {
    "scenario": None,
    "policy": "oracle",
    "endpoint": None,
    "seed": 0,
    "out": None,
    "dt": 0.1,
    "ticks_max": None,
    "timeout_ms": 2000,
    "detection_range": 50.0,
    "jobs": 1,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_run_flags(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", help="catalog name or path to a scenario file")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--endpoint", help="remote endpoint, host:port or exec:<command>")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default $XDRIVE_OUT or ./runs)")
    p.add_argument("--dt", type=float)
    p.add_argument("--ticks-max", type=int)
    p.add_argument("--timeout-ms", type=int)
    p.add_argument("--detection-range", type=float, help="perception range in metres (default 50)")
    p.add_argument("--config", help="JSON file with defaults for these flags; flags win")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="xdrive", description="closed-loop driving with staged reasoning")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one episode")
    _add_run_flags(p)

    p = sub.add_parser("suite", help="run every catalog scenario")
    _add_run_flags(p, scenario=False)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("report", help="render metric tables, CSV and figures from logs")
    p.add_argument("--logs", help="directory of episode logs (default: output directory)")
    p.add_argument("--out", help="report directory (default: <logs>/report)")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("catalog", help="list built-in scenarios")
    p.add_argument("--write", metavar="DIR", help="write each scenario as a file into DIR")

    p = sub.add_parser("protocol-echo", help="remote-protocol self-test against the canned server")
    p.add_argument("--endpoint", help="test an external endpoint instead of the bundled server")
    p.add_argument("--transport", choices=("tcp", "stdio"), default="tcp")
    p.add_argument("--scenario", default="default_driving")
    p.add_argument("--out")
    p.add_argument("--timeout-ms", type=int, default=2000)
    p.add_argument("--serve", metavar="HOST:PORT", help="only run the canned server on this address")
    p.add_argument("--stdio", action="store_true", help="only run the canned server on stdin/stdout")
    p.add_argument("--delay-ms", type=int, default=0)
    p.add_argument("--delay-first", type=int)
    return ap


def _settings(args) -> dict:
    conf = {}
    if getattr(args, "config", None):
        try:
            conf = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(conf, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(conf) - set(_RUN_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in _RUN_KEYS.items():
        val = getattr(args, key, None)
        out[key] = val if val is not None else conf.get(key, default)
    if out["out"] is None:
        out["out"] = harness.default_out_dir()
    if out["policy"] not in POLICIES:
        raise UsageError(f"unknown policy {out['policy']!r}")
    if out["policy"] == "remote" and not out["endpoint"]:
        raise UsageError("--policy remote needs --endpoint")
    if not out["dt"] > 0:
        raise UsageError("--dt must be > 0")
    if not out["detection_range"] > 0:
        raise UsageError("--detection-range must be > 0")
    return out


def _run_config(s: dict, scenario: str) -> harness.RunConfig:
    return harness.RunConfig(
        scenario=scenario,
        policy=s["policy"],
        endpoint=s["endpoint"],
        seed=s["seed"],
        out_dir=s["out"],
        dt=s["dt"],
        ticks_max=s["ticks_max"],
        timeout_ms=s["timeout_ms"],
        detection_range=s["detection_range"],
    )


def _summary(ep) -> str:
    res = score_episode(ep)
    kinds = ",".join(e.kind for e in res.infractions) or "none"
    return (
        f"{ep.scenario:<26} {ep.policy:<7} {ep.terminal:<15} completion {res.route_completion:.3f} "
        f"DS {res.driving_score:6.2f} success {'yes' if res.success else 'no '} infractions {kinds}"
    )


def cmd_run(args) -> int:
    s = _settings(args)
    if not s["scenario"]:
        raise UsageError("run needs --scenario")
    ep = harness.run_episode(_run_config(s, s["scenario"]))
    print(_summary(ep))
    print(f"log: {ep.path}")
    return EXIT_POLICY if ep.terminal == "policy_failure" else EXIT_OK


def cmd_suite(args) -> int:
    s = _settings(args)
    logs = harness.run_suite(
        policy=s["policy"], out_dir=s["out"], seed=s["seed"], jobs=max(1, s["jobs"]),
        endpoint=s["endpoint"], dt=s["dt"], ticks_max=s["ticks_max"], timeout_ms=s["timeout_ms"],
        detection_range=s["detection_range"],
    )
    for ep in logs:
        print(_summary(ep))
    ds, sr = aggregate_suite([score_episode(ep) for ep in logs])
    print()
    print(render_closed_loop_table([(s["policy"], ds, sr)]))
    return EXIT_POLICY if any(ep.terminal == "policy_failure" for ep in logs) else EXIT_OK


def cmd_report(args) -> int:
    logs_dir = Path(args.logs or harness.default_out_dir())
    out_dir = Path(args.out) if args.out else logs_dir / "report"
    try:
        logs = harness.load_logs(logs_dir)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    print(build_report(logs, out_dir, figures=not args.no_figures))
    print(f"\nwritten to {out_dir}")
    return EXIT_OK


def cmd_catalog(args) -> int:
    specs = catalog()
    if args.write:
        d = Path(args.write)
        d.mkdir(parents=True, exist_ok=True)
        for spec in specs:
            (d / f"{spec.name}.scn").write_text(serialize_scenario(spec), encoding="utf-8")
    for spec in specs:
        print(f"{spec.name:<26} {spec.description}")
    return EXIT_OK


def cmd_protocol_echo(args) -> int:
    if args.stdio:
        serve_stdio(args.delay_ms, args.delay_first)
        return EXIT_OK
    if args.serve:
        host, _, port = args.serve.rpartition(":")
        if not port.isdigit():
            raise UsageError("--serve needs HOST:PORT")
        srv = EchoServer(host or "127.0.0.1", int(port), args.delay_ms, args.delay_first)
        print(srv.endpoint, flush=True)
        try:
            srv.serve_forever()
        except KeyboardInterrupt:
            pass
        return EXIT_OK

    server = None
    endpoint = args.endpoint
    if endpoint is None:
        if args.transport == "stdio":
            cmd = [sys.executable, "-m", "xdrive", "protocol-echo", "--stdio", "--delay-ms", str(args.delay_ms)]
            if args.delay_first is not None:
                cmd += ["--delay-first", str(args.delay_first)]
            endpoint = "exec:" + shlex.join(cmd)
        else:
            server = EchoServer(delay_ms=args.delay_ms, delay_first=args.delay_first).start()
            endpoint = server.endpoint
    try:
        cfg = harness.RunConfig(
            scenario=args.scenario,
            policy="remote",
            endpoint=endpoint,
            out_dir=args.out or harness.default_out_dir(),
            timeout_ms=args.timeout_ms,
        )
        ep = harness.run_episode(cfg)
    finally:
        if server is not None:
            server.stop()
    degraded = sum(1 for t in ep.ticks if t.get("status") != "ok")
    print(_summary(ep))
    print(f"ticks {len(ep.ticks)} degraded {degraded} log: {ep.path}")
    return EXIT_POLICY if ep.terminal == "policy_failure" else EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "suite": cmd_suite,
    "report": cmd_report,
    "catalog": cmd_catalog,
    "protocol-echo": cmd_protocol_echo,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        print(f"xdrive: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"xdrive: scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO


if __name__ == "__main__":
    sys.exit(main())
