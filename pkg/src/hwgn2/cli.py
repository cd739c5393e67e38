"""Command-line front end: compile models, run oblivious-inference
sessions (loopback or TCP), run leakage campaigns, and print communication
accounting.  Reports go to stdout as JSON followed by a human summary.

Exit codes: 0 success, 1 protocol/verdict failure (aborted session,
cut-and-choose cheat, leak detected), 2 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import channels, leakage, protocol
from .channels import ChannelError
from .mips import AsmError, MipsProgram, assemble, disassemble
from .mips.emulator import CpuStepConfig
from .nncompile import (ModelError, binarize, compile_bnn, compile_mlp,
                        from_q, load_model, step_config_for)
from .protocol import CheatDetected, ProtocolError, SessionConfig


class UsageError(Exception):
    pass


def _load_program(path: str) -> MipsProgram:
    try:
        return assemble(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except AsmError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _parse_input(spec: str) -> list[int]:
    """Input words: a path to a whitespace/comma separated file, or an
    inline comma-separated list."""
    text = spec
    if Path(spec).is_file():
        text = Path(spec).read_text()
    try:
        return [int(tok, 0) & 0xFFFFFFFF
                for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"bad input word: {exc}") from None


def _parse_mode(spec: str) -> tuple[str, int]:
    if spec == "full":
        return "full", 1
    if spec.startswith("stream:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad mode {spec!r}") from None
        if k < 1:
            raise UsageError("stream batch size must be >= 1")
        return "stream", k
    raise UsageError(f"mode must be 'full' or 'stream:K', got {spec!r}")


def _parse_security(spec: str) -> tuple[str, int]:
    if spec == "hbc":
        return "hbc", 1
    if spec.startswith("malicious:"):
        try:
            s = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad security {spec!r}") from None
        return "malicious", s
    raise UsageError(f"security must be 'hbc' or 'malicious:S', got {spec!r}")


def _parse_addr(spec: str) -> tuple[str, int]:
    host, _, port = spec.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise UsageError(f"bad address {spec!r}") from None


def _seed_bytes(spec: str | None) -> bytes:
    if spec is None:
        return secrets.token_bytes(32)
    try:
        raw = bytes.fromhex(spec)
    except ValueError:
        raise UsageError("--seed must be a hex string") from None
    if not raw:
        raise UsageError("--seed must not be empty")
    return (raw * (32 // len(raw) + 1))[:32]


def _emit(report: dict, summary: list[str]) -> None:
    print(json.dumps(report, indent=2, sort_keys=False))
    for line in summary:
        print(line)


# ---------------------------------------------------------------------------
# Subcommands.

def cmd_compile(args) -> int:
    try:
        model = load_model(args.model)
        if args.bnn:
            program = compile_bnn(binarize(model))
        else:
            program = compile_mlp(model)
    except (ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    Path(args.output).write_text(disassemble(program))
    cpu = step_config_for(program)
    _emit({
        "command": "compile",
        "model": args.model,
        "bnn": bool(args.bnn),
        "output": args.output,
        "instructions": len(program),
        "dmem_words_used": len(program.dmem_init_garbler),
        "dmem_words_configured": cpu.dmem_words,
        "multiplier": cpu.include_mult,
    }, [f"compiled {args.model} -> {args.output}: {len(program)} "
        f"instructions, dmem {cpu.dmem_words} words"
        f"{' (binarized, multiplier-free core)' if args.bnn else ''}"])
    return 0


def _session_config(args, cpu: CpuStepConfig, seed: bytes) -> SessionConfig:
    mode, k = _parse_mode(args.mode)
    security, s = _parse_security(args.security)
    try:
        return SessionConfig(mode=mode, instructions_per_round=k,
                             security=security, copies=s, fresh_seed=seed,
                             cpu=cpu, output_hiding=args.hide_output)
    except ProtocolError as exc:
        raise UsageError(str(exc)) from None


def _run_report(args, seed: bytes, cfg: SessionConfig, role: str,
                y, stats, side_info, verdict, elapsed) -> dict:
    return {
        "command": "run",
        "role": role,
        "mode": args.mode,
        "security": args.security,
        "seed": seed.hex(),
        "y": y,
        "y_fixed_point": ([from_q((v - (1 << 32) if v >> 31 else v))
                           for v in y] if y is not None else None),
        "comm_stats": asdict(stats),
        "side_info": ({"step_count": side_info.step_count,
                       "step_netlist_shape": list(side_info.step_netlist_shape),
                       "nothing_else": side_info.nothing_else}
                      if side_info else None),
        "verdict": verdict,
        "seconds": round(elapsed, 3),
    }


def cmd_run(args) -> int:
    seed = _seed_bytes(args.seed)
    endpoints = [bool(args.loopback), bool(args.listen), bool(args.connect)]
    if sum(endpoints) != 1:
        raise UsageError("pick exactly one of --loopback, --listen, --connect")

    if args.connect:
        # evaluator role: needs input only; CPU shape arrives in-protocol
        if args.input is None:
            raise UsageError("evaluator needs --input")
        x = _parse_input(args.input)
        cfg = _session_config(args, CpuStepConfig(), seed)
        t0 = time.time()
        ch = channels.tcp_connect(*_parse_addr(args.connect))
        try:
            res = protocol.run_evaluator(cfg, x, ch, rng_seed=seed)
        finally:
            ch.close()
        _emit(_run_report(args, seed, cfg, "evaluator", res.y, res.stats,
                          None, res.verdict, time.time() - t0),
              [f"y = {res.y}", f"verdict {res.verdict}",
               f"rounds {res.stats.ot_rounds}"])
        return 0

    if args.program is None:
        raise UsageError("garbler needs a program file")
    program = _load_program(args.program)
    cpu = step_config_for(program)
    cfg = _session_config(args, cpu, seed)

    if args.listen:
        t0 = time.time()
        ch = channels.tcp_listen(*_parse_addr(args.listen))
        try:
            res = protocol.run_garbler(cfg, program, ch)
        finally:
            ch.close()
        _emit(_run_report(args, seed, cfg, "garbler", None, res.stats,
                          res.side_info, "OK", time.time() - t0),
              [f"served {res.side_info.step_count} garbled steps",
               f"rounds {res.stats.ot_rounds}"])
        return 0

    if args.input is None:
        raise UsageError("loopback run needs --input")
    x = _parse_input(args.input)
    _, n_in = program.evaluator_input_region
    if len(x) != n_in:
        raise UsageError(f"program expects {n_in} input words, got {len(x)}")
    t0 = time.time()
    er, gr = protocol.run_session(cfg, program, x, rng_seed=seed)
    _emit(_run_report(args, seed, cfg, "loopback", er.y, er.stats,
                      gr.side_info, er.verdict, time.time() - t0),
          [f"y = {er.y}", f"verdict {er.verdict}",
           f"rounds {er.stats.ot_rounds} "
           f"(g->e {er.stats.bytes_garbler_to_evaluator} bytes, "
           f"e->g {er.stats.bytes_evaluator_to_garbler} bytes)"])
    return 0


def cmd_leakage(args) -> int:
    program = _load_program(args.program)
    cpu = step_config_for(program)
    _, n_in = program.evaluator_input_region
    if args.fixed_input:
        x_fixed = _parse_input(args.fixed_input)
        if len(x_fixed) != n_in:
            raise UsageError(f"program expects {n_in} fixed input words")
    else:
        x_fixed = [0xFFFFFFFF] * n_in
    model = leakage.LeakageModel(noise_sigma=args.sigma,
                                 samples_per_step=args.samples_per_step)
    seed = None if args.seed is None else int(args.seed, 16)
    t0 = time.time()
    traces = leakage.make_campaign(program, cpu, args.target, args.traces,
                                   x_fixed, model, seed=seed)
    scores = leakage.welch_t(traces)
    verdict = leakage.tvla_verdict(scores)

    stem = Path(args.out)
    files = {}
    for name, mask in (("fixed", traces.populations == 0),
                       ("random", traces.populations == 1)):
        sub = leakage.TraceSet(traces=traces.traces[mask],
                               populations=traces.populations[mask],
                               samples_per_step=traces.samples_per_step,
                               target=traces.target)
        path = stem.with_name(stem.name + f"_{name}.trc")
        leakage.export_traces(sub, path)
        files[name] = str(path)
    csv_path = stem.with_name(stem.name + "_tscores.csv")
    with open(csv_path, "w") as f:
        f.write("sample,t\n")
        for i, t in enumerate(scores.t):
            f.write(f"{i},{t!r}\n")
    files["tscores"] = str(csv_path)

    _emit({
        "command": "leakage",
        "target": args.target,
        "traces": traces.n_traces,
        "samples": traces.n_samples,
        "sigma": args.sigma,
        "max_abs_t": verdict.max_abs_t,
        "n_exceeding": verdict.n_exceeding,
        "threshold": verdict.threshold,
        "verdict": "FAIL" if verdict.leaks else "PASS",
        "files": files,
        "seconds": round(time.time() - t0, 3),
    }, [f"{args.target}: {'FAIL' if verdict.leaks else 'PASS'} "
        f"(max |t| = {verdict.max_abs_t:.2f}, threshold "
        f"{verdict.threshold}, {traces.n_traces} traces)"])
    return 1 if verdict.leaks else 0


def cmd_account(args) -> int:
    program = _load_program(args.program)
    cpu = step_config_for(program)
    mode, k = _parse_mode(args.mode)
    cfg = SessionConfig(mode=mode, instructions_per_round=k, cpu=cpu)
    stats = protocol.account(cfg, program)
    T = len(protocol.instruction_trace(program, cpu, cfg.step_limit))
    _emit({
        "command": "account",
        "mode": args.mode,
        "steps": T,
        "predicted": asdict(stats),
    }, [f"T = {T} steps, mode {args.mode}",
        f"rounds {stats.ot_rounds}",
        f"garbler->evaluator {stats.bytes_garbler_to_evaluator} bytes",
        f"evaluator->garbler {stats.bytes_evaluator_to_garbler} bytes",
        f"peak resident tables {stats.peak_resident_tables}, "
        f"labels {stats.peak_resident_labels}"])
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hwgn2",
        description="Oblivious DL inference on a garbled CPU, with a "
                    "simulated power-leakage laboratory.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    c = sub.add_parser("compile", help="compile a model file to a program")
    c.add_argument("model")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--bnn", action="store_true",
                   help="binarize and emit an XNOR-popcount program")
    c.set_defaults(func=cmd_compile)

    r = sub.add_parser("run", help="run one oblivious-inference session")
    r.add_argument("program", nargs="?",
                   help="program file (garbler/loopback roles)")
    r.add_argument("--input", help="input words: file or comma list")
    r.add_argument("--mode", default="full", help="full | stream:K")
    r.add_argument("--security", default="hbc", help="hbc | malicious:S")
    r.add_argument("--loopback", action="store_true",
                   help="run both roles in this process")
    r.add_argument("--listen", metavar="HOST:PORT",
                   help="serve the garbler role over TCP")
    r.add_argument("--connect", metavar="HOST:PORT",
                   help="run the evaluator role over TCP")
    r.add_argument("--hide-output", action="store_true",
                   help="return a masked one-time MAC instead of plain y")
    r.add_argument("--seed", help="hex session seed (default: OS entropy)")
    r.set_defaults(func=cmd_run)

    lk = sub.add_parser("leakage", help="run a fixed-vs-random campaign")
    lk.add_argument("program")
    lk.add_argument("--target", required=True, choices=leakage.TARGETS)
    lk.add_argument("--traces", type=int, default=100)
    lk.add_argument("--sigma", type=float, default=1.0)
    lk.add_argument("--samples-per-step", type=int, default=4)
    lk.add_argument("--fixed-input", help="fixed-population input words")
    lk.add_argument("--out", required=True,
                    help="output stem for .trc and .csv files")
    lk.add_argument("--seed", help="hex campaign seed")
    lk.set_defaults(func=cmd_leakage)

    a = sub.add_parser("account", help="predict rounds/bytes without running")
    a.add_argument("program")
    a.add_argument("--mode", default="stream:1", help="full | stream:K")
    a.set_defaults(func=cmd_account)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ModelError, leakage.LeakageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, ChannelError, CheatDetected) as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
