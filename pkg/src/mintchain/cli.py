"""Command-line entry points.

Exit codes: 0 on success, 1 on an operational failure (unreachable
service, aborted transaction, failed audit or verification), 2 on a usage
error (bad flags, missing or malformed config and key files).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__, crypto
from .audit import all_passed, audit_period
from .bank import Bank, PeriodArchive
from .client import Wallet, avalidate_transaction
from .config import ConfigError, load_node_config, load_sim_config, read_key, read_public_key, write_key
from .fx import ExchangeTerms, OutcomeKind, Role, link_exchanges, run_exchange
from .messages import CoinsReq, InfoReq
from .mintette import EpochPolicy, Mintette
from .net.bench import latency_profile, throughput_sweep, write_json
from .net.sim import SimConfig, run_scenario
from .net.sockets import BankServer, MintetteServer, SocketNetwork, SocketTransport, parse_endpoint

log = logging.getLogger("mintchain")


class UsageError(Exception):
    pass


class OperationalError(Exception):
    pass


def _say(*parts) -> None:
    print(*parts, flush=True)


# -- keygen ------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    out = Path(args.output)
    if out.exists() and not args.force:
        raise UsageError(f"{out} exists; pass --force to overwrite")
    seed = args.seed.encode() if args.seed is not None else None
    kp = crypto.keygen(seed, args.scheme)
    write_key(out, kp)
    _say(kp.pk.hex())
    return 0


# -- services ----------------------------------------------------------------------


def cmd_run_mintette(args) -> int:
    cfg = load_node_config(Path(args.config))
    if cfg.role != "mintette":
        raise UsageError(f"{args.config} configures a {cfg.role}, not a mintette")
    host, port = parse_endpoint(cfg.listen)
    node = Mintette(
        cfg.mintette_id,
        read_key(cfg.key),
        epoch_policy=EpochPolicy(cfg.epoch_entries, cfg.epoch_seconds),
    )

    async def serve():
        server = await MintetteServer(node, host, port).start()
        _say(f"mintette {node.id} listening on {server.endpoint}")
        await server.serve_forever()

    return _run_service(serve())


def cmd_run_bank(args) -> int:
    cfg = load_node_config(Path(args.config))
    if cfg.role != "bank":
        raise UsageError(f"{args.config} configures a {cfg.role}, not a bank")
    periods = cfg.periods if args.periods is None else args.periods
    host, port = parse_endpoint(cfg.listen)
    kp = read_key(cfg.key)
    bank = Bank(kp, shard_size=cfg.shard_size)

    async def serve():
        net = SocketNetwork(bank, remote=cfg.mintettes)
        try:
            await net.start(cfg.allocations, cfg.reserve)
        except (ConnectionError, OSError) as exc:
            raise OperationalError(str(exc)) from exc
        cfg.archive_dir.mkdir(parents=True, exist_ok=True)
        (cfg.archive_dir / "bank.pub").write_text(kp.pk.hex() + "\n")
        server = await BankServer(bank, cfg.mintettes, host, port).start()
        _say(f"bank listening on {server.endpoint}, period {bank.period}")
        done = 0
        try:
            while periods == 0 or done < periods:
                await asyncio.sleep(cfg.period_seconds)
                archive = await net.end_period()
                paths = archive.write(cfg.archive_dir)
                _say(f"sealed period {archive.period}: {len(archive.block.txset)} txs -> {paths[0]}")
                done += 1
        finally:
            await server.close()
            await net.close()

    return _run_service(serve())


def _run_service(coro) -> int:
    try:
        asyncio.run(coro)
    except KeyboardInterrupt:
        return 0
    except OSError as exc:
        raise OperationalError(str(exc)) from exc
    return 0


# -- send-tx -----------------------------------------------------------------------


def cmd_send_tx(args) -> int:
    bank_ep = args.bank or os.environ.get("MINTCHAIN_BANK")
    if not bank_ep:
        raise UsageError("no bank endpoint: pass --bank or set MINTCHAIN_BANK")
    parse_endpoint(bank_ep)
    kp = read_key(Path(args.key))
    to = read_public_key(args.to)
    if args.amount <= 0:
        raise UsageError("amount must be positive")

    async def send():
        bank = SocketTransport({"bank": bank_ep}, timeout=args.timeout)
        try:
            info = await bank.call("bank", InfoReq())
            coins = await bank.call("bank", CoinsReq(kp.pk))
        finally:
            await bank.close()
        if info is None or coins is None:
            raise OperationalError(f"bank at {bank_ep} did not answer")
        wallet = Wallet(kp)
        for entry in coins.coins:
            wallet.coins[entry.addr_id] = entry.output
        try:
            tx = wallet.pay(to, args.amount, fee=args.fee, memo=args.memo.encode())
        except ValueError as exc:
            raise OperationalError(str(exc)) from exc
        transport = SocketTransport(dict(info.endpoints), timeout=args.timeout)
        try:
            return await avalidate_transaction(
                tx, info.period, transport, info.shard_map, short_circuit=args.short_circuit
            )
        finally:
            await transport.close()

    receipt = asyncio.run(send())
    _say(
        json.dumps(
            {
                "tx": receipt.tx.hash.hex(),
                "status": receipt.status.value,
                "reason": receipt.reason.value if receipt.reason else None,
                "period": receipt.period,
                "messages": receipt.messages,
            }
        )
    )
    return 0 if receipt.sealed else 1


# -- bench -------------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_bench(args) -> int:
    base = load_sim_config(Path(args.config)) if args.config else SimConfig()
    overrides = {}
    if args.mintettes is not None:
        overrides["mintettes"] = args.mintettes
    if args.shard_size is not None:
        overrides["shard_size"] = args.shard_size
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.latency is not None:
        overrides["latency_ms"] = args.latency
    cfg = replace(base, **overrides)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.output)

    if args.sockets:
        payload = asyncio.run(_socket_bench(cfg, args.txs))
    elif args.sweep:
        sweep = throughput_sweep(args.sweep, cfg.shard_size, cfg if args.config else None)
        payload = {"kind": "sweep", **sweep.to_dict()}
    elif args.profile:
        prof = latency_profile(cfg)
        payload = {"kind": "latency", **prof.summary(), "total_ms_samples": prof.total_ms}
    else:
        res = run_scenario(cfg)
        payload = {"kind": "bench", "config": _config_dict(cfg), **res.bench.to_dict()}
        payload["trace_digest"] = res.trace_digest()
    write_json(out, payload)
    _say(f"wrote {out}")
    return 0


def _config_dict(cfg: SimConfig) -> dict:
    d = dict(cfg.__dict__)
    d["behaviours"] = {str(k): v.value for k, v in cfg.behaviours.items()}
    return d


async def _socket_bench(cfg: SimConfig, txs: int) -> dict:
    users = [Wallet(crypto.keygen(b"bench/user%d" % i, cfg.scheme)) for i in range(2)]
    allocations = [(users[0].address, 10) for _ in range(txs)]
    net = SocketNetwork.create(cfg.mintettes, cfg.shard_size, seed=b"bench", scheme=cfg.scheme)
    async with net:
        await net.start(allocations)
        for tx in net.bank.chain[0].txset:
            users[0].receive(tx)
        coins = sorted(users[0].coins)
        lat = []
        t0 = time.perf_counter()
        for a in coins:
            s = time.perf_counter()
            r = await net.submit(users[0].pay(users[1].address, 10, inputs=[a]))
            lat.append(time.perf_counter() - s)
            if not r.sealed:
                raise OperationalError(f"transaction {r.tx.hash.hex()} aborted: {r.reason}")
        elapsed = time.perf_counter() - t0
    return {
        "kind": "sockets",
        "mintettes": cfg.mintettes,
        "shard_size": cfg.shard_size,
        "txs": len(lat),
        "throughput": len(lat) / elapsed if elapsed else 0.0,
        "latency_s": {"mean": sum(lat) / len(lat), "max": max(lat)},
    }


# -- audit -------------------------------------------------------------------------


def cmd_audit(args) -> int:
    block, logs = Path(args.block), Path(args.logs)
    for p in (block, logs):
        if not p.is_file():
            raise UsageError(f"{p}: no such file")
    if args.bank_pk:
        bank_pk = read_public_key(args.bank_pk)
    elif (block.parent / "bank.pub").is_file():
        bank_pk = bytes.fromhex((block.parent / "bank.pub").read_text().strip())
    else:
        raise UsageError("bank public key unknown: pass --bank-pk or place bank.pub beside the block")
    try:
        archive = PeriodArchive.read(block, logs)
    except ValueError as exc:
        # unreadable archives count as failed verification
        _say(f"FAIL cannot decode archive: {exc}")
        return 1
    reports = audit_period(archive, bank_pk, min_fraction=args.min_fraction, threshold=args.threshold)
    ok = all_passed(reports)
    payload = {
        "period": archive.period,
        "passed": ok,
        "reports": [r.to_dict() for r in reports],
    }
    out = Path(args.output) if args.output else block.with_suffix(".audit.json")
    write_json(out, payload)
    for r in reports:
        _say(f"{'PASS' if r.passed else 'FAIL'} {r.property.value}" + (f" implicated={sorted(r.implicated())}" if not r.passed else ""))
    _say(f"report: {out}")
    return 0 if ok else 1


# -- fx-demo -----------------------------------------------------------------------


def _abort_arg(text: str) -> tuple[Role, int]:
    role, _, k = text.partition(":")
    try:
        return Role(role.upper()), int(k)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"abort must look like B:2, got {text!r}") from exc


def cmd_fx_demo(args) -> int:
    terms = ExchangeTerms(args.offered, args.wanted, args.m, args.n, args.t1, args.t2)
    try:
        terms.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    approved = [] if args.unapproved else None
    outcome = run_exchange(terms, approved=approved, abort=args.abort)
    for party, action, target, detail in outcome.trace:
        _say(f"{party:>2} {action:<8} {target:<6} {detail}")
    for (role, cur), delta in sorted(outcome.deltas.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        if delta:
            _say(f"{role.value} {cur}: {delta:+d}")
    for link in link_exchanges(outcome.ledgers[terms.offered], outcome.ledgers[terms.wanted]):
        _say(f"linked exchange h={link.h.hex()[:16]} secret revealed: {link.secret is not None}")
    _say(f"outcome: {outcome.kind.value}")
    return 0 if outcome.kind is not OutcomeKind.UNFAIR else 1


# -- plot --------------------------------------------------------------------------


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    src = Path(args.input)
    if not src.is_file():
        raise UsageError(f"{src}: no such file")
    try:
        data = json.loads(src.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{src}: not JSON ({exc})") from exc
    kind = data.get("kind")
    fig, ax = plt.subplots(figsize=(6, 4))
    if kind == "sweep":
        ms = [p["mintettes"] for p in data["points"]]
        ax.errorbar(
            ms,
            [p["steady_throughput"] for p in data["points"]],
            yerr=[p["throughput_stderr"] for p in data["points"]],
            marker="o",
            label="steady throughput",
        )
        if data.get("fit_ms"):
            xs = data["fit_ms"]
            ax.plot(xs, [data["slope"] * x + data["intercept"] for x in xs], "--", label=f"fit R²={data['r_squared']:.3f}")
        ax.set_xlabel("mintettes")
        ax.set_ylabel("transactions / s")
        ax.legend()
    elif kind in ("latency", "bench"):
        samples = data.get("total_ms_samples") or data.get("total_ms") or []
        if not samples:
            raise UsageError(f"{src}: no latency samples to plot")
        ax.hist(samples, bins=30)
        ax.set_xlabel("2PC latency (ms)")
        ax.set_ylabel("transactions")
    else:
        raise UsageError(f"{src}: unknown result kind {kind!r}")
    out = Path(args.output)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    _say(f"wrote {out}")
    return 0


# -- wiring ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mintchain", description="Centrally banked sharded ledger tools.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log debug output to stderr")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    k = sub.add_parser("keygen", help="write a new key file")
    k.add_argument("-o", "--output", required=True)
    k.add_argument("--scheme", choices=["ed25519", "test"], default="ed25519")
    k.add_argument("--seed", help="derive the key deterministically (testing only)")
    k.add_argument("--force", action="store_true")
    k.set_defaults(func=cmd_keygen)

    m = sub.add_parser("run-mintette", help="serve one mintette until interrupted")
    m.add_argument("-c", "--config", required=True)
    m.set_defaults(func=cmd_run_mintette)

    b = sub.add_parser("run-bank", help="coordinate periods and serve clients")
    b.add_argument("-c", "--config", required=True)
    b.add_argument("--periods", type=int, help="stop after this many periods (0 runs forever)")
    b.set_defaults(func=cmd_run_bank)

    s = sub.add_parser("send-tx", help="pay an address through the live network")
    s.add_argument("--key", required=True, help="payer key file")
    s.add_argument("--to", required=True, help="recipient public key (hex) or key file")
    s.add_argument("--amount", type=int, required=True)
    s.add_argument("--fee", type=int, default=0)
    s.add_argument("--memo", default="")
    s.add_argument("--bank", help="bank endpoint host:port (default $MINTCHAIN_BANK)")
    s.add_argument("--timeout", type=float, default=2.0)
    s.add_argument("--short-circuit", action="store_true", help="stop querying once a quorum voted")
    s.set_defaults(func=cmd_send_tx)

    be = sub.add_parser("bench", help="run a benchmark and write its result as JSON")
    mode = be.add_mutually_exclusive_group(required=True)
    mode.add_argument("--sim", action="store_true", help="discrete-event simulator")
    mode.add_argument("--sockets", action="store_true", help="loopback TCP deployment")
    be.add_argument("-M", "--mintettes", type=int)
    be.add_argument("-Q", "--shard-size", type=int)
    be.add_argument("--config", help="scenario file with [scenario] and [behaviours] sections")
    be.add_argument("--seed", type=int)
    be.add_argument("--latency", type=float, help="link latency in ms")
    be.add_argument("--sweep", type=_int_list, help="comma-separated M values for a throughput sweep")
    be.add_argument("--profile", action="store_true", help="per-phase latency profile")
    be.add_argument("--txs", type=int, default=50, help="transactions for --sockets")
    be.add_argument("-o", "--output", default="bench.json")
    be.set_defaults(func=cmd_bench)

    a = sub.add_parser("audit", help="audit one published period")
    a.add_argument("block")
    a.add_argument("logs")
    a.add_argument("--bank-pk", help="hex public key or key file of the bank")
    a.add_argument("-o", "--output", help="report path (default: <block>.audit.json)")
    a.add_argument("--min-fraction", type=float, default=0.0)
    a.add_argument("--threshold", type=float, default=2 / 3)
    a.set_defaults(func=cmd_audit)

    f = sub.add_parser("fx-demo", help="run a fair exchange over two in-process ledgers")
    f.add_argument("--offered", default="gbp")
    f.add_argument("--wanted", default="usd")
    f.add_argument("--m", type=int, default=50)
    f.add_argument("--n", type=int, default=60)
    f.add_argument("--t1", type=int, default=4)
    f.add_argument("--t2", type=int, default=2)
    f.add_argument("--abort", type=_abort_arg, help="ROLE:K, the party walks away after K moves")
    f.add_argument("--unapproved", action="store_true", help="approver rejects the currency pair")
    f.set_defaults(func=cmd_fx_demo)

    pl = sub.add_parser("plot", help="chart a bench JSON result")
    pl.add_argument("input")
    pl.add_argument("-o", "--output", default="plot.png")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mintchain {args.verb}: {exc}", file=sys.stderr)
        return 2
    except (OperationalError, ConnectionError) as exc:
        print(f"mintchain {args.verb}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
