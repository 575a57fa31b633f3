"""Command-line entry point: manifests in, CSV/JSON artifacts out.

Every artifact embeds the manifest hash and seed.  Replicas fan out over a
worker pool keyed by replica index, so outputs are byte-identical for a given
(argv, seed) regardless of the thread count.  Exit codes: 0 success, 1 domain
error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import engine, stats
from .core import InitialCondition, RunManifest
from .detcfg import collapse, collapse_margin, unambiguity_margin
from .errors import AmbiguousConfigurationError, BbbError
from .lineage import detect_A, detect_B, simulate_bbm_embedded


def _add_manifest_flags(p: argparse.ArgumentParser):
    p.add_argument("--N", type=int, help="particle count")
    p.add_argument("--d", type=int, default=1, help="dimension (default 1)")
    p.add_argument("--horizon", type=float, help="simulation horizon")
    p.add_argument("--dt-obs", type=float, default=None,
                   help="observation grid step (default: horizon)")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial", choices=["point", "gaussian", "explicit"], default="point")
    p.add_argument("--initial-scale", type=float, default=1.0)
    p.add_argument("--initial-count", type=int, default=None,
                   help="start with fewer particles than N")
    p.add_argument("--initial-file", type=str, default=None,
                   help="JSON file with explicit positions")
    p.add_argument("--manifest", type=str, default=None,
                   help="manifest JSON file; overrides flags when both given")
    p.add_argument("--out", type=str, default=".", help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (default: BBB_THREADS or 1)")


def _build_manifest(args, horizon_required: bool = True) -> RunManifest:
    if args.manifest:
        if args.N is not None or args.horizon is not None:
            print("warning: manifest file overrides command-line flags", file=sys.stderr)
        return RunManifest.from_json(Path(args.manifest).read_text())
    if args.N is None or (horizon_required and args.horizon is None):
        raise BbbError("missing --N/--horizon (or provide --manifest)")
    horizon = args.horizon if args.horizon is not None else 0.0
    dt_obs = args.dt_obs if args.dt_obs is not None else max(horizon, 1.0)
    positions = None
    if args.initial_file:
        positions = json.loads(Path(args.initial_file).read_text())
    initial = InitialCondition(
        kind=args.initial,
        positions=positions,
        scale=args.initial_scale,
        count=args.initial_count,
    )
    return RunManifest(N=args.N, d=args.d, horizon=horizon, dt_obs=dt_obs,
                       seed=args.seed, replicas=args.replicas, initial=initial)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("BBB_THREADS")
    return max(1, int(env)) if env else 1


def _fanout(worker, manifest: RunManifest, threads: int, *extra):
    """Run worker(manifest, *extra, r0, r1) over replica chunks, merged in order."""
    R = manifest.replicas
    if threads <= 1:
        return [worker(manifest, *extra, 0, R)]
    chunk = math.ceil(R / threads)
    ranges = [(a, min(a + chunk, R)) for a in range(0, R, chunk)]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(worker, manifest, *extra, a, b) for a, b in ranges]
        return [f.result() for f in futures]


def _stamp(manifest: RunManifest) -> str:
    return f"# manifest_sha256={manifest.hash()} seed={manifest.seed}\n"


def _write(outdir: str, name: str, text: str) -> Path:
    path = Path(outdir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _json_artifact(manifest: RunManifest, payload: dict) -> str:
    return json.dumps({
        "manifest": manifest.to_dict(),
        "manifest_sha256": manifest.hash(),
        **payload,
    }, indent=2)


# ---------------------------------------------------------------------------
# subcommands

def _cmd_simulate(args) -> int:
    manifest = _build_manifest(args)
    stamp = _stamp(manifest)
    if args.format == "jsonl":
        lines = []
        for r in range(manifest.replicas):
            traj = engine.simulate(manifest, manifest.replica_stream(r))
            lines.append(engine.trajectory_jsonl(traj, replica=r))
        _write(args.out, "trajectory.jsonl", "".join(lines))
        print(f"wrote trajectory.jsonl ({manifest.replicas} replicas)")
        return 0
    body, ev_body = [], []
    for r in range(manifest.replicas):
        traj = engine.simulate(manifest, manifest.replica_stream(r))
        csv_text = engine.trajectory_csv(traj, replica=r)
        ev_text = engine.events_csv(traj, replica=r)
        if r == 0:
            body.append(csv_text)
            ev_body.append(ev_text)
        else:
            body.append(csv_text.split("\n", 1)[1])
            ev_body.append(ev_text.split("\n", 1)[1])
    _write(args.out, "trajectory.csv", stamp + "".join(body))
    _write(args.out, "events.csv", stamp + "".join(ev_body))
    print(f"wrote trajectory.csv and events.csv ({manifest.replicas} replicas)")
    return 0


def _cmd_diffusivity(args) -> int:
    manifest = _build_manifest(args)
    parts = _fanout(stats.endpoint_displacements, manifest, _threads(args))
    disp = np.concatenate(parts, axis=0)
    sig = stats.estimate_sigma2(disp, manifest.horizon, seed=manifest.seed)
    drift = stats.drift_and_isotropy(disp, seed=manifest.seed)
    payload = {"sigma2": sig.to_dict(), "drift_and_isotropy": drift.to_dict()}
    _write(args.out, "diffusivity.json", _json_artifact(manifest, payload))
    print(f"sigma2 = {sig.estimate:.6f} +/- {sig.stderr:.6f}  (replicas={manifest.replicas})")
    return 0


def _cmd_extent_tails(args) -> int:
    manifest = _build_manifest(args)
    parts = _fanout(stats.extent_hitting_times, manifest, _threads(args),
                    args.L, args.from_time == "one")
    times = np.concatenate(parts)
    finite = times[np.isfinite(times)]
    report = stats.fit_tail(finite, seed=manifest.seed)
    rows = [_stamp(manifest) + "replica,hit_time"]
    rows += [f"{r},{'' if not np.isfinite(t) else repr(float(t))}" for r, t in enumerate(times)]
    _write(args.out, "hitting_times.csv", "\n".join(rows) + "\n")
    payload = {"L": args.L, "from": args.from_time, "unreached": int(np.isnan(times).sum()),
               "tail": report.to_dict()}
    _write(args.out, "tail.json", _json_artifact(manifest, payload))
    slope = report.estimate
    print(f"tail slope = {slope if slope is None else f'{slope:.4f}'}  "
          f"(hits {finite.size}/{times.size}, passed={report.passed})")
    return 0


def _cmd_collapse(args) -> int:
    raw = Path(args.config).read_bytes()
    cfg = json.loads(raw)
    cfg_hash = hashlib.sha256(raw).hexdigest()
    positions = np.asarray(cfg["positions"], dtype=float)
    if positions.ndim == 1:
        positions = positions.reshape(-1, 1)
    weights = cfg.get("weights", [1] * positions.shape[0])
    margin = unambiguity_margin(positions)
    try:
        trace = collapse(positions, weights)
    except AmbiguousConfigurationError as exc:
        payload = {"config_sha256": cfg_hash, "margin": margin, "error": str(exc),
                   "tying_pair": list(exc.pair), "weights": list(exc.weights)}
        _write(args.out, "collapse.json", json.dumps(payload, indent=2))
        print(f"rejected: {exc}", file=sys.stderr)
        return 1
    payload = {"config_sha256": cfg_hash, "margin": margin,
               "collapse_margin": collapse_margin(positions, weights),
               "trace": trace.to_dict(), "m": trace.m}
    _write(args.out, "collapse.json", json.dumps(payload, indent=2))
    print(f"collapse: branches={list(trace.sequence)} kills={list(trace.kills)} "
          f"m={trace.m} margin={margin:.6g}")
    return 0


def _cmd_unambiguity(args) -> int:
    raw = Path(args.configs).read_bytes()
    data = json.loads(raw)
    configs = data["configs"] if isinstance(data, dict) else data
    rows = [f"# config_sha256={hashlib.sha256(raw).hexdigest()}", "config_id,margin"]
    for i, c in enumerate(configs):
        x = np.asarray(c, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        rows.append(f"{i},{unambiguity_margin(x)!r}")
    _write(args.out, "margins.csv", "\n".join(rows) + "\n")
    print(f"wrote margins.csv ({len(configs)} configs)")
    return 0


def _cmd_minorization(args) -> int:
    manifest = _build_manifest(args, horizon_required=False)
    if args.x0_file:
        x0 = np.asarray(json.loads(Path(args.x0_file).read_text()), dtype=float)
        if x0.ndim == 1:
            x0 = x0.reshape(-1, 1)
    else:
        # default: particles evenly spread over an interval of length L along e1
        x0 = np.zeros((manifest.N, manifest.d))
        if manifest.N > 1:
            x0[:, 0] = np.linspace(0.0, args.L, manifest.N)
    boxes = None
    if args.boxes_file:
        boxes = [np.asarray(b, dtype=float) for b in json.loads(Path(args.boxes_file).read_text())]
    report = stats.minorization_check(
        manifest.N, args.L, args.t, x0, boxes=boxes,
        replicas=manifest.replicas, seed=manifest.seed,
    )
    _write(args.out, "minorization.json", _json_artifact(manifest, {"minorization": report.to_dict()}))
    n_ok = sum(1 for b in report.details["boxes"] if b["ok"])
    print(f"minorization: {n_ok}/{len(report.details['boxes'])} boxes pass, "
          f"gamma={report.details['gamma']:.6g}, passed={report.passed}")
    return 0


def _cmd_measure(args) -> int:
    manifest = _build_manifest(args)
    parts = _fanout(stats.endpoint_configurations, manifest, _threads(args))
    configs = np.concatenate([p[0] for p in parts], axis=0)
    lo = [args.lo] * manifest.d
    hi = [args.hi] * manifest.d
    bins = [args.bins] * manifest.d
    hist = stats.empirical_measure(list(configs), lo, hi, bins)
    half = len(configs) // 2
    l1 = None
    if half >= 1:
        h1 = stats.empirical_measure(list(configs[:half]), lo, hi, bins)
        h2 = stats.empirical_measure(list(configs[half:]), lo, hi, bins)
        l1 = stats.histogram_l1(h1, h2)
    _write(args.out, "measure.csv", _stamp(manifest) + hist.to_csv())
    payload = {"t": manifest.horizon, "split_half_l1": l1, "out_of_range": hist.n_out,
               "n_particles": hist.n_total}
    _write(args.out, "measure.json", _json_artifact(manifest, payload))
    print(f"wrote measure.csv (split-half L1 = {l1})")
    return 0


def _cmd_events(args) -> int:
    manifest = _build_manifest(args)
    if args.trajectory_csv:
        # supplied trajectory: only the first event is detectable (the second
        # needs lineage information that flat exports do not carry)
        traj = engine.trajectory_from_csv(
            Path(args.trajectory_csv).read_text(),
            Path(args.events_csv).read_text() if args.events_csv else None,
            manifest,
        )
        lines = []
        for t in traj.times():
            if not traj.has_time(t + 1.0):
                continue
            rep = detect_A(traj, float(t))
            lines.append(json.dumps(rep.to_dict()))
        _write(args.out, "events.jsonl", "\n".join(lines) + ("\n" if lines else ""))
        print(f"scanned {len(lines)} anchors of the supplied trajectory (A only)")
        return 0
    window = args.window if args.window is not None else manifest.horizon
    lines = []
    n_A = n_B = 0
    for r in range(manifest.replicas):
        rec = simulate_bbm_embedded(manifest, manifest.replica_stream(r), window,
                                    max_window=args.max_window)
        traj = rec.embedded_trajectory()
        anchors = [k * manifest.dt_obs for k in range(int(window / manifest.dt_obs) + 1)
                   if k * manifest.dt_obs + 2.0 <= window + 1e-9]
        for t in anchors:
            rep = detect_A(traj, t).merged(detect_B(rec, t))
            if rep.A_holds:
                n_A += 1
            if rep.B_holds:
                n_B += 1
            extra = {}
            if rep.A_holds and rep.B_holds:
                # when both events hold, every member at t+2 must descend
                # from the slot-0 member at t+1 (the queen)
                queen = rec.index_at(t + 1.0)[0]
                takeover = all(rec.ancestor_at(i, t + 1.0) == queen
                               for i in rec.index_at(t + 2.0))
                extra["queen_takeover"] = takeover
                if not takeover:
                    raise BbbError(
                        f"replica {r} anchor {t}: both events hold but the "
                        "population did not descend from the queen"
                    )
            lines.append(json.dumps({"replica": r, **rep.to_dict(), **extra}))
    _write(args.out, "events.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    print(f"scanned {len(lines)} anchors: A held {n_A} times, B held {n_B} times "
          "(these events are astronomically rare by design)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbb",
        description="Exact Monte Carlo for the barycentric branching-Brownian particle system.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="export trajectories and events")
    _add_manifest_flags(p)
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("diffusivity", help="barycenter diffusivity and drift/isotropy")
    _add_manifest_flags(p)
    p.set_defaults(fn=_cmd_diffusivity)

    p = sub.add_parser("extent-tails", help="extent hitting times and tail fit")
    _add_manifest_flags(p)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--from", dest="from_time", choices=["zero", "one"], default="zero")
    p.set_defaults(fn=_cmd_extent_tails)

    p = sub.add_parser("collapse", help="collapse a weighted configuration")
    p.add_argument("--config", required=True, help="JSON with positions (and weights)")
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(fn=_cmd_collapse)

    p = sub.add_parser("unambiguity", help="margins for a batch of configurations")
    p.add_argument("--configs", required=True, help="JSON list of position arrays")
    p.add_argument("--out", type=str, default=".")
    p.set_defaults(fn=_cmd_unambiguity)

    p = sub.add_parser("minorization", help="Gaussian lower-bound check")
    _add_manifest_flags(p)
    p.add_argument("--L", type=float, required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--x0-file", type=str, default=None)
    p.add_argument("--boxes-file", type=str, default=None)
    p.set_defaults(fn=_cmd_minorization)

    p = sub.add_parser("measure", help="empirical measure of the recentered cloud")
    _add_manifest_flags(p)
    p.add_argument("--lo", type=float, default=-4.0)
    p.add_argument("--hi", type=float, default=4.0)
    p.add_argument("--bins", type=int, default=16)
    p.set_defaults(fn=_cmd_measure)

    p = sub.add_parser("events", help="scan anchors for the regeneration events")
    _add_manifest_flags(p)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--max-window", type=float, default=10.0)
    p.add_argument("--trajectory-csv", type=str, default=None,
                   help="detect on a supplied trajectory export instead of simulating")
    p.add_argument("--events-csv", type=str, default=None)
    p.set_defaults(fn=_cmd_events)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BbbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
