"""``sst`` command line: cost, reach, segment, gradcheck, bench.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from sst import costmodel, tensor
from sst.attention import THREADS_ENV, AttentionConfig, sparse_attention
from sst.encoder import EncoderConfig, ObjectMaskSequence
from sst.gradcheck import gradcheck
from sst.patterns import PatternSpec, layer_specs, reachability
from sst.posenc import KINDS
from sst.segmenter import PipelineConfig, SyntheticVideoSpec, evaluate_iou, mean_iou, segment, synthesize_video
from sst.tensor import TensorFileError

DEFAULT_SEED = 0
VARIANT_CHOICES = ("grid", "strided", "local", "local_strided", "full", "dense")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def parse_dims(s: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(v) for v in s.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like TxHxW, got {s!r}") from None
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"dims must be three positive extents TxHxW, got {s!r}")
    return parts  # type: ignore[return-value]


def _common(p: argparse.ArgumentParser) -> None:
    # every flag defaults to None so config-file values can fill gaps
    p.add_argument("--config", help="JSON or key=value file; explicit flags win")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--dims", type=parse_dims, help="TxHxW")
    p.add_argument("--h", type=int, help="strided kernel")
    p.add_argument("--r", type=int, help="local window radius")
    p.add_argument("--layers", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--posenc", choices=KINDS)
    p.add_argument("--output", help="also write the report (segment: a directory of tensor files)")
    p.add_argument("--format", choices=("text", "json"))
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sst", description="Sparse spatiotemporal attention toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("cost", help="MAC and parameter table")
    _common(p)
    p.add_argument("--table1", action="store_true", help="3-frame buffer, 128 channels, 3 layers, 465x465 input")
    p.add_argument("--stride", type=int, help="backbone feature stride for --table1 (default 8)")
    p.add_argument("--split-heads", action="store_true", default=None,
                   help="charge multi-pattern variants per C/heads-channel head")

    p = sub.add_parser("reach", help="reachability closure report")
    _common(p)
    p.add_argument("--source", help="source cell t,y,x (default 0,0,0)")
    p.add_argument("--alternate", action="store_true", default=None,
                   help="one pattern component per layer instead of the head union")

    p = sub.add_parser("segment", help="propagate a reference mask through a clip")
    _common(p)
    p.add_argument("--synthetic", help="SyntheticVideoSpec JSON")
    p.add_argument("--embeddings", help="(C, T, H, W) tensor file")
    p.add_argument("--masks", help="(T, H, W) label tensor file; frame 0 is the reference")
    p.add_argument("--objects", type=int, help="generalized object count for --masks (default max label + 1)")
    p.add_argument("--tau", type=int, help="temporal buffer length (default 3)")
    p.add_argument("--init", choices=("routing", "random"), help="encoder weights (default routing)")

    p = sub.add_parser("gradcheck", help="finite-difference check of the attention backward pass")
    _common(p)
    p.add_argument("--trials", type=int)
    p.add_argument("--tolerance", type=float)

    p = sub.add_parser("bench", help="time the sparse attention forward pass")
    _common(p)
    p.add_argument("--repeats", type=int)
    return parser


def load_config(path: str) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line is not key=value: {line!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            data[k] = v
    if not isinstance(data, dict):
        raise ValueError("config must be a JSON object or key=value lines")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _coerce(key: str, value, action: argparse.Action | None):
    if action is None:
        raise ValueError(f"unknown config key {key!r}")
    if key == "dims" and isinstance(value, (list, tuple)):
        value = "x".join(str(v) for v in value)
    if isinstance(action, argparse._StoreTrueAction):
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    if action.type is not None and isinstance(value, str):
        value = action.type(value)
    elif action.type is int:
        value = int(value)
    elif action.type is float:
        value = float(value)
    if action.choices is not None and value not in action.choices:
        raise ValueError(f"config {key}={value!r} not in {list(action.choices)}")
    return value


def merge_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> argparse.Namespace:
    if not args.config:
        return args
    sub = parser._subparsers._group_actions[0].choices[args.command]  # type: ignore[union-attr]
    actions = {a.dest: a for a in sub._actions}
    for key, value in load_config(args.config).items():
        if key in ("config", "command"):
            continue
        coerced = _coerce(key, value, actions.get(key))
        if getattr(args, key) is None:
            setattr(args, key, coerced)
    return args


def _get(args, name, default):
    v = getattr(args, name, None)
    return default if v is None else v


def _spec(args, causal: bool = False) -> PatternSpec:
    variant = _get(args, "variant", "grid")
    variant = "full" if variant == "dense" else variant
    return PatternSpec(variant, h=args.h, r=_get(args, "r", 7), causal=causal)


def _emit(args, text: str, payload: dict) -> str:
    if _get(args, "format", "text") == "json":
        out = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    else:
        out = text
    sys.stdout.write(out)
    if args.output and args.command != "segment":
        Path(args.output).write_text(out)
    return out


def cmd_cost(args) -> int:
    if args.table1:
        dims = costmodel.table1_dims(stride=_get(args, "stride", 8))
        variants = list(costmodel.TABLE1_VARIANTS)
    else:
        T, H, W = _get(args, "dims", (3, 59, 59))
        dims = costmodel.CostDims(channels=_get(args, "channels", 128), T=T, H=H, W=W,
                                  layers=_get(args, "layers", 3))
        variants = [_get(args, "variant", "grid")]
        if variants[0] not in ("dense", "full"):
            variants.append("dense")
    kw = {k: getattr(args, k) for k in ("h", "heads", "layers", "channels") if getattr(args, k) is not None}
    if args.r is not None:
        kw["r"] = args.r
    if args.dims is not None and args.table1:
        kw.update(T=args.dims[0], H=args.dims[1], W=args.dims[2])
    dims = replace(dims, split_heads=bool(args.split_heads), **kw)
    reports = costmodel.cost_table(dims, variants)
    header = (f"dims: C={dims.channels} T={dims.T} H={dims.H} W={dims.W} L={dims.layers} "
              f"h={dims.h or 'floor(sqrt(H))'} r={dims.r} split_heads={dims.split_heads}\n")
    dense = next((r.attention for r in reports if r.variant in ("dense", "full")), None)
    payload = {
        "dims": {k: v for k, v in vars(dims).items()},
        "rows": [
            {"variant": r.variant, "attention_macs": r.attention, "projection_macs": r.projection,
             "ffn_macs": r.ffn, "total_macs": r.total, "params": r.params,
             "ratio_to_dense": round(r.attention / dense, 6) if dense else None}
            for r in reports
        ],
    }
    _emit(args, header + costmodel.format_table(reports), payload)
    return 0


def _parse_source(s: str | None) -> tuple[int, int, int]:
    if s is None:
        return (0, 0, 0)
    try:
        t, y, x = (int(v) for v in str(s).split(","))
    except ValueError:
        raise ValueError(f"--source must be t,y,x, got {s!r}") from None
    return (t, y, x)


def cmd_reach(args) -> int:
    spec = _spec(args)
    dims = _get(args, "dims", (2, 3, 4))
    specs = layer_specs(spec, _get(args, "layers", 3), alternate=bool(args.alternate))
    report = reachability(specs, dims, _parse_source(args.source))
    report.variant = spec.variant
    _emit(args, report.to_text(), report.to_dict())
    return 0


def _load_inputs(args):
    if args.synthetic:
        spec = SyntheticVideoSpec.from_json(args.synthetic)
        if args.channels is not None:
            spec = replace(spec, channels=args.channels)
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        return synthesize_video(spec)
    if not (args.embeddings and args.masks):
        raise UsageError("segment needs --synthetic or both --embeddings and --masks")
    emb = tensor.load(args.embeddings)
    raw = tensor.load(args.masks)
    labels = np.rint(raw).astype(np.int64)
    if raw.ndim != 3 or not np.array_equal(labels, raw):
        raise ValueError("masks must be a (T, H, W) tensor of integer labels")
    objects = args.objects if args.objects is not None else int(labels.max()) + 1
    return emb, ObjectMaskSequence(labels, objects)


def cmd_segment(args) -> int:
    emb, truth = _load_inputs(args)
    heads = _get(args, "heads", 2 if _get(args, "variant", "grid") == "strided" else 1)
    enc = EncoderConfig(
        layers=_get(args, "layers", 3),
        attention=AttentionConfig(heads=heads, pattern=_spec(args)),
        tau=_get(args, "tau", 3),
    )
    cfg = PipelineConfig(encoder=enc, posenc=_get(args, "posenc", "none"),
                         params=_get(args, "init", "routing"), seed=_get(args, "seed", DEFAULT_SEED))
    result = segment(emb, truth, cfg, threads=args.threads)
    frames = result.labels.shape[0]
    j = evaluate_iou(result.labels[1:], truth.labels[1:frames], objects=truth.objects) if frames > 1 else {}
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        tensor.save(out / "labels.sstt", result.labels.astype(np.float32))
        tensor.save(out / "scores.sstt", result.scores)
    lines = [f"frames: {frames}", f"objects: {truth.objects}"]
    lines += [f"object {o}: J = {v:.3f}" for o, v in j.items()]
    lines.append(f"mean J = {mean_iou(j):.3f}")
    payload = {"frames": frames, "objects": truth.objects,
               "J": {str(o): round(v, 6) for o, v in j.items()}, "mean_J": round(mean_iou(j), 6)}
    _emit(args, "\n".join(lines) + "\n", payload)
    return 0


def cmd_gradcheck(args) -> int:
    spec = _spec(args)
    if spec.variant in ("strided", "local_strided") and spec.h is None:
        spec = replace(spec, h=2)
    trials = _get(args, "trials", 20)
    tol = _get(args, "tolerance", 1e-4)
    dims = _get(args, "dims", (2, 3, 3))
    res = gradcheck(spec, trials=trials, channels=_get(args, "channels", 2), dims=dims,
                    seed=_get(args, "seed", DEFAULT_SEED))
    worst = [max(e[i] for e in res.errors) for i in range(3)]
    ok = res.max_error < tol
    text = (f"variant: {spec.variant}\ntrials: {trials}\n"
            f"max_rel_error Q: {worst[0]:.3e}\nmax_rel_error K: {worst[1]:.3e}\nmax_rel_error V: {worst[2]:.3e}\n"
            f"max_rel_error: {res.max_error:.3e}\ntolerance: {tol:.1e}\nresult: {'pass' if ok else 'FAIL'}\n")
    payload = {"variant": spec.variant, "trials": trials, "max_rel_error": float(f"{res.max_error:.6e}"),
               "per_input": {n: float(f"{w:.6e}") for n, w in zip("QKV", worst)},
               "tolerance": tol, "pass": ok}
    _emit(args, text, payload)
    return 0 if ok else 2


def cmd_bench(args) -> int:
    spec = _spec(args)
    T, H, W = _get(args, "dims", (3, 16, 16))
    c = _get(args, "channels", 32)
    repeats = max(5, _get(args, "repeats", 5))
    rng = np.random.default_rng(_get(args, "seed", DEFAULT_SEED))
    q, k, v = (rng.standard_normal((c, T, H, W)) for _ in range(3))
    sparse_attention(q, k, v, spec, threads=args.threads)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = sparse_attention(q, k, v, spec, threads=args.threads)
        times.append(time.perf_counter() - t0)
    digest = hashlib.sha256(out.values.tobytes()).hexdigest()[:16]
    macs = costmodel.attention_macs_per_layer(spec, costmodel.CostDims(channels=c, T=T, H=H, W=W, layers=1))
    text = (f"variant: {spec.variant}\ndims: {T}x{H}x{W}\nchannels: {c}\nrepeats: {repeats}\n"
            f"attention_macs: {macs}\noutput_sha256: {digest}\n")
    payload = {"variant": spec.variant, "dims": [T, H, W], "channels": c, "repeats": repeats,
               "attention_macs": macs, "output_sha256": digest}
    _emit(args, text, payload)
    # wall-clock varies run to run, so it stays off the report stream
    sys.stderr.write(f"median_seconds: {statistics.median(times):.6f}\n")
    return 0


COMMANDS = {"cost": cmd_cost, "reach": cmd_reach, "segment": cmd_segment,
            "gradcheck": cmd_gradcheck, "bench": cmd_bench}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args = merge_config(args, parser)
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"sst: error: {e}\n")
        return 1
    except (ValueError, TensorFileError, OSError, KeyError, TypeError, argparse.ArgumentTypeError) as e:
        sys.stderr.write(f"sst: error: {e}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
