"""``ternkit`` command line: quantize, train, eval, generate, bench-matmul, inspect.

JSON reports go to stdout, logs to stderr. Any failure exits non-zero with a
one-line message.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import modelio
from .bench import bench_matmul, generation_benchmark
from .corpus import load_corpus
from .errors import TernkitError
from .kernels import KernelVariant, default_workers
from .model import BINARY, TERNARY, TinyLM
from .quantizer import DEFAULT_ITERATIONS, Int8Tensor
from .ternary import PackedTernaryMatrix, sparsity
from .training import TrainConfig, eval_perplexity, train, write_loss_log

log = logging.getLogger("ternkit")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def parse_layers(spec: str, m: TinyLM) -> list[int]:
    """``interior``, ``"1,2"`` or ``"1-3"`` -> list of layer indices."""
    if spec == "interior":
        return list(m.interior)
    out: list[int] = []
    try:
        for part in spec.split(","):
            part = part.strip()
            if "-" in part:
                a, b = part.split("-", 1)
                out.extend(range(int(a), int(b) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise ValueError(f"invalid layer spec {spec!r}") from None
    bad = [i for i in out if i not in m.interior]
    if bad or not out:
        raise ValueError(f"layer spec {spec!r} must select interior layers {list(m.interior)}")
    return sorted(set(out))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_init(args) -> int:
    hidden = tuple(int(h) for h in args.hidden.split(","))
    m = TinyLM.init(args.vocab, args.context, args.embed_dim, hidden, args.activation_clip, args.seed)
    n = modelio.save(m, args.output)
    _emit({"output": args.output, "bytes": n, "layers": len(m.layers)})
    return 0


def cmd_quantize(args) -> int:
    m = modelio.load_model(args.input)
    report_layers = []
    err_num, err_den = 0.0, 0
    if args.mode == "int8":
        q = m
    else:
        layers = parse_layers(args.layers, m)
        q = m.quantize(args.mode, args.iters, layers)
        for i in layers:
            if m.layers[i].quantized:
                continue
            diff = q.layers[i].effective_weights().astype(np.float64) - m.layers[i].latent
            err = float(np.mean(diff**2))
            err_num += err * diff.size
            err_den += diff.size
            codes = q.layers[i].codes()
            report_layers.append({
                "layer": i,
                "mode": args.mode,
                "sparsity": float(np.mean(codes == 0)),
                "quantization_error": err,
            })
    form = modelio.CHECKPOINT if args.checkpoint else modelio.DEPLOY
    n = modelio.save(q, args.output, form)
    _emit({
        "output": args.output,
        "bytes": n,
        "form": form,
        "iters": args.iters,
        "mode": args.mode,
        "layers": report_layers,
        "total_quantization_error": err_num / err_den if err_den else 0.0,
        "quantized_layers": len(report_layers),
    })
    return 0


def cmd_train(args) -> int:
    m = modelio.load_model(args.model)
    docs = load_corpus(args.corpus)
    cfg = TrainConfig(base_lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                      grad_accumulation=args.grad_accum, seed=args.seed)
    log.info("training %d documents with %s", len(docs), cfg)
    trained, logs = train(m, docs, cfg, max_steps=args.max_steps)
    n = modelio.save(trained, args.output, args.form)
    if args.loss_log:
        write_loss_log(logs, args.loss_log)
    _emit({
        "output": args.output,
        "bytes": n,
        "steps": len(logs),
        "final_loss": logs[-1].loss if logs else None,
        "config": cfg.to_dict(),
    })
    return 0


def sample_documents(docs: list[str], k: int | None, seed: int) -> list[str]:
    if k is None or k == len(docs):
        return list(docs)
    if k < 1 or k > len(docs):
        raise ValueError(f"--samples {k} but the corpus has {len(docs)} documents")
    idx = np.sort(np.random.default_rng(seed).choice(len(docs), size=k, replace=False))
    return [docs[i] for i in idx]


def cmd_eval(args) -> int:
    m = modelio.load_model(args.model)
    docs = sample_documents(load_corpus(args.corpus), args.samples, args.seed)
    mean, std = eval_perplexity(m, docs)
    _emit({"mean": mean, "std": std, "samples": len(docs), "seed": args.seed})
    return 0


def cmd_generate(args) -> int:
    m = modelio.load_model(args.model)
    ppl = None
    if args.corpus:
        ppl = eval_perplexity(m, load_corpus(args.corpus))
    threads = args.threads if args.threads is not None else default_workers()
    gen, report = generation_benchmark(
        m, args.prompt, args.tokens, args.variant, threads, args.runs,
        file_size_bytes=modelio.file_size_report(args.model)["total"], perplexity=ppl, seed=args.seed,
    )
    if report.near_tie_steps:
        log.warning("%d decoding steps had near-tied logits", report.near_tie_steps)
    _emit({"text": gen.text, "token_ids": gen.token_ids, "report": report.to_dict()})
    return 0


def cmd_bench_matmul(args) -> int:
    threads = args.threads if args.threads is not None else default_workers()
    report = bench_matmul(args.rows, args.cols, args.batch, args.variant, threads, args.reps, args.seed)
    sys.stdout.write(report.to_json() + "\n")
    return 0


def _scale_stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"min": float(v.min()), "max": float(v.max()), "mean": float(v.mean())}


def inspect_file(path) -> dict:
    mf = modelio.load(path)
    rows = []
    for i, rec in enumerate(mf.records):
        if isinstance(rec, PackedTernaryMatrix):
            entry = {"kind": "ternary", "rows": rec.rows, "cols": rec.cols, "bytes": rec.nbytes,
                     "sparsity": sparsity(rec), "scale": _scale_stats(rec.scales)}
        elif isinstance(rec, Int8Tensor):
            entry = {"kind": "int8", "rows": rec.rows, "cols": rec.cols, "bytes": rec.nbytes,
                     "scale": _scale_stats([rec.scale])}
        else:
            entry = {"kind": "dense", "rows": rec.shape[0], "cols": rec.shape[1], "bytes": rec.nbytes}
        entry["index"] = i
        rows.append(entry)
    return {"file": str(path), "records": rows, "size": modelio.file_size_report(path),
            "metadata": mf.metadata}


def cmd_inspect(args) -> int:
    info = inspect_file(args.model)
    if args.json:
        _emit(info)
        return 0
    out = [f"{'#':>3}  {'kind':<8}{'rows':>7}{'cols':>7}{'bytes':>10}  {'sparsity':>8}  scale(min/mean/max)"]
    for r in info["records"]:
        sp = f"{r['sparsity']:.4f}" if "sparsity" in r else "-"
        sc = r.get("scale")
        sc = f"{sc['min']:.4g}/{sc['mean']:.4g}/{sc['max']:.4g}" if sc else "-"
        out.append(f"{r['index']:>3}  {r['kind']:<8}{r['rows']:>7}{r['cols']:>7}{r['bytes']:>10}  {sp:>8}  {sc}")
    size = info["size"]
    out.append("size: " + ", ".join(f"{k}={v}" for k, v in size.items()))
    print("\n".join(out))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ternkit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("init", help="write a fresh full-precision TinyLM")
    s.add_argument("output")
    s.add_argument("--vocab", type=int, default=128)
    s.add_argument("--context", type=int, default=8)
    s.add_argument("--embed-dim", type=int, default=8)
    s.add_argument("--hidden", default="64,64,64")
    s.add_argument("--activation-clip", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("quantize", help="ternarize/binarize interior layers, int8 the rest")
    s.add_argument("input")
    s.add_argument("output")
    s.add_argument("--iters", type=int, default=DEFAULT_ITERATIONS)
    s.add_argument("--mode", choices=[TERNARY, BINARY, "int8"], default=TERNARY)
    s.add_argument("--layers", default="interior")
    s.add_argument("--checkpoint", action="store_true",
                   help="keep float latents and scales (trainable) instead of packing")
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("train", help="SGD fine-tuning with cosine annealing")
    s.add_argument("model")
    s.add_argument("corpus")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--loss-log")
    s.add_argument("--lr", type=float, default=TrainConfig.base_lr)
    s.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    s.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    s.add_argument("--grad-accum", type=int, default=TrainConfig.grad_accumulation)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--form", choices=[modelio.CHECKPOINT, modelio.DEPLOY], default=modelio.CHECKPOINT)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="perplexity mean/std over sampled documents")
    s.add_argument("model")
    s.add_argument("corpus")
    s.add_argument("--samples", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    variants = [v.value for v in KernelVariant]
    s = sub.add_parser("generate", help="greedy generation benchmark")
    s.add_argument("model")
    s.add_argument("--prompt", default="the ")
    s.add_argument("--tokens", type=int, default=50)
    s.add_argument("--variant", choices=variants, default=KernelVariant.DIRECT_TERNARY.value)
    s.add_argument("--threads", type=int)
    s.add_argument("--runs", type=int, default=1)
    s.add_argument("--corpus", help="also report perplexity on this corpus")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("bench-matmul", help="time one ternary matmul variant")
    s.add_argument("--rows", type=int, default=1024)
    s.add_argument("--cols", type=int, default=1024)
    s.add_argument("--batch", type=int, default=1)
    s.add_argument("--variant", choices=variants, default=KernelVariant.DIRECT_TERNARY.value)
    s.add_argument("--threads", type=int)
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench_matmul)

    s = sub.add_parser("inspect", help="per-record table of a TQ2F file")
    s.add_argument("model")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TernkitError, OSError, ValueError) as e:
        print(f"ternkit: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
