"""Command line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error. stdout
carries data (JSONL, CSV); diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus as cp
from . import embed as em
from . import inference as inf
from . import stagehmm as sh
from . import topicseg as ts
from . import trainer as tr
from .mvs2s import ModelConfig, MultiViewModel, load_checkpoint, miniature_gradcheck
from .views import VIEW_KINDS


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; the contract here reserves 2 for data
    errors, so usage failures are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _out_stream(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _emit(text: str, path: str | None) -> None:
    stream, close = _out_stream(path)
    try:
        stream.write(text)
    finally:
        if close:
            stream.close()


# ---------------------------------------------------------------------------
# subcommands


def _cmd_ingest(args) -> int:
    convs = cp.ingest(args.input)
    lines = [json.dumps(cp.conversation_to_record(c)) for c in convs]
    _emit("\n".join(lines) + "\n", args.out)
    print(f"ingested {len(convs)} conversations", file=sys.stderr)
    return 0


def _cmd_stats(args) -> int:
    splits: dict[str, list[cp.Conversation]] = {}
    for spec in args.splits:
        if "=" in spec:
            name, path = spec.split("=", 1)
        else:
            name, path = Path(spec).stem, spec
        if name in splits:
            raise ValueError(f"duplicate split name {name!r}")
        splits[name] = cp.ingest(path)
    stats = cp.corpus_stats(splits)
    _emit(stats.to_csv(), args.out)
    return 0


def _fit_embeddings(convs, args) -> tuple[dict[str, em.EmbeddingMatrix], em.TfidfModel | None]:
    """Shared embedding source resolution for segment/train."""
    if args.vectors is not None:
        return em.load_external(args.vectors, convs), None
    model = em.fit_tfidf(convs, dim=args.dim, seed=args.seed)
    return em.embed_corpus(model, convs), model


def _cmd_embed(args) -> int:
    convs = cp.ingest(args.corpus)
    if args.mode == "tfidf":
        model = em.fit_tfidf(convs, dim=args.dim, seed=args.seed)
        embs = em.embed_corpus(model, convs)
        if args.model_out:
            model.save(args.model_out)
    else:
        if args.vectors is None:
            raise ValueError("--mode external requires --vectors")
        embs = em.load_external(args.vectors, convs)
    if args.out is None or args.out == "-":
        for emb in embs.values():
            rec = {"id": emb.id, "dim": int(emb.matrix.shape[1]),
                   "vectors": emb.matrix.tolist()}
            sys.stdout.write(json.dumps(rec) + "\n")
    else:
        em.save_embeddings(embs, args.out)
    print(f"embedded {len(embs)} conversations", file=sys.stderr)
    return 0


def _cmd_hmm_train(args) -> int:
    embs = em.load_external(args.embeddings)
    obs = [e.matrix for e in embs.values()]
    model, history = sh.em_fit(
        sh.init_hmm(obs, args.states), obs, max_iter=args.max_iter, tol=args.tol
    )
    model.save(args.out)
    print(
        f"fit {args.states}-state model in {len(history)} iterations, "
        f"final log-likelihood {history[-1]:.4f}",
        file=sys.stderr,
    )
    return 0


def _cmd_segment(args) -> int:
    convs = cp.ingest(args.corpus)
    embs, _ = _fit_embeddings(convs, args)
    cfg = ts.C99Config(window=args.window, std_coeff=args.std_coeff,
                       max_segments=args.max_segments)
    hmm = None
    if args.view == "stage":
        if args.hmm is None:
            raise ValueError("--view stage requires --hmm")
        hmm = sh.HmmModel.load(args.hmm)
    lines = []
    for conv in convs:
        emb = embs[conv.id]
        if args.view == "topic":
            blocks = ts.topic_view(conv, emb, cfg)
        else:
            blocks = sh.stage_view(conv, emb, hmm).blocks
        lines.append(json.dumps(
            {"id": conv.id, "view": args.view, "blocks": [list(b) for b in blocks]}
        ))
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _resolve(args, file_cfg: dict[str, str], key: str, cast, default):
    """flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in file_cfg:
        return cast(file_cfg[key])
    return default


def _cmd_train(args) -> int:
    convs = cp.ingest(args.corpus)
    view_kinds = tuple(k.strip() for k in args.views.split(",") if k.strip())
    for kind in view_kinds:
        if kind not in VIEW_KINDS:
            raise ValueError(f"unknown view kind {kind!r}")

    file_cfg = tr.load_config_file(args.config) if args.config else {}

    def geti(key, default):
        return int(_resolve(args, file_cfg, key, int, default))

    def getf(key, default):
        return float(_resolve(args, file_cfg, key, float, default))

    vocab = cp.build_vocab(
        convs, max_size=geti("vocab_size", 8000), min_freq=geti("min_freq", 1)
    )
    embs, tfidf = _fit_embeddings(convs, args)

    blocks_by_kind: dict[str, dict[str, tuple]] = {}
    c99 = ts.C99Config(window=args.window, std_coeff=args.std_coeff)
    if "topic" in view_kinds:
        blocks_by_kind["topic"] = {
            c.id: ts.topic_view(c, embs[c.id], c99) for c in convs
        }
    hmm = None
    if "stage" in view_kinds:
        obs = [embs[c.id].matrix for c in convs]
        hmm, _ = sh.em_fit(
            sh.init_hmm(obs, args.states), obs, max_iter=args.max_iter, tol=args.tol
        )
        blocks_by_kind["stage"] = {
            c.id: sh.stage_view(c, embs[c.id], hmm).blocks for c in convs
        }

    mcfg = ModelConfig(
        vocab_size=len(vocab),
        d_model=geti("d_model", 64),
        heads=geti("heads", 4),
        enc_layers=geti("enc_layers", 2),
        dec_layers=geti("dec_layers", 2),
        d_ff=geti("d_ff", 128),
        max_src_len=geti("max_src_len", 256),
        max_tgt_len=geti("max_tgt_len", 100),
        temperature=getf("temperature", 0.2),
        view_kinds=view_kinds,
        seed=geti("seed", 0),
    )
    tcfg = tr.TrainConfig(
        base_lr=getf("base_lr", 1e-3),
        aux_lr=getf("aux_lr", 3e-3),
        batch_size=geti("batch_size", 8),
        max_steps=geti("max_steps", 200),
        clip_norm=getf("clip_norm", 1.0),
        seed=geti("seed", 0),
        eval_every=geti("eval_every", 0),
    )

    examples = tr.build_examples(
        convs, vocab, view_kinds, blocks_by_kind,
        max_src_len=mcfg.max_src_len, max_tgt_len=mcfg.max_tgt_len,
    )
    model = MultiViewModel(mcfg)
    os.makedirs(args.out, exist_ok=True)
    result = tr.train(
        model, examples, tcfg,
        log_path=os.path.join(args.out, "loss.csv"),
        ckpt_dir=args.out,
    )
    segmenters = inf.Segmenters(c99=c99, hmm=hmm, tfidf=tfidf)
    inf.save_bundle(args.out, vocab, segmenters)
    print(
        f"trained {result.steps} steps, final loss {result.losses[-1]:.4f}; "
        f"wrote {args.out}",
        file=sys.stderr,
    )
    return 0


def _cmd_summarize(args) -> int:
    convs = cp.ingest(args.corpus)
    model = load_checkpoint(args.ckpt)
    vocab, segmenters = inf.load_bundle(args.ckpt)
    if args.vectors is not None:
        segmenters = inf.Segmenters(
            c99=segmenters.c99, hmm=segmenters.hmm, tfidf=segmenters.tfidf,
            external=em.load_external(args.vectors, convs),
        )
    if len(vocab) != model.cfg.vocab_size:
        raise ValueError(
            f"bundle vocabulary has {len(vocab)} entries, checkpoint expects "
            f"{model.cfg.vocab_size}"
        )
    weight_rows = []
    stream, close = _out_stream(args.out)
    try:
        for conv in convs:
            text = inf.summarize(
                conv, model, vocab, segmenters, beam=args.beam, max_len=args.max_len
            )
            stream.write(json.dumps({"id": conv.id, "summary": text}) + "\n")
            if args.weights_out:
                seqs = []
                from .views import build_view, render_view

                for kind in model.cfg.view_kinds:
                    blocks = inf.extract_blocks(conv, kind, segmenters)
                    view = build_view(conv, kind, blocks)
                    seqs.append(render_view(view, conv, vocab, model.cfg.max_src_len))
                weights = inf.mean_view_weights(model, seqs)
                weight_rows.append((conv.id, weights))
    finally:
        if close:
            stream.close()
    if args.weights_out:
        kinds = list(model.cfg.view_kinds)
        lines = ["id," + ",".join(kinds)]
        for cid, weights in weight_rows:
            lines.append(cid + "," + ",".join(f"{weights[k]:.6f}" for k in kinds))
        _emit("\n".join(lines) + "\n", args.weights_out)
    return 0


def _load_summaries(path: str, role: str) -> dict[str, str]:
    """id -> summary from JSONL; accepts both summarize output and canonical
    corpus records (whose summary field is used)."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{ln}: invalid JSON: {exc}") from exc
            if "id" not in rec or "summary" not in rec or rec["summary"] is None:
                raise ValueError(f"{path}:{ln}: {role} record needs id and summary")
            cid = str(rec["id"])
            if cid in out:
                raise ValueError(f"{path}:{ln}: duplicate id {cid!r}")
            out[cid] = str(rec["summary"])
    if not out:
        raise ValueError(f"{path}: no {role} records found")
    return out


def _cmd_evaluate(args) -> int:
    from .rouge import evaluate_corpus

    hyps = _load_summaries(args.hyp, "hypothesis")
    refs = _load_summaries(args.ref, "reference")
    report = evaluate_corpus(hyps, refs)
    _emit(report.to_csv(), args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    worst = miniature_gradcheck()
    print(f"worst relative gradient error: {worst:.3e}")
    if not np.isfinite(worst) or worst >= args.tol:
        print(f"gradient check failed at tolerance {args.tol:g}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# wiring


def _add_embed_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vectors", default=None,
                   help="external embedding JSONL (skips the tf-idf fit)")
    p.add_argument("--dim", type=int, default=64, help="tf-idf projection width")
    p.add_argument("--seed", type=int, default=0, help="projection seed")


def build_parser() -> _Parser:
    parser = _Parser(prog="mvsumm", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[], help="normalize a corpus to canonical JSONL")
    p.add_argument("input", help="JSON array or JSONL corpus file")
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(fn=_cmd_ingest)

    p = sub.add_parser("stats", help="per-split corpus statistics as CSV")
    p.add_argument("splits", nargs="+", metavar="NAME=PATH",
                   help="split files; bare paths use the file stem as name")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("embed", help="produce per-utterance embeddings JSONL")
    p.add_argument("corpus")
    p.add_argument("--mode", choices=("tfidf", "external"), default="tfidf")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vectors", default=None, help="external JSONL for --mode external")
    p.add_argument("--model-out", default=None, help="save the fitted tf-idf model")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("hmm-train", help="fit the stage model on embeddings")
    p.add_argument("embeddings", help="embeddings JSONL")
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", required=True, help="model JSON path")
    p.set_defaults(fn=_cmd_hmm_train)

    p = sub.add_parser("segment", help="emit view segmentations as JSONL")
    p.add_argument("corpus")
    p.add_argument("--view", choices=("topic", "stage"), required=True)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--std-coeff", type=float, default=1.0)
    p.add_argument("--max-segments", type=int, default=None)
    p.add_argument("--hmm", default=None, help="fitted stage model JSON")
    _add_embed_source(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("train", help="train a model end to end")
    p.add_argument("corpus")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--views", default="topic,stage", help="comma-separated view kinds")
    p.add_argument("--config", default=None, help="flat key = value file")
    _add_embed_source(p)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--std-coeff", type=float, default=1.0)
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    for key in ("vocab_size", "min_freq", "d_model", "heads", "enc_layers",
                "dec_layers", "d_ff", "max_src_len", "max_tgt_len",
                "batch_size", "max_steps", "eval_every"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int, default=None)
    for key in ("temperature", "base_lr", "aux_lr", "clip_norm"):
        p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float, default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("summarize", help="decode summaries for a corpus")
    p.add_argument("corpus")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--max-len", type=int, default=100)
    p.add_argument("--vectors", default=None, help="external embedding JSONL")
    p.add_argument("--weights-out", default=None,
                   help="write per-conversation mean view weights CSV")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_summarize)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--hyp", required=True, help="JSONL with id + summary")
    p.add_argument("--ref", required=True, help="JSONL with id + summary")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check on a tiny model")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(fn=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "fn", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.fn(args)
    except (ValueError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
