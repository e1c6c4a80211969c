"""Command-line entry point.

Every subcommand reads and writes line-delimited JSON. Output files start with
a header record ``{"header": {...}}`` echoing the run configuration, its hash
and the seed; readers skip it. Data records are emitted sorted by
utterance_id. Failures exit with status 1 and print a JSON error record to
stderr.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from typing import Dict, Iterable, List, Optional, Tuple

from . import __version__
from .align import ALIGNERS, align_with, grid_from_record, grid_to_record
from .baselines import CANDIDATE_PREDICTOR, RANDOM, STRATEGIES, SelectionStrategy, rover_vote
from .core import (
    TOKENIZE_MODES,
    WHITESPACE,
    BeamSet,
    ErrorRate,
    RecordError,
    UndefinedRateError,
    beamset_from_record,
    beamset_to_record,
    detokenize,
    read_records,
    tokenize,
    wer,
    werr,
    write_record,
)
from .duration import UnalignableError, durations_to_record, grid_durations
from .noising import NoiseProfile, build_homophone_table, rng_for, simulate_beams
from .phonetics import Lexicon, default_lexicon, load_lexicon_file

logger = logging.getLogger("multicorrect")


class CliError(Exception):
    pass


def _config_header(command: str, config: dict, seed: Optional[int] = None) -> dict:
    blob = json.dumps({"command": command, "config": config}, sort_keys=True, ensure_ascii=False)
    return {
        "header": {
            "command": command,
            "config": config,
            "config_hash": hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16],
            "seed": seed,
            "version": __version__,
        }
    }


@contextlib.contextmanager
def _open_out(path: Optional[str]):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as f:
            yield f


@contextlib.contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as f:
            yield f


def _emit(path: Optional[str], header: dict, records: Iterable[dict]) -> int:
    recs = sorted(records, key=lambda r: r["utterance_id"])
    with _open_out(path) as out:
        write_record(out, header)
        for r in recs:
            write_record(out, r)
    return len(recs)


def _lexicon(path: Optional[str]) -> Lexicon:
    return load_lexicon_file(path) if path else default_lexicon()


def _unique(uid: str, seen: set, lineno: int):
    if uid in seen:
        raise RecordError(f"duplicate utterance_id {uid!r}", lineno)
    seen.add(uid)


def _read_beams(path: str, mode: str) -> List[BeamSet]:
    out, seen = [], set()
    with _open_in(path) as f:
        for lineno, rec in read_records(f):
            bs = beamset_from_record(rec, mode, lineno)
            _unique(bs.utterance_id, seen, lineno)
            out.append(bs)
    return out


def _read_texts(path: str, mode: str) -> Dict[str, Tuple[str, ...]]:
    """utterance_id -> tokens, from text records or from the reference of beam records."""
    out: Dict[str, Tuple[str, ...]] = {}
    with _open_in(path) as f:
        for lineno, rec in read_records(f):
            uid = rec.get("utterance_id")
            if not isinstance(uid, str):
                raise RecordError("missing or non-string 'utterance_id'", lineno)
            if uid in out:
                raise RecordError(f"duplicate utterance_id {uid!r}", lineno)
            text = rec["text"] if "text" in rec else rec.get("reference")
            if not isinstance(text, str):
                raise RecordError(f"{uid}: expected a 'text' or 'reference' string", lineno)
            out[uid] = tokenize(text, mode)
    return out


# --- subcommands -------------------------------------------------------------------


def cmd_align(args) -> int:
    lex = _lexicon(args.lexicon)
    recs = []
    for bs in _read_beams(args.input, args.mode):
        grid = align_with(bs, lex, args.method)
        recs.append(grid_to_record(bs.utterance_id, grid, bs.reference))
    cfg = {"input": args.input, "lexicon": args.lexicon, "mode": args.mode, "method": args.method}
    _emit(args.output, _config_header("align", cfg), recs)
    return 0


def cmd_noise(args) -> int:
    lex = _lexicon(args.lexicon)
    profile = NoiseProfile.load(args.profile)
    seed = profile.seed if args.seed is None else args.seed
    sentences = []
    with _open_in(args.input) as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                sentences.append((f"{args.prefix}{lineno:06d}", tokenize(line, args.mode)))
    vocab = set(lex.entries)
    if args.vocab in ("text", "both"):
        text_vocab = {t for _, s in sentences for t in s}
        vocab = text_vocab if args.vocab == "text" else vocab | text_vocab
    table = build_homophone_table(lex, args.max_distance, vocab=vocab)
    recs = []
    for uid, sent in sentences:
        bs = simulate_beams(sent, args.n, profile, table, rng_for(seed, uid), uid)
        recs.append(beamset_to_record(bs, args.mode))
    cfg = {
        "input": args.input,
        "profile": profile.to_dict(),
        "lexicon": args.lexicon,
        "n": args.n,
        "max_distance": args.max_distance,
        "mode": args.mode,
        "vocab": args.vocab,
    }
    _emit(args.output, _config_header("noise", cfg, seed), recs)
    return 0


def cmd_extract_durations(args) -> int:
    lex = _lexicon(args.lexicon)
    refs = _read_texts(args.references, args.mode) if args.references else {}
    recs, seen = [], set()
    with _open_in(args.input) as f:
        for lineno, rec in read_records(f):
            uid, grid, ref = grid_from_record(rec, lineno)
            _unique(uid, seen, lineno)
            if uid in refs:
                ref = refs[uid]
            if ref is None:
                raise RecordError(f"no reference for utterance {uid!r}", lineno)
            try:
                durs = grid_durations(grid.rows, ref, lex)
            except UnalignableError as exc:
                raise RecordError(f"{uid}: {exc}", lineno) from None
            recs.append(durations_to_record(uid, ref, durs))
    cfg = {"input": args.input, "references": args.references, "lexicon": args.lexicon, "mode": args.mode}
    _emit(args.output, _config_header("extract-durations", cfg), recs)
    return 0


def _load_json(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def cmd_train(args) -> int:
    import torch

    from .model import (
        CorrectionModel,
        ModelConfig,
        TrainConfig,
        Trainer,
        Vocab,
        load_checkpoint,
        make_examples,
        save_checkpoint,
    )

    torch.set_num_threads(1)
    lex = _lexicon(args.lexicon)
    corpus: List[BeamSet] = []
    for path in args.corpus:
        corpus.extend(_read_beams(path, args.mode))
    if not corpus:
        raise CliError("training corpus is empty")

    tdict = _load_json(args.train_config)
    if args.steps is not None:
        tdict["steps"] = args.steps
    if args.seed is not None:
        tdict["seed"] = args.seed
    if args.align is not None:
        tdict["align_method"] = args.align

    if args.resume:
        model, vocab, blob = load_checkpoint(args.resume)
        state = blob.get("trainer")
        if state is None:
            raise CliError(f"{args.resume}: checkpoint carries no trainer state")
        missing = sorted({t for bs in corpus for s in (*bs.candidates, bs.reference or ()) for t in s} - set(vocab.stoi))
        if missing:
            raise CliError(f"vocabulary mismatch: {len(missing)} corpus tokens are not in the checkpoint, e.g. {missing[:5]}")
        tcfg = TrainConfig.from_dict({**state["train_config"], **tdict})
    else:
        vocab = Vocab.build(corpus)
        mdict = _load_json(args.model_config)
        if "vocab_size" in mdict and mdict["vocab_size"] != len(vocab):
            raise CliError(f"vocabulary mismatch: config says {mdict['vocab_size']}, corpus has {len(vocab)}")
        mdict["vocab_size"] = len(vocab)
        model = CorrectionModel(ModelConfig.from_dict(mdict))
        tcfg = TrainConfig.from_dict(tdict)
        state = None

    examples = make_examples(corpus, lex, model.config.beam_n, tcfg.align_method)
    trainer = Trainer(model, vocab, examples, tcfg)
    if state is not None:
        trainer.restore(state)
    log_cm = open(args.log, "a" if args.resume else "w", encoding="utf-8") if args.log else contextlib.nullcontext()
    with log_cm as log:
        if log is not None and not args.resume:
            write_record(log, _config_header("train", {"model": asdict(model.config), "train": asdict(tcfg)}, tcfg.seed))
        trainer.run(log=log, every=args.log_every)
    save_checkpoint(args.checkpoint, model, vocab, trainer, extra={"align_method": tcfg.align_method, "mode": args.mode})
    return 0


def cmd_correct(args) -> int:
    import torch

    from .model import correct_batch, load_checkpoint

    torch.set_num_threads(1)
    try:
        model, vocab, blob = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {args.checkpoint}") from None
    lex = _lexicon(args.lexicon)
    method = args.align or blob.get("extra", {}).get("align_method", "scored")
    strategy = SelectionStrategy(args.strategy, seed=args.seed if args.strategy == RANDOM else None)
    beamsets = _read_beams(args.input, args.mode)
    results = correct_batch(model, vocab, beamsets, lex, strategy, method)
    recs = [
        {"utterance_id": r.utterance_id, "text": detokenize(r.text, args.mode), "chosen": r.chosen}
        for r in results
    ]
    cfg = {
        "checkpoint": args.checkpoint,
        "input": args.input,
        "strategy": args.strategy,
        "align": method,
        "lexicon": args.lexicon,
        "mode": args.mode,
    }
    _emit(args.output, _config_header("correct", cfg, args.seed), recs)
    return 0


def _first_beams(path: str, mode: str) -> Dict[str, Tuple[str, ...]]:
    return {bs.utterance_id: bs.candidates[0] for bs in _read_beams(path, mode)}


def cmd_eval(args) -> int:
    hyps = _read_texts(args.hyp, args.mode)
    refs = _read_texts(args.ref, args.mode)
    if set(hyps) != set(refs):
        only_h = sorted(set(hyps) - set(refs))[:5]
        only_r = sorted(set(refs) - set(hyps))[:5]
        raise CliError(f"utterance_id mismatch: hyp-only {only_h}, ref-only {only_r}")
    per_utt, total = [], ErrorRate(0, 0)
    for uid in sorted(refs):
        r = wer(hyps[uid], refs[uid])
        total = total + r
        per_utt.append({"utterance_id": uid, **r.to_dict()})
    report = {
        **_config_header("eval", {"hyp": args.hyp, "ref": args.ref, "baseline": args.baseline, "mode": args.mode}),
        "corpus": total.to_dict(),
        "utterances": per_utt,
    }
    if args.baseline:
        base = _first_beams(args.ref, args.mode) if args.baseline == "first-beam" else _read_texts(args.baseline, args.mode)
        if set(base) != set(refs):
            raise CliError("utterance_id mismatch between baseline and reference")
        btotal = ErrorRate(0, 0)
        for uid in refs:
            btotal = btotal + wer(base[uid], refs[uid])
        report["baseline"] = {"name": args.baseline_name or args.baseline, **btotal.to_dict()}
        try:
            report["werr"] = werr(btotal, total)
        except UndefinedRateError as exc:
            # reported, not fatal: the corpus WER is still meaningful
            report["werr"] = None
            report["werr_error"] = str(exc)
    with _open_out(args.output) as out:
        json.dump(report, out, indent=1, sort_keys=True, ensure_ascii=False)
        out.write("\n")
    return 0


def cmd_rover(args) -> int:
    recs, seen = [], set()
    with _open_in(args.input) as f:
        for lineno, rec in read_records(f):
            uid, grid, _ = grid_from_record(rec, lineno)
            _unique(uid, seen, lineno)
            recs.append({"utterance_id": uid, "text": detokenize(rover_vote(grid), args.mode)})
    _emit(args.output, _config_header("rover", {"input": args.input, "mode": args.mode}), recs)
    return 0


def cmd_experiment(args) -> int:
    from .experiment import ExperimentConfig, run_experiment

    cfg = ExperimentConfig(n_train=args.n_train, n_test=args.n_test, data_seed=args.data_seed, model_seed=args.seed)
    if args.steps is not None:
        cfg.train.steps = args.steps
    report = run_experiment(cfg, variants=args.variants.split(","))
    with _open_out(args.output) as out:
        json.dump(report, out, indent=1, sort_keys=True)
        out.write("\n")
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multicorrect", description="Multi-candidate ASR error correction toolkit.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    D = argparse.ArgumentDefaultsHelpFormatter

    def common(sp, lexicon=True):
        sp.add_argument("--mode", choices=TOKENIZE_MODES, default=WHITESPACE, help="tokenization of text fields")
        if lexicon:
            sp.add_argument("--lexicon", help="lexicon TSV (token<TAB>phonemes); bundled test lexicon if omitted")

    sp = sub.add_parser("align", help="align beam candidates into grids", formatter_class=D)
    sp.add_argument("--input", "-i", required=True, help="beam records")
    sp.add_argument("--output", "-o", default="-", help="grid records")
    sp.add_argument("--method", choices=ALIGNERS, default="scored")
    common(sp)
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("noise", help="synthesize noisy beam sets from reference text", formatter_class=D)
    sp.add_argument("--input", "-i", required=True, help="plain text, one reference sentence per line")
    sp.add_argument("--profile", required=True, help="JSON noise profile (target_wer, insertion, deletion, substitution, seed)")
    sp.add_argument("--output", "-o", default="-", help="beam records")
    sp.add_argument("-n", type=int, default=4, help="candidates per utterance")
    sp.add_argument("--max-distance", type=int, default=1, help="phoneme distance bound for homophone substitutes")
    sp.add_argument("--vocab", choices=("lexicon", "text", "both"), default="lexicon", help="draw pool for insertions")
    sp.add_argument("--seed", type=int, help="override the profile seed")
    sp.add_argument("--prefix", default="utt", help="utterance_id prefix (followed by the line number)")
    common(sp)
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("extract-durations", help="duration labels for every grid row", formatter_class=D)
    sp.add_argument("--input", "-i", required=True, help="grid records")
    sp.add_argument("--references", help="text or beam records; otherwise the grid records' own references")
    sp.add_argument("--output", "-o", default="-", help="duration records")
    common(sp)
    sp.set_defaults(func=cmd_extract_durations)

    sp = sub.add_parser("train", help="train a correction model", formatter_class=D)
    sp.add_argument("--corpus", nargs="+", required=True, help="beam records with references")
    sp.add_argument("--model-config", help="JSON ModelConfig overrides")
    sp.add_argument("--train-config", help="JSON TrainConfig overrides")
    sp.add_argument("--checkpoint", required=True, help="output checkpoint path")
    sp.add_argument("--log", help="training log (line-delimited JSON)")
    sp.add_argument("--log-every", type=int, default=10)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--steps", type=int, help="total step count (overrides the config)")
    sp.add_argument("--seed", type=int, help="training seed (overrides the config)")
    sp.add_argument("--align", choices=ALIGNERS, help="alignment used to build model inputs")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("correct", help="correct beam sets with a trained model", formatter_class=D)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", "-i", required=True, help="beam records")
    sp.add_argument("--output", "-o", default="-", help="text records")
    sp.add_argument("--strategy", choices=STRATEGIES, default=CANDIDATE_PREDICTOR)
    sp.add_argument("--seed", type=int, default=0, help="seed for the random strategy")
    sp.add_argument("--align", choices=ALIGNERS, help="defaults to the method the model was trained with")
    common(sp)
    sp.set_defaults(func=cmd_correct)

    sp = sub.add_parser("eval", help="corpus WER, WERR and per-utterance breakdown", formatter_class=D)
    sp.add_argument("--hyp", required=True, help="text records")
    sp.add_argument("--ref", required=True, help="text records or beam records with references")
    sp.add_argument("--baseline", help="text records to compare against, or 'first-beam' (taken from --ref beam records)")
    sp.add_argument("--baseline-name", help="label for the baseline in the report")
    sp.add_argument("--output", "-o", default="-", help="JSON report")
    common(sp, lexicon=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("rover", help="occurrence voting over grid records", formatter_class=D)
    sp.add_argument("--input", "-i", required=True, help="grid records")
    sp.add_argument("--output", "-o", default="-", help="text records")
    common(sp, lexicon=False)
    sp.set_defaults(func=cmd_rover)

    sp = sub.add_parser("experiment", help="synthetic end-to-end comparison of correction variants", formatter_class=D)
    sp.add_argument("--output", "-o", default="-", help="JSON report")
    sp.add_argument("--n-train", type=int, default=5000)
    sp.add_argument("--n-test", type=int, default=500)
    sp.add_argument("--steps", type=int, help="training steps per model")
    sp.add_argument("--data-seed", type=int, default=1234)
    sp.add_argument("--seed", type=int, default=0, help="model seed")
    sp.add_argument("--variants", default="multi,single,naive", help="comma list of multi,single,naive,augment")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (CliError, RecordError, UnalignableError, UndefinedRateError, ValueError, OSError, KeyError) as exc:
        err = {"error": {"type": type(exc).__name__, "message": str(exc), "command": args.command}}
        line = getattr(exc, "line", None)
        if line is not None:
            err["error"]["line"] = line
        sys.stderr.write(json.dumps(err, ensure_ascii=False) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
