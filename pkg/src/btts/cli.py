"""``btts`` command line.

Exit status: 0 success, 1 usage or config error, 2 data error. Progress
and the resolved config go to stderr; results go to the named files
(short summaries are also printed on stdout).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import corpus as corp
from . import evaluation as ev
from .config import ConfigError, ResolvedConfig, load_config
from .model import SynthesisError, forward, init_params, synthesize
from .signal import SignalError
from .textnorm import (NumberFormatError, UnknownCharacterError, Vocabulary, build_vocabulary,
                       encode, normalize)
from .textnorm.rules import LexiconError
from .toy import bundled_dir
from .training import (CheckpointError, TrainingError, TrainState, export_alignment,
                       load_checkpoint, train)
from .wav import WavFormatError, write_wav

log = logging.getLogger("btts")

DATA_ERRORS = (corp.CorpusError, ev.EvaluationError, CheckpointError, TrainingError, WavFormatError,
               LexiconError, NumberFormatError, UnknownCharacterError, SynthesisError, SignalError,
               OSError, UnicodeDecodeError)

VOCAB_FILE = "vocab.txt"

# fields that may differ from a checkpoint's stored config at inference time
_INFERENCE_MODEL_FIELDS = {"seed", "max_decoder_steps", "stop_threshold", "stop_patience"}
_INFERENCE_SIGNAL_FIELDS = {"griffin_lim_iters"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _resolve_path(value: str, name: str) -> Path:
    """``toy`` stands for the bundled toy corpus file of that kind."""
    if value == "toy":
        return bundled_dir() / name
    return Path(value)


def _config(args, base: Optional[ResolvedConfig] = None) -> ResolvedConfig:
    path = _resolve_path(args.config, "toy.cfg") if args.config else None
    cfg = load_config(path, args.set or [], base=base)
    sys.stderr.write("# resolved config\n" + cfg.echo())
    return cfg


def _metadata(args):
    return corp.load_metadata(_resolve_path(args.metadata, "metadata.csv"))


# subcommands

def cmd_normalize(args) -> int:
    if (args.text is None) == (args.input is None):
        raise UsageError("normalize: give exactly one of --text or --in")
    lines = [args.text] if args.text is not None else \
        Path(args.input).read_text(encoding="utf-8").splitlines()
    out = "".join(normalize(line).text + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
        log.info("wrote %d line(s) to %s", len(lines), args.out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_stats(args) -> int:
    utts = _metadata(args)
    if args.filter:
        kept = corp.filter_by_length(utts)
        log.info("length filter kept %d of %d utterances", len(kept), len(utts))
        utts = kept
    st = corp.compute_stats(utts)
    rows = [
        ("total_sentences", st.total_sentences), ("total_words", st.total_words),
        ("total_unique_words", st.total_unique_words), ("min_words", st.min_words),
        ("max_words", st.max_words), ("avg_words", ev.round_half_up(st.avg_words)),
        ("total_duration", corp.format_duration(st.total_duration)),
        ("avg_duration", ev.round_half_up(st.avg_duration)),
    ]
    text = "".join(f"{k},{v}\n" for k, v in rows)
    if args.out:
        Path(args.out).write_text("field,value\n" + text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_prepare(args) -> int:
    cfg = _config(args)
    utts = corp.filter_by_length(_metadata(args))
    if not utts:
        raise corp.CorpusError("no utterances survive the length filter")
    cache = Path(args.cache)
    cache.mkdir(parents=True, exist_ok=True)
    vocab = build_vocabulary([u.normalized_text for u in utts])
    vocab.save(cache / VOCAB_FILE)
    paths = corp.prepare_corpus(utts, cfg.signal, cfg.model.reduction_r, cache, workers=args.workers)
    log.info("cached %d utterance(s) in %s (vocabulary %d symbols)", len(paths), cache, len(vocab))
    return 0


def _save_alignment(state: TrainState, example, base: Path) -> None:
    from .plotting import alignment_image

    out = forward(example.char_ids, state.params, teacher_mel=example.mel)
    export_alignment(out.alignment, base)
    alignment_image(out.alignment, base.with_suffix(".png"), title=f"step {state.step}")


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state = load_checkpoint(args.resume)
        base = ResolvedConfig(state.signal_cfg, state.params.config, state.train_cfg)
        cfg = _config(args, base)
        if cfg.model != state.params.config or cfg.signal != state.signal_cfg:
            raise UsageError("train --resume: only train.* settings may change")
        state.train_cfg = cfg.train
        vocab = Vocabulary(state.vocab)
    else:
        cfg = _config(args)
        vocab = Vocabulary.load(Path(args.cache) / VOCAB_FILE)
        if len(vocab) > cfg.model.vocab_size:
            raise TrainingError(f"vocabulary has {len(vocab)} ids but model.vocab_size is {cfg.model.vocab_size}")
        state = TrainState(init_params(cfg.model), cfg.train, cfg.signal, vocab=vocab.chars)
    utts = corp.filter_by_length(_metadata(args))
    examples = corp.load_examples(utts, args.cache, vocab, cfg.signal, cfg.model.reduction_r)
    steps = args.steps if args.steps is not None else max(0, cfg.train.max_steps - state.step)
    log.info("training %d step(s) from step %d on %d example(s)", steps, state.step, len(examples))

    def on_checkpoint(st, path):
        log.info("checkpoint %s", path)
        if not args.no_plots:
            _save_alignment(st, examples[0], path.with_name(path.stem + "-alignment"))

    losses = train(state, examples, steps=steps, out_dir=out_dir,
                   log_path=out_dir / "train_log.csv", on_checkpoint=on_checkpoint)
    if losses:
        print(f"step {state.step} loss {losses[-1]:.6f}")
    return 0


def _inference_setup(args):
    state = load_checkpoint(args.checkpoint)
    stored = ResolvedConfig(state.signal_cfg, state.params.config, state.train_cfg)
    cfg = _config(args, stored)
    for name, mine, theirs, allowed in (("model", cfg.model, stored.model, _INFERENCE_MODEL_FIELDS),
                                        ("signal", cfg.signal, stored.signal, _INFERENCE_SIGNAL_FIELDS)):
        for f in fields(mine):
            if f.name not in allowed and getattr(mine, f.name) != getattr(theirs, f.name):
                raise UsageError(f"{name}.{f.name}: cannot differ from the checkpoint at inference")
    return state, cfg, Vocabulary(state.vocab)


def cmd_synthesize(args) -> int:
    state, cfg, vocab = _inference_setup(args)
    audio, out = synthesize(args.text, state.params, cfg.model, None, vocab, cfg.signal,
                            seed=cfg.model.seed, return_output=True)
    write_wav(args.out, audio)
    log.info("wrote %s: %.3f s, %d decoder step(s)", args.out, audio.duration, out.alignment.shape[0])
    if args.plot:
        from .plotting import alignment_image, spectrogram_image

        base = Path(args.out).with_suffix("")
        spectrogram_image(out.mel_out, f"{base}-mel.png", title="predicted mel")
        alignment_image(out.alignment, f"{base}-alignment.png")
    return 0


def cmd_align_export(args) -> int:
    state, cfg, vocab = _inference_setup(args)
    ids = encode(normalize(args.text), vocab)
    out = forward(ids, state.params.astype(np.float64), cfg.model, rng=np.random.default_rng(cfg.model.seed))
    csv_path, pgm_path = export_alignment(out.alignment, args.out)
    if not args.no_plots:
        from .plotting import alignment_image

        alignment_image(out.alignment, csv_path.with_suffix(".png"))
    log.info("wrote %s and %s", csv_path, pgm_path)
    return 0


def cmd_eval_mos(args) -> int:
    table = ev.read_ratings(_resolve_fixture(args.ratings, ev.RATINGS_FIXTURE))
    items = ev.per_item_mos(table)
    summary = ev.aggregate(items)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("waveform_id,mos\n")
            for item, v in zip(table.items, items.values):
                fh.write(f"{item},{v!r}\n")
            fh.write(f"ALL,{summary.mean!r}\n")
    if args.plot:
        from .plotting import score_plot

        score_plot(items.values, args.plot, ylabel="MOS", mean=summary.mean)
    log.info("%d item(s) x %d rater(s)", len(table.items), len(table.raters))
    print(f"MOS {ev.round_half_up(summary.mean)}")
    return 0


def cmd_eval_scores(args) -> int:
    lo, hi = (float(v) for v in args.range.split(","))
    scores = ev.read_scores(_resolve_fixture(args.scores, ev.PESQ_FIXTURE), args.label, (lo, hi))
    s = ev.aggregate(scores)
    line = f"{s.label},{s.mean!r},{s.std!r},{s.min!r},{s.max!r},{s.count}\n"
    if args.out:
        Path(args.out).write_text("label,mean,std,min,max,count\n" + line, encoding="utf-8")
    if args.plot:
        from .plotting import score_plot

        score_plot(scores.values, args.plot, ylabel=s.label, mean=s.mean)
    print(f"{s.label} mean {ev.round_half_up(s.mean)} std {ev.round_half_up(s.std)} "
          f"min {ev.round_half_up(s.min)} max {ev.round_half_up(s.max)} n {s.count}")
    return 0


def _resolve_fixture(value: str, fixture: Path) -> Path:
    return fixture if value == "fixture" else Path(value)


def cmd_chart(args) -> int:
    rows = []
    if args.ratings:
        table = ev.read_ratings(_resolve_fixture(args.ratings, ev.RATINGS_FIXTURE))
        rows.append((args.system, "MOS", ev.aggregate(ev.per_item_mos(table)).mean))
    if args.scores:
        scores = ev.read_scores(_resolve_fixture(args.scores, ev.PESQ_FIXTURE))
        rows.append((args.system, "PESQ", ev.aggregate(scores).mean))
    written = ev.export_chart_data(rows, args.out, include_comparison=args.fixtures)
    log.info("wrote %d row(s) to %s", len(written), args.out)
    if not args.no_plots:
        from .plotting import bar_chart

        base = Path(args.out).with_suffix("")
        for metric in sorted({m for _, m, _ in written}):
            png = bar_chart([(s, m, float(v)) for s, m, v in written], f"{base}-{metric.lower()}.png", metric)
            log.info("rendered %s", png)
    return 0


# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="btts", description="Bangla character-to-speech toolkit")
    p.add_argument("--version", action="version", version=f"btts {__version__}")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="flat section.key = value file ('toy' for the bundled one)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one setting")
        return sp

    sp = sub.add_parser("normalize", help="normalize raw text")
    sp.add_argument("--text")
    sp.add_argument("--in", dest="input", help="file with one raw sentence per line")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_normalize)

    sp = sub.add_parser("stats", help="corpus statistics")
    sp.add_argument("--metadata", required=True, help="id|raw|normalized file ('toy' for the bundled one)")
    sp.add_argument("--filter", action="store_true", help="apply the 4..11 word filter first")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_stats)

    sp = with_config(sub.add_parser("prepare", help="filter corpus and cache spectrogram targets"))
    sp.add_argument("--metadata", required=True)
    sp.add_argument("--cache", required=True)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_prepare)

    sp = with_config(sub.add_parser("train", help="train from a prepared cache"))
    sp.add_argument("--metadata", required=True)
    sp.add_argument("--cache", required=True)
    sp.add_argument("--out", required=True, help="directory for checkpoints and train_log.csv")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_train)

    sp = with_config(sub.add_parser("synthesize", help="text to 16-bit WAV"))
    sp.add_argument("--text", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--plot", action="store_true", help="also render mel and alignment PNGs")
    sp.set_defaults(func=cmd_synthesize)

    sp = with_config(sub.add_parser("align-export", help="attention alignment for a text"))
    sp.add_argument("--text", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", required=True, help="output base name (.csv, .pgm, .png)")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_align_export)

    sp = sub.add_parser("eval-mos", help="MOS from a ratings table")
    sp.add_argument("--ratings", required=True, help="waveform_id,rater_id,rating CSV ('fixture' for the bundled one)")
    sp.add_argument("--out")
    sp.add_argument("--plot", metavar="PNG")
    sp.set_defaults(func=cmd_eval_mos)

    sp = sub.add_parser("eval-scores", help="aggregate externally computed scores")
    sp.add_argument("--scores", required=True, help="waveform_id,score CSV ('fixture' for the bundled one)")
    sp.add_argument("--label", default="PESQ")
    sp.add_argument("--range", default="-0.5,4.5", help="declared lo,hi")
    sp.add_argument("--out")
    sp.add_argument("--plot", metavar="PNG")
    sp.set_defaults(func=cmd_eval_scores)

    sp = sub.add_parser("chart", help="system comparison chart data (CSV plus PNG bars)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ratings")
    sp.add_argument("--scores")
    sp.add_argument("--system", default="this")
    sp.add_argument("--fixtures", action="store_true", help="include the published comparison bars")
    sp.add_argument("--no-plots", action="store_true")
    sp.set_defaults(func=cmd_chart)
    for sp in sub.choices.values():
        sp.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="only warnings on stderr")
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage() + "btts: error: a subcommand is required")
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                            format="%(message)s", stream=sys.stderr, force=True)
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return 1
    except DATA_ERRORS as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
