"""Command-line pipeline: mine, adapt, encode, decode, stats, ablate, init-embeddings.

Every command writes machine-readable JSON into ``--output-dir`` and prints a
plain-text table rendered from that same JSON (or the JSON itself with
``--json``). Exit codes: 0 success, 1 usage, 2 data integrity, 3 I/O.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
import tempfile
import warnings
from collections.abc import Sequence
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .cache import load_table, read_meta, save_table
from .config import (
    ENCODERS,
    PipelineConfig,
    load_config,
    load_grid,
    parse_bool,
    parse_list,
    parse_modes,
)
from .corpus import (
    CorpusIOError,
    Document,
    default_split,
    encode_corpus,
    load_documents,
    read_manifest,
    select_split,
    write_manifest,
)
from .embeddings import (
    InitKind,
    Role,
    build_patched_matrices,
    check_matrices,
    export_manifest,
    load_matrix,
    patch_matrix_file,
    write_matrix,
)
from .errors import CacheError, DataError, ParameterError, VocabAdaptError
from .miner import CandidateTable, mine
from .patching import PatchedVocab, measure_ids
from .selection import VocabPatch, build_patch
from .tokenizer import TokenizerDef, load_tokenizer, tokenizer_from_dict

PATCHED_FORMAT = "vocab-adapt-patched/1"
SELECT_KEYS = ("n_max", "min_freq", "words_only", "m", "scoring_mode", "selection_mode")
INIT_KEYS = ("strategy", "exponent_scale", "seed")


# -- rendering -----------------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.2f}"
    return str(v)


def render_kv(d: dict) -> str:
    """Two-column table of the scalar entries of a JSON object."""
    items = [(k, v) for k, v in d.items() if not isinstance(v, (dict, list))]
    width = max((len(k) for k, _ in items), default=0)
    return "\n".join(f"{k.ljust(width)}  {_fmt(v)}" for k, v in items)


def render_rows(rows: Sequence[dict], columns: Sequence[str]) -> str:
    cells = [[_fmt(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(x.ljust(w) for x, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def _emit(args, data: dict, table: str) -> None:
    if args.json:
        print(json.dumps(data, ensure_ascii=False, indent=1))
    else:
        print(table)


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


# -- shared plumbing ------------------------------------------------------------


def _config(args) -> PipelineConfig:
    overrides = {
        "tokenizer_path": getattr(args, "tokenizer", None),
        "corpus_dir": getattr(args, "corpus", None),
        "split_manifest": getattr(args, "split_manifest", None),
        "n_max": getattr(args, "n_max", None),
        "m": getattr(args, "m", None),
        "min_freq": getattr(args, "min_freq", None),
        "scoring_mode": getattr(args, "scoring_mode", None),
        "selection_mode": getattr(args, "selection_mode", None),
        "words_only": True if getattr(args, "words_only", False) else None,
        "strategy": getattr(args, "strategy", None),
        "exponent_scale": getattr(args, "exponent_scale", None),
        "seed": args.seed,
        "output_dir": args.output_dir,
        "threads": args.threads,
    }
    return load_config(args.config, **overrides)


def _require(value, flag: str):
    if value is None:
        raise ParameterError(f"{flag} is required (flag or config file)")
    return value


def _tokenizer(cfg: PipelineConfig) -> TokenizerDef:
    return load_tokenizer(_require(cfg.tokenizer_path, "--tokenizer"))


def _corpus(cfg: PipelineConfig) -> tuple[list[Document], dict[str, list[str]]]:
    docs = load_documents(_require(cfg.corpus_dir, "--corpus"))
    if cfg.split_manifest:
        manifest = read_manifest(cfg.split_manifest)
    else:
        manifest = default_split([d.doc_id for d in docs])
    return docs, manifest


def _cache_matches(meta: dict, cfg: PipelineConfig, tok_sha: str, corpus_sha: str) -> bool:
    return (
        meta.get("tokenizer_sha256") == tok_sha
        and meta.get("corpus_sha256") == corpus_sha
        and meta.get("n_max") == cfg.n_max
        and meta.get("min_freq") == cfg.min_freq
        and meta.get("words_only") == cfg.words_only
    )


def _mine_train(
    cfg: PipelineConfig,
    tok: TokenizerDef,
    docs: list[Document],
    manifest: dict,
    cache: Path | None = None,
    force: bool = False,
) -> tuple[CandidateTable, bool]:
    """Mine the train split, reusing ``cache`` when its fingerprints match.

    Returns the table and whether it came from the cache.
    """
    train = select_split(docs, manifest, "train")
    tok_sha, corpus_sha = tok.fingerprint(), train.fingerprint()
    if cache is not None and cache.exists():
        try:
            fresh = _cache_matches(read_meta(cache), cfg, tok_sha, corpus_sha)
        except (CacheError, ValueError):
            fresh = False
        if fresh:
            return load_table(cache), True
        if not force:
            raise CacheError(
                f"{cache} was mined from different inputs or settings; rerun with --force"
            )
    encoded = encode_corpus(tok, train.texts(), cfg.threads)
    table = mine(
        encoded,
        cfg.n_max,
        cfg.min_freq,
        words_only=cfg.words_only,
        tok=tok,
        shards=cfg.threads,
        threads=cfg.threads,
    )
    table.tokenizer_sha256, table.corpus_sha256 = tok_sha, corpus_sha
    return table, False


@contextmanager
def atomic_dir(out: Path, force: bool):
    """Yield a scratch directory that replaces ``out`` only if the block succeeds."""
    out = Path(out)
    if out.exists() and any(out.iterdir()) and not force:
        raise ParameterError(f"output directory {out} is not empty; use --force to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    os.replace(tmp, out)


def save_patched_tokenizer(tok: TokenizerDef, patch: VocabPatch, path: Path) -> None:
    data = {"format": PATCHED_FORMAT, "base_tokenizer": tok.to_dict(), "patch": patch.to_dict()}
    path.write_text(json.dumps(data, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def load_patched_tokenizer(path: str | Path) -> tuple[TokenizerDef, VocabPatch]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise CorpusIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(data, dict) or data.get("format") != PATCHED_FORMAT:
        raise DataError(f"{path}: not a patched tokenizer file")
    return tokenizer_from_dict(data["base_tokenizer"], str(path)), VocabPatch.from_dict(data["patch"])


def _patched_vocab(args, cfg: PipelineConfig, *, allow_identity: bool = True) -> PatchedVocab:
    if args.patched:
        tok, patch = load_patched_tokenizer(args.patched)
    else:
        tok = _tokenizer(cfg)
        if args.patch:
            try:
                patch = VocabPatch.load(args.patch)
            except OSError as e:
                raise CorpusIOError(f"cannot read patch {args.patch}: {e}") from e
        elif allow_identity:
            patch = VocabPatch.identity(tok, cfg.n_max)
        else:
            raise ParameterError("--patch or --patched is required")
    return PatchedVocab(tok, patch, check_source=not args.force)


def _write_matrices(
    in_path: Path, out_path: Path, patch: VocabPatch, cfg: PipelineConfig, tok, force: bool, dst: Path
) -> dict[str, Path]:
    E_in, E_out = load_matrix(in_path, Role.INPUT), load_matrix(out_path, Role.OUTPUT)
    check_matrices(E_in, E_out, patch, tok, force)
    strat = cfg.init_strategy()
    paths = {"input_embeddings": dst / "input_embeddings.avem", "lm_head": dst / "lm_head.avem"}
    if in_path.suffix == ".avem" and out_path.suffix == ".avem":
        del E_in, E_out
        patch_matrix_file(in_path, paths["input_embeddings"], patch, strat, role=Role.INPUT)
        patch_matrix_file(out_path, paths["lm_head"], patch, strat, role=Role.OUTPUT)
    else:
        new_in, new_out = build_patched_matrices(E_in, E_out, patch, strat, tok=tok, force=force)
        write_matrix(new_in, paths["input_embeddings"])
        write_matrix(new_out, paths["lm_head"])
    return paths


# -- commands ------------------------------------------------------------------


def cmd_mine(args) -> int:
    cfg = _config(args)
    tok = _tokenizer(cfg)
    docs, manifest = _corpus(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = out / "candidates.avct"
    table, cached = _mine_train(cfg, tok, docs, manifest, cache, args.force)
    if cached:
        print(f"{cache}: up to date", file=sys.stderr)
    else:
        save_table(table, cache)
    write_manifest(manifest, out / "split.json")
    summary = {
        "candidates": len(table),
        "corpus_tokens": table.total_tokens,
        "documents": len(manifest["train"]),
        "overlap_entries": int(len(table.data)),
        "n_max": table.n_max,
        "min_freq": table.min_freq,
        "words_only": table.words_only,
        "tokenizer_sha256": table.tokenizer_sha256,
        "corpus_sha256": table.corpus_sha256,
        "cache": cache.name,
        "config": cfg.stage_dict("n_max", "min_freq", "words_only"),
    }
    _write_json(out / "mine_summary.json", summary)
    _emit(args, summary, render_kv(summary))
    return 0


def cmd_adapt(args) -> int:
    cfg = _config(args)
    tok = _tokenizer(cfg)
    docs, manifest = _corpus(cfg)
    if bool(args.input_embeddings) != bool(args.output_embeddings):
        raise ParameterError("--input-embeddings and --output-embeddings go together")
    cache = Path(args.cache) if args.cache else None
    table, _ = _mine_train(cfg, tok, docs, manifest, cache, args.force)
    settings = cfg.stage_dict(*SELECT_KEYS)
    patch = build_patch(
        tok, table, cfg.m, cfg.selection_mode, cfg.scoring_mode, config=settings
    )
    out = Path(cfg.output_dir)
    with atomic_dir(out, args.force) as tmp:
        write_manifest(manifest, tmp / "split.json")
        patch.save(tmp / "patch.json")
        save_patched_tokenizer(tok, patch, tmp / "patched_tokenizer.json")
        paths: dict[str, Path] = {
            "patch": tmp / "patch.json",
            "patched_tokenizer": tmp / "patched_tokenizer.json",
        }
        if args.input_embeddings:
            paths.update(
                _write_matrices(
                    Path(args.input_embeddings),
                    Path(args.output_embeddings),
                    patch,
                    cfg,
                    tok,
                    args.force,
                    tmp,
                )
            )
        else:
            warnings.warn("no embedding matrices given; wrote patch and manifest only")
        export_manifest(
            patch,
            paths,
            tmp / "manifest.json",
            config={**settings, **cfg.stage_dict(*INIT_KEYS)},
        )
    summary = {
        "requested": cfg.m,
        "added": len(patch),
        "truncated": len(patch) < cfg.m,
        "candidates": len(table),
        "output_dir": str(out),
        "patch_sha256": patch.fingerprint(),
    }
    _emit(args, summary, render_kv(summary))
    return 0


def _read_input(path: str | None) -> str:
    if path is None or path == "-":
        return sys.stdin.read()
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CorpusIOError(f"cannot read {path}: {e}") from e


def cmd_encode(args) -> int:
    cfg = _config(args)
    pv = _patched_vocab(args, cfg)
    text = _read_input(args.input)
    units = pv.base.encode(text) if args.base else pv.encode(text, optimal=args.optimal)
    sys.stdout.write(" ".join(map(str, units)) + "\n")
    return 0


def cmd_decode(args) -> int:
    cfg = _config(args)
    pv = _patched_vocab(args, cfg)
    raw = _read_input(args.input).split()
    try:
        units = [int(x) for x in raw]
    except ValueError as e:
        raise DataError(f"unit ids must be integers: {e}") from None
    sys.stdout.write(pv.base.decode(units) if args.base else pv.decode(units))
    return 0


def cmd_stats(args) -> int:
    cfg = _config(args)
    pv = _patched_vocab(args, cfg)
    docs, manifest = _corpus(cfg)
    corpus = select_split(docs, manifest, args.split)
    encoded = encode_corpus(pv.base, corpus.texts(), cfg.threads)
    report = measure_ids(
        encoded,
        pv,
        split=args.split,
        doc_ids=[d.doc_id for d in corpus.documents],
        per_doc=args.per_doc,
    )
    report.config = {"split": args.split, "patch_sha256": pv.patch.fingerprint()}
    data = report.to_dict()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"stats_{args.split}.json", data)
    _emit(args, data, render_kv(data))
    return 0


ABLATION_COLUMNS = ("n", "m", "selection_mode", "encoder", "words_only", "added", "savings_pct",
                    "error")


def run_ablation(cfg: PipelineConfig, grid, tok: TokenizerDef, docs, manifest) -> list[dict]:
    """One row per grid cell; a failing cell records its error and the sweep continues."""
    test = select_split(docs, manifest, "test")
    test_enc = encode_corpus(tok, test.texts(), cfg.threads)
    rows = []
    for words_only in grid.words_only:
        for n in grid.n_values:
            cell_cfg = PipelineConfig(**{**cfg.to_dict(), "n_max": n, "words_only": words_only})
            try:
                table, _ = _mine_train(cell_cfg, tok, docs, manifest)
                mine_error = None
            except VocabAdaptError as e:
                table, mine_error = None, str(e)
            for m in grid.m_values:
                by_mode: dict[str, tuple] = {}
                for mode, encoder in grid.modes:
                    row = {"n": n, "m": m, "selection_mode": mode, "encoder": encoder,
                           "words_only": words_only, "added": None, "savings_pct": None,
                           "error": mine_error}
                    if table is not None:
                        try:
                            if mode not in by_mode:
                                with warnings.catch_warnings():
                                    warnings.simplefilter("ignore")
                                    patch = build_patch(tok, table, m, mode, cfg.scoring_mode)
                                report = measure_ids(test_enc, PatchedVocab(tok, patch))
                                by_mode[mode] = (len(patch), report)
                            added, report = by_mode[mode]
                            row["added"] = added
                            row["savings_pct"] = (
                                report.optimal_savings_pct
                                if encoder == "optimal"
                                else report.greedy_savings_pct
                            )
                        except VocabAdaptError as e:
                            row["error"] = str(e)
                    rows.append(row)
    return rows


def cmd_ablate(args) -> int:
    cfg = _config(args)
    overrides = {
        "n_values": parse_list(args.n_values, int) if args.n_values else None,
        "m_values": parse_list(args.m_values, int) if args.m_values else None,
        "modes": parse_modes(args.modes) if args.modes else None,
        "words_only": [parse_bool(v) for v in parse_list(args.words_only_values)]
        if args.words_only_values
        else None,
    }
    grid = load_grid(args.config, **overrides)
    tok = _tokenizer(cfg)
    docs, manifest = _corpus(cfg)
    rows = run_ablation(cfg, grid, tok, docs, manifest)
    data = {
        "grid": grid.to_dict(),
        "config": cfg.stage_dict("min_freq", "scoring_mode"),
        "rows": rows,
    }
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "ablation.json", data)
    _emit(args, data, render_rows(rows, ABLATION_COLUMNS))
    return 0


def cmd_init_embeddings(args) -> int:
    cfg = _config(args)
    try:
        patch = VocabPatch.load(args.patch)
    except OSError as e:
        raise CorpusIOError(f"cannot read patch {args.patch}: {e}") from e
    tok = _tokenizer(cfg) if cfg.tokenizer_path else None
    out = Path(cfg.output_dir)
    with atomic_dir(out, args.force) as tmp:
        paths = _write_matrices(
            Path(args.input_embeddings),
            Path(args.output_embeddings),
            patch,
            cfg,
            tok,
            args.force,
            tmp,
        )
        patch.save(tmp / "patch.json")
        paths["patch"] = tmp / "patch.json"
        manifest = export_manifest(
            patch, paths, tmp / "manifest.json", config=cfg.stage_dict(*INIT_KEYS)
        )
    summary = {
        "rows_initialized": len(patch),
        "strategy": cfg.strategy,
        "output_dir": str(out),
        "patch_sha256": manifest["source"]["patch_sha256"],
    }
    _emit(args, summary, render_kv(summary))
    return 0


# -- argument parsing ------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--output-dir", help="where artifacts are written")
    common.add_argument("--threads", type=int, help="worker count for encoding and mining")
    common.add_argument("--force", action="store_true",
                        help="overwrite outputs, ignore stale caches and fingerprint mismatches")
    common.add_argument("--seed", type=int, help="seed for random embedding init")
    common.add_argument("--json", action="store_true", help="print JSON instead of a table")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--tokenizer", help="base tokenizer JSON")
    data.add_argument("--corpus", help="directory of .txt files or one-document-per-line file")
    data.add_argument("--split-manifest", help="JSON {train: [...], test: [...]}")

    select = argparse.ArgumentParser(add_help=False)
    select.add_argument("--n-max", type=int)
    select.add_argument("--m", type=int, help="number of tokens to replace")
    select.add_argument("--min-freq", type=int)
    select.add_argument("--words-only", action="store_true",
                        help="only mine n-tokens inside a single word")
    select.add_argument("--scoring-mode", choices=["algorithm1", "footnote"])
    select.add_argument("--selection-mode", choices=["overlap_aware", "naive_greedy"])

    emb = argparse.ArgumentParser(add_help=False)
    emb.add_argument("--input-embeddings", help="input embedding matrix (.avem, .npy, raw .txt)")
    emb.add_argument("--output-embeddings", help="LM head matrix (.avem, .npy, raw .txt)")
    emb.add_argument("--strategy", choices=[k.value for k in InitKind])
    emb.add_argument("--exponent-scale", type=float)

    patched = argparse.ArgumentParser(add_help=False)
    patched.add_argument("--patch", help="vocab patch JSON (with --tokenizer)")
    patched.add_argument("--patched", help="patched tokenizer JSON written by adapt")

    p = _Parser(prog="vocab-adapt", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("mine", parents=[common, data, select], help="mine n-token candidates")
    s.set_defaults(func=cmd_mine)

    s = sub.add_parser("adapt", parents=[common, data, select, emb],
                       help="mine, select and write the patch, matrices and manifest")
    s.add_argument("--cache", help="candidate cache from 'mine' to reuse if fresh")
    s.set_defaults(func=cmd_adapt)

    for name, func, what in (("encode", cmd_encode, "text to unit ids"),
                             ("decode", cmd_decode, "unit ids to text")):
        s = sub.add_parser(name, parents=[common, data, select, patched], help=what)
        s.add_argument("--input", help="input file (default: stdin)")
        s.add_argument("--base", action="store_true", help="use the unpatched tokenizer")
        if name == "encode":
            s.add_argument("--optimal", action="store_true", help="minimum-unit segmentation")
        s.set_defaults(func=func)

    s = sub.add_parser("stats", parents=[common, data, select, patched],
                       help="token savings of a patch on a corpus split")
    s.add_argument("--split", default="test", choices=["train", "test"])
    s.add_argument("--per-doc", action="store_true")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("ablate", parents=[common, data, select], help="savings over a grid")
    s.add_argument("--n-values", help="comma list, e.g. 2,3,4")
    s.add_argument("--m-values", help="comma list, e.g. 1000,10000")
    s.add_argument("--modes", help=f"comma list of mode:encoder, encoder in {ENCODERS}")
    s.add_argument("--words-only-values", help="comma list of booleans")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("init-embeddings", parents=[common, data, emb],
                       help="initialize recycled embedding rows for a patch")
    s.add_argument("--patch", required=True)
    s.set_defaults(func=cmd_init_embeddings)
    return p


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    old = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return args.func(args)
    except VocabAdaptError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    finally:
        warnings.showwarning = old


if __name__ == "__main__":
    sys.exit(main())
